import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from _oracle import compare_section, random_section
from fermizones.errors import Stalled, StartNotOnSurface
from fermizones.lattice import ccc, flat_torus
from fermizones.tracer import (MagneticField, classify, detect_rational, hamiltonian_vector_field,
                               plane_frame, strip_fit, trace)

direction = st.tuples(*[st.floats(-1, 1, allow_nan=False)] * 3).map(np.array).filter(
    lambda v: np.linalg.norm(v) > 0.1)


@given(direction)
def test_plane_frame_is_right_handed(B):
    B = B / np.linalg.norm(B)
    e1, e2 = plane_frame(B)
    F = np.stack([e1, e2, B])
    assert np.allclose(F @ F.T, np.eye(3), atol=1e-12)
    assert np.allclose(np.cross(e1, e2), B, atol=1e-12)


def test_hamiltonian_field_is_tangent_to_level_and_plane():
    d = ccc()
    B = np.array([0.3, -0.2, 0.9])
    p = np.array([0.1, 0.37, 0.6])
    v = hamiltonian_vector_field(d, B, p)
    from fermizones.lattice import cartesian_gradient

    assert abs(v @ cartesian_gradient(d, p)) < 1e-12 and abs(v @ B) < 1e-12


def test_detect_rational():
    assert detect_rational([2, 4, 6]).tolist() == [1, 2, 3]
    assert detect_rational([0, 0, -1]).tolist() == [0, 0, 1]
    assert detect_rational([1, np.sqrt(2), np.pi]) is None
    assert MagneticField.from_vector([0.0, 3.0, 3.0]).is_rational
    with pytest.raises(ValueError):
        MagneticField.from_vector([0, 0, 0])


def test_separatrix_direction():
    # on the plane p3 = 1/4 the ccc level 0 is the pair of lines p1 +- p2 = 1/2
    tr = trace(ccc(), 0.0, [0, 0, 1], [0.25, 0.25, 0.25], budget=20)
    cls = classify(tr)
    assert tr.status == "closed" and tr.period.tolist() == [-1, 1, 0]
    assert cls.is_open
    assert np.allclose(cls.eta, np.array([-1, 1, 0]) / np.sqrt(2), atol=1e-6)


def test_flat_torus_orbits_are_periodic_lines():
    B = np.array([0.3, 0.2, 1.0])
    tr = trace(flat_torus(), 0.0, B, [0.1, 0.2, 0.25], budget=50)
    cls = classify(tr)
    assert cls.is_open and cls.width < 1e-10
    assert abs(cls.eta @ [0, 0, 1]) < 1e-12  # strip direction lies in the plane p3 = const
    assert np.all(tr.period @ np.array([0, 0, 1]) == 0)


def test_compact_orbits_on_small_pockets():
    d = ccc()
    tr = trace(d, 2.5, [0.2, 0.9, 0.41], [1 / 6, 0.0, 0.0], budget=50)
    assert tr.status == "closed" and not np.any(tr.period)
    assert classify(tr).is_compact


def test_stall_and_bad_start():
    # B along the flat direction: the level is the whole plane, no gradient in it
    with pytest.raises(Stalled) as exc:
        trace(flat_torus(), 0.0, [0, 0, 1], [0.1, 0.2, 0.25], budget=5)
    assert exc.value.trajectory is not None
    with pytest.raises(StartNotOnSurface):
        trace(ccc(), 2.5, [0.2, 0.9, 0.41], [0.5, 0.5, 0.5], budget=5)


@given(st.integers(0, 10_000))
def test_conservation_and_reversibility(seed):
    rng = np.random.default_rng(seed)
    d = ccc()
    B = rng.normal(size=3)
    p = rng.random(3)
    try:
        fwd = trace(d, 0.0, B, p, budget=30, check_closure=False, max_returns=0)
    except (StartNotOnSurface, Stalled):
        return
    assert fwd.eps_drift < 1e-8 and fwd.casimir_drift < 1e-8
    back = trace(d, 0.0, B, None, budget=fwd.arc_length, direction=-1, check_closure=False,
                 start_cartesian=fwd.points[-1], max_returns=0)
    assert np.linalg.norm(back.points[-1] - fwd.points[0]) < 1e-5


def test_strip_fit_line():
    s = np.linspace(0, 100, 2001)
    xy = np.stack([0.6 * s, 0.8 * s], axis=1)
    eta, width, extent = strip_fit(xy, s)
    assert np.allclose(eta, [0.6, 0.8]) and width < 1e-9 and extent == pytest.approx(80, rel=1e-3)


@pytest.mark.parametrize("seed", range(4))
def test_oracle_equivalence_sample(seed):
    rng = np.random.default_rng(seed)
    done = 0
    while done < 3:
        d, eps, B, c = random_section(rng)
        r = compare_section(d, eps, B, c, rng)
        if r is None:
            continue
        done += 1
        assert r["oracle_closed"] == r["tracer_closed"]
        assert r["hausdorff"] <= 2.0
        assert r["drift"] < 1e-8


def test_classification_undetermined_on_short_budget():
    tr = trace(ccc(), 0.0, [0.2, 0.9, 0.41], [0.1, 0.3, 0.6], budget=10, check_closure=False)
    cls = classify(tr, l_min=50.0)
    assert cls.kind == "undetermined" and cls.reason in ("budget", "wandering")
