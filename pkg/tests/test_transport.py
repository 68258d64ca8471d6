import csv

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fermizones.carriers import ZoneLabel
from fermizones.errors import InsufficientRange, UndeterminedLabel
from fermizones.lattice import ccc, flat_torus
from fermizones.transport import (OrbitSegments, chambers_estimate, fit_power_law, orbit_tensor,
                                  predict_sigma_limit, write_sigma_csv)

GENERIC_B = np.array([0.2, 0.9, 0.41])


def circle_segments(n=4000, omega=2 * np.pi):
    """Unit-speed velocity rotating at ``omega``; one period split into n segments."""
    edges = np.linspace(0.0, 2 * np.pi / omega, n + 1)
    dT = np.diff(edges)
    J = np.stack([np.sin(omega * edges[1:]) - np.sin(omega * edges[:-1]),
                  -np.cos(omega * edges[1:]) + np.cos(omega * edges[:-1])], axis=1) / omega
    return OrbitSegments(0.5 * (edges[1:] + edges[:-1]), dT, J, True, float(edges[-1]), 0.0)


@pytest.mark.parametrize("gamma", [1.0, 3.0, 10.0, 100.0])
def test_circular_orbit_matches_closed_form(gamma):
    # <v (x) (1/gamma) int v(-T) e^{-T/gamma} dT> = (1/2)/(1 + (omega gamma)^2) [[1, -wg], [wg, 1]]
    seg = circle_segments()
    w = 2 * np.pi
    s = orbit_tensor(seg, gamma)
    expect = 0.5 / (1 + (w * gamma) ** 2)
    sym = 0.5 * (s + s.T)
    assert np.allclose(sym, expect * np.eye(2), rtol=1e-4, atol=1e-12)
    assert abs(0.5 * (s[1, 0] - s[0, 1])) == pytest.approx(expect * w * gamma, rel=1e-4)


@given(st.integers(0, 10_000), st.floats(1.0, 100.0), st.booleans())
def test_orbit_tensor_symmetric_part_is_psd(seed, gamma, periodic):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 60))
    dT = rng.uniform(0.01, 2.0, n)
    T = np.cumsum(dT) - 0.5 * dT
    J = rng.normal(size=(n, 2)) * dT[:, None]
    seg = OrbitSegments(T, dT, J, periodic, float(dT.sum()), 0.0)
    s = orbit_tensor(seg, gamma)
    assert np.linalg.eigvalsh(0.5 * (s + s.T)).min() > -1e-10 * max(1.0, np.abs(s).max())


def test_constant_drift_is_reproduced_exactly():
    dT = np.full(500, 0.1)
    u = np.array([0.3, -0.7])
    seg = OrbitSegments(np.cumsum(dT) - 0.05, dT, np.outer(dT, u), False, 50.0, 0.0)
    for g in (1.0, 10.0):
        assert np.allclose(orbit_tensor(seg, g), np.outer(u, u), atol=1e-12)


def test_power_law_fit_synthetic():
    x = np.logspace(0, 2, 9)
    tensors = np.array([np.diag([3.0 / g, 0.5 / g]) for g in x])
    fit = fit_power_law(x, tensors)
    assert fit.exponents["norm"] == pytest.approx(-1.0, abs=0.01)
    assert fit.exponents["eig1"] == pytest.approx(-1.0, abs=0.01)
    assert fit.residuals["norm"] < 1e-12
    with pytest.raises(InsufficientRange):
        fit_power_law(x[:3], tensors[:3])
    with pytest.raises(InsufficientRange):
        fit_power_law(np.logspace(0, 1, 9), tensors)


def test_prediction_structure():
    B = np.array([0.3, 0.2, 1.0])
    p = predict_sigma_limit(ZoneLabel.integer([1, 2, 3]), B)
    assert abs(p.eta @ [1, 2, 3]) < 1e-12 and abs(p.eta @ B) < 1e-12
    assert np.linalg.matrix_rank(p.sigma0, tol=1e-12) == 1
    assert np.allclose(p.sigma0 @ p.eta_plane, 0.0, atol=1e-12)
    assert np.trace(p.sigma0) == pytest.approx(1.0)
    t = predict_sigma_limit(ZoneLabel.trivial(), B)
    assert not t.sigma0.any() and t.exponents == {"norm": -1.0}
    with pytest.raises(UndeterminedLabel):
        predict_sigma_limit(ZoneLabel.undetermined("wandering"), B)


def test_closed_orbits_decay_like_inverse_field():
    r = chambers_estimate(ccc(), 2.5, GENERIC_B, np.logspace(0, 2, 5), samples=8)
    fit = fit_power_law(r.omega_tau, r.tensors)
    assert fit.exponents["norm"] == pytest.approx(-1.0, abs=0.02)
    assert r.max_drift < 1e-8


def test_flat_torus_is_rank_one_along_prediction(tmp_path):
    B = np.array([0.3, 0.2, 1.0])
    r = chambers_estimate(flat_torus(), 0.0, B, np.logspace(0, 2, 5), samples=8)
    eig, _ = r.eigen()
    assert np.all(np.abs(eig[:, 1]) < 1e-10 * eig[:, 0])
    assert np.ptp(eig[:, 0]) < 1e-10 * eig[0, 0]
    p = predict_sigma_limit(ZoneLabel.integer([0, 0, 1]), B)
    assert np.all(r.kernel_angles(p.eta_plane) < 1e-6)
    write_sigma_csv(r, tmp_path / "s.csv", p.eta_plane)
    rows = list(csv.DictReader(open(tmp_path / "s.csv")))
    assert len(rows) == 5 and set(rows[0]) >= {"omega_tau", "eig1", "eig2", "kernel_angle_deg"}


def test_omega_tau_below_one_rejected():
    with pytest.raises(ValueError):
        chambers_estimate(ccc(), 2.5, GENERIC_B, [0.5, 1.0], samples=2)
