"""End-to-end acceptance checks; each prints one PASS/FAIL line.

The N=64 zone scan is shared by criteria 1, 2, 3 and 8 and takes about
twenty minutes on one core.
"""

import collections

import numpy as np
import pytest

from _oracle import compare_section, random_section, random_surface
from conftest import record_acceptance
from fermizones.carriers import (ZoneLabel, carrier_analysis, coherent_class,
                                 label_from_asymptotics, sample_surface_points)
from fermizones.errors import Stalled, StartNotOnSurface
from fermizones.lattice import ccc, check_regular, energy_range, triangulate_level
from fermizones.quasi4 import theorem_check
from fermizones.tracer import classify, trace
from fermizones.transport import chambers_estimate, fit_power_law, predict_sigma_limit
from fermizones.zones import FOUR_PI, boundary_dimension, scan_sphere

pytestmark = pytest.mark.slow

LADDER = (100.0, 300.0, 900.0)
PHI = 0.5 * (1 + np.sqrt(5))
DRIFTS = collections.defaultdict(float)  # max conservation drift per criterion


def note_drift(name, value):
    DRIFTS[name] = max(DRIFTS[name], float(value))


@pytest.fixture(scope="session")
def ccc_map():
    return scan_sphere(ccc(), 0.0, 64, budgets=LADDER, seed=0)


@pytest.fixture(scope="session")
def zone_directions(ccc_map):
    """20 field directions deep inside integer zones, one per label.

    A cell qualifies when all its neighbours carry its label; labels are
    taken by number of such cells, a random qualifying cell for each.
    """
    keys = ccc_map.keys
    nb = ccc_map.grid.neighbours()
    inner = collections.defaultdict(list)
    for i, k in enumerate(keys):
        if k.startswith("m:") and all(keys[j] == k for j in nb[i]):
            inner[k].append(i)
    labels = sorted(inner, key=lambda k: (-len(inner[k]), k))
    rng = np.random.default_rng(0)
    out = []
    while len(out) < 20:
        k = labels[len(out) % len(labels)]
        cid = int(rng.choice(inner[k]))
        out.append((ZoneLabel.from_key(k), ccc_map.grid.directions[cid]))
    return out


@pytest.fixture(scope="session")
def zone_carriers(zone_directions):
    return [carrier_analysis(ccc(), 0.0, B, rng=np.random.default_rng(i))
            for i, (_, B) in enumerate(zone_directions)]


def tilt(B, deg, rng):
    """B rotated by ``deg`` degrees about a random axis orthogonal to it."""
    B = B / np.linalg.norm(B)
    a = rng.normal(size=3)
    a -= (a @ B) * B
    a /= np.linalg.norm(a)
    t = np.radians(deg)
    return np.cos(t) * B + np.sin(t) * a


# ---------------------------------------------------------------------------
# 1. measure identity


def test_c1_undetermined_area_decreases(ccc_map):
    lad = ccc_map.undetermined_by_budget()
    areas = [lad[S] for S in LADDER]
    assert all(b < a for a, b in zip(areas, areas[1:])), areas


@pytest.mark.xfail(strict=True, reason="zones of height > 12 and zone-boundary cells stay "
                                        "undetermined at S=900; see the decisions ledger")
def test_c1_measure_identity(ccc_map):
    lad = ccc_map.undetermined_by_budget()
    areas = [lad[S] for S in LADDER]
    decreasing = all(b < a for a, b in zip(areas, areas[1:]))
    total = ccc_map.mu0 + sum(ccc_map.measures().values())
    ok = decreasing and total >= 0.98 * FOUR_PI
    record_acceptance(1, ok, f"mu0 + sum mu_m = {total:.4f} sr = {total / FOUR_PI:.2%} of 4pi "
                             f"(need 98%); undetermined by budget "
                             + ", ".join(f"S={S:g}: {a:.4f}" for S, a in zip(LADDER, areas))
                             + f" (strictly decreasing: {decreasing})")
    assert ok


# ---------------------------------------------------------------------------
# 2. genus one and sign coherence


def test_c2_genus_one_and_coherent_classes(zone_carriers):
    bad = []
    for i, c in enumerate(zone_carriers):
        genus = [comp.genus for comp in c.components]
        z = coherent_class([comp.z for comp in c.components])
        if genus != [1] * len(genus) or z is None:
            # a violation must come from a stochastic direction
            if not c.stochastic:
                bad.append((i, genus, [comp.z for comp in c.components]))
    n = len(zone_carriers)
    record_acceptance(2, not bad and n == 20,
                      f"{n - len(bad)}/{n} zone directions have genus-1 carriers with classes "
                      f"+-z (or are stochastic with genus >= 2); violations {bad}")
    assert n == 20 and not bad


# ---------------------------------------------------------------------------
# 3. label consistency


def test_c3_homology_matches_label_and_is_stable(zone_directions, zone_carriers):
    d = ccc()
    rng = np.random.default_rng(3)
    bad_z, bad_stable = [], []
    for i in range(10):
        lab, B = zone_directions[i]
        c = zone_carriers[i]
        z = coherent_class([comp.z for comp in c.components])
        own = label_from_asymptotics(d, 0.0, B, rng=np.random.default_rng([3, i]))
        m = np.array(own.m) if own.is_integer else None
        if z is None or m is None or np.any(np.cross(z, m)) or own != lab:
            bad_z.append((i, lab.key, own.key, z))
        for k in range(20):
            lp = label_from_asymptotics(d, 0.0, tilt(B, 0.2, rng),
                                        rng=np.random.default_rng([3, i, k]))
            if lp != own:
                bad_stable.append((i, k, own.key, lp.key))
    ok = not bad_z and not bad_stable
    record_acceptance(3, ok, f"homology class parallel to label on {10 - len(bad_z)}/10 "
                             f"directions; {200 - len(bad_stable)}/200 perturbations of 0.2 deg "
                             f"keep the label; failures {bad_z + bad_stable}")
    assert ok


# ---------------------------------------------------------------------------
# 4. conductivity structure


def test_c4_conductivity_structure():
    d = ccc()
    Bt = np.array([0.2, 0.9, 0.41])
    rt = chambers_estimate(d, 2.5, Bt, np.logspace(0, 2, 9), samples=16)
    expo = fit_power_law(rt.omega_tau, rt.tensors).exponents["norm"]
    note_drift("transport", rt.max_drift)

    B = np.array([0.25, 0.25 * PHI, 1.0])
    lab = label_from_asymptotics(d, 0.0, B)
    wt = np.logspace(0, 2.5, 11)
    r = chambers_estimate(d, 0.0, B, wt, samples=48)
    note_drift("transport", r.max_drift)
    eig, _ = r.eigen()
    last = wt >= wt[-1] / 10 * (1 - 1e-12)
    top = eig[last, 0]
    change = float(np.ptp(top) / top.max())
    pred = predict_sigma_limit(lab, B)
    angle = float(r.kernel_angles(pred.eta_plane)[last].max())
    ok = expo <= -0.85 and lab.m == (0, 0, 1) and change < 0.05 and angle < 2.0
    record_acceptance(4, ok, f"trivial direction norm exponent {expo:.3f} (need <= -0.85); "
                             f"label {lab.key} at B=(0.25, 0.25phi, 1): top eigenvalue "
                             f"changes {change:.1e} relative over the last decade (need < 0.05), "
                             f"kernel within {angle:.2e} deg of m x B (need < 2)")
    assert expo <= -0.85
    assert lab.m == (0, 0, 1)
    assert change < 0.05 and angle < 2.0
    assert max(rt.max_drift, r.max_drift) < 1e-8


# ---------------------------------------------------------------------------
# 5. oracle equivalence


def test_c5_oracle_equivalence():
    rng = np.random.default_rng(5)
    results = []
    while len(results) < 50:
        d, eps, B, c = random_section(rng)
        r = compare_section(d, eps, B, c, rng)
        if r is not None:
            results.append(r)
            note_drift("oracle", r["drift"])
    agree = sum(r["oracle_closed"] == r["tracer_closed"] for r in results)
    haus = max(r["hausdorff"] for r in results)
    tr = trace(ccc(), 0.0, [0, 0, 1], [0.25, 0.25, 0.25], budget=20)
    note_drift("oracle", max(tr.eps_drift, tr.casimir_drift))
    eta = classify(tr).eta
    sep = float(min(np.linalg.norm(eta - s * np.array([1, -1, 0]) / np.sqrt(2)) for s in (1, -1)))
    ok = agree == 50 and haus <= 2.0 and sep < 1e-6
    record_acceptance(5, ok, f"{agree}/50 sections agree in classification, max windowed "
                             f"Hausdorff {haus:.3f} grid steps (need <= 2); separatrix direction "
                             f"off (1,-1,0)/sqrt2 by {sep:.1e}")
    assert ok


# ---------------------------------------------------------------------------
# 6. m = 4 theorem check


def test_c6_quasi4_theorem():
    rep = theorem_check(n_planes=10, per_plane=10, seed=0)
    counts = rep.counts()
    n = len(rep.components)
    only = set(counts) <= {"closed", "strip"}
    res = float(rep.hyperplane.residuals.max()) if rep.hyperplane is not None else np.inf
    for comp in rep.components:
        if comp.get("max_residual") is not None:
            note_drift("quasi4", comp["max_residual"])
    nvec = None if rep.hyperplane is None else rep.hyperplane.n.tolist()
    ok = n == 100 and only and res < 1e-3
    record_acceptance(6, ok, f"{n} components {counts}; integral normal n={nvec} with max "
                             f"residual {res:.2e} (need < 1e-3)")
    assert ok


# ---------------------------------------------------------------------------
# 7. conservation suite


def test_c7_conservation_and_reversibility():
    rng = np.random.default_rng(7)
    worst_back, worst_drift, done = 0.0, 0.0, 0
    while done < 100:
        d = random_surface(rng)
        lo, hi = energy_range(d, 24)
        eps = float(lo + (hi - lo) * rng.uniform(0.2, 0.8))
        if check_regular(d, eps, 32) < 0.2:
            continue
        p = sample_surface_points(triangulate_level(d, eps, 16), 1, rng)[0]
        B = rng.normal(size=3)
        try:
            fwd = trace(d, eps, B, p, budget=50, check_closure=False, max_returns=0)
            back = trace(d, eps, B, None, budget=fwd.arc_length, direction=-1,
                         check_closure=False, start_cartesian=fwd.points[-1], max_returns=0)
        except (Stalled, StartNotOnSurface):
            continue
        done += 1
        worst_drift = max(worst_drift, fwd.eps_drift, fwd.casimir_drift,
                          back.eps_drift, back.casimir_drift)
        worst_back = max(worst_back, float(np.linalg.norm(back.points[-1] - fwd.points[0])))
    note_drift("reversibility", worst_drift)
    worst = max(DRIFTS.values())
    ok = worst < 1e-8 and worst_back < 1e-4
    per = ", ".join(f"{k} {v:.1e}" for k, v in sorted(DRIFTS.items()))
    record_acceptance(7, ok, f"max drift {worst:.1e} (need < 1e-8; {per}); 100 reversed traces "
                             f"return within {worst_back:.1e} (need < 1e-4)")
    assert ok


# ---------------------------------------------------------------------------
# 8. fractal diagnostic (reported)


def test_c8_boundary_dimension_reported(ccc_map):
    bc = boundary_dimension(ccc_map)
    assert bc is not None and np.isfinite(bc.dimension)
    inside = 1.0 < bc.dimension < 2.0
    record_acceptance(8, True, f"reported: box-counting dimension {bc.dimension:.3f}, 95% band "
                               f"({bc.band[0]:.3f}, {bc.band[1]:.3f}), counts {bc.counts} at "
                               f"sides {bc.sizes}; "
                               + ("inside (1, 2)" if inside else "outside (1, 2), logged"))
