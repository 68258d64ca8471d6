"""Tracer versus marching-squares comparison on one planar section."""

import numpy as np
from scipy.spatial import cKDTree

from fermizones.errors import StartNotOnSurface
from fermizones.lattice import DispersionRelation, check_regular, energy_range
from fermizones.tracer import contour_oracle, plane_frame, trace


def random_surface(rng):
    """3-5 cosine terms with small integer wave vectors and random phases."""
    n = int(rng.integers(3, 6))
    terms = []
    for axis in range(3):
        k = [0, 0, 0]
        k[axis] = 1
        terms.append((k, rng.uniform(0.5, 1.0), rng.uniform(0, 2 * np.pi)))
    for _ in range(n - 3):
        k = rng.integers(-1, 2, 3)
        if not k.any():
            k[0] = 1
        terms.append((k.tolist(), rng.uniform(0.1, 0.4), rng.uniform(0, 2 * np.pi)))
    return DispersionRelation.from_terms(terms)


def random_section(rng):
    """(surface, eps_f, B, c) with a regular level."""
    while True:
        d = random_surface(rng)
        lo, hi = energy_range(d, 24)
        eps = float(lo + (hi - lo) * rng.uniform(0.2, 0.8))
        if check_regular(d, eps, 32) < 0.2:
            continue
        B = rng.normal(size=3)
        B /= np.linalg.norm(B)
        return d, eps, B, float(rng.uniform(0, 1))


def compare_section(d, eps, B, c, rng, half=2.0, step=0.02):
    """Trace through a point of one marching-squares contour and compare.

    Returns None when the window holds no usable contour, else a dict with
    ``oracle_closed``, ``tracer_closed`` (null-homotopic loop inside the
    window), ``hausdorff`` (windowed, in grid steps) and ``drift``.
    """
    lines = [ln for ln in contour_oracle(d, eps, B, c, half, step) if len(ln.xy) >= 20]
    if not lines:
        return None
    line = lines[int(rng.integers(len(lines)))]
    q0 = line.points[int(rng.integers(len(line.xy)))]
    p0 = d.lattice.inverse @ q0
    seglen = np.linalg.norm(np.diff(line.xy, axis=0), axis=1).sum()
    budget = 1.2 * seglen + 2.0
    e1, e2 = plane_frame(B)
    try:
        fwd = trace(d, eps, B, p0, budget=budget, h_max=0.02)
    except StartNotOnSurface:
        return None
    pts = [fwd.points]
    drift = max(fwd.eps_drift, fwd.casimir_drift)
    null_closed = fwd.closed and not np.any(fwd.period)
    if not null_closed:
        bwd = trace(d, eps, B, p0, budget=budget, h_max=0.02, direction=-1)
        pts.append(bwd.points)
        drift = max(drift, bwd.eps_drift, bwd.casimir_drift)
    # the tracer starts from the copy of q0 in the unit cell
    A = d.lattice.basis
    shift = A @ np.rint(d.lattice.inverse @ (q0 - fwd.origin))
    P = np.concatenate(pts) + shift
    xy = np.stack([P @ e1, P @ e2], axis=1)
    tracer_closed = bool(null_closed and np.max(np.abs(xy)) < half)
    inner = half - 2 * step
    # tracer -> any oracle contour, and the chosen contour -> tracer, both windowed
    allc = np.concatenate([ln.xy for ln in contour_oracle(d, eps, B, c, half, step)])
    tin = xy[np.max(np.abs(xy), axis=1) < inner]
    cin = line.xy[np.max(np.abs(line.xy), axis=1) < inner]
    dist = 0.0
    if len(tin):
        dist = max(dist, float(cKDTree(allc).query(tin)[0].max()))
    if len(cin):
        dist = max(dist, float(cKDTree(xy).query(cin)[0].max()))
    return {"oracle_closed": line.closed, "tracer_closed": tracer_closed,
            "hausdorff": dist / step, "drift": drift}
