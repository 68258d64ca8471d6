"""Electron orbits: level curves of eps on planes orthogonal to B.

The flow dp/dt = grad eps x B preserves eps and the Casimir B.p, so every
orbit is a level curve of eps restricted to one plane B.q = c.  Tracing is
done in orthonormal plane coordinates (x, y) with q = origin + x e1 + y e2,
which keeps the Casimir exact; the energy is held by Newton projection after
every Runge-Kutta step.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import _kernels
from .errors import DegenerateLevel, Stalled, StartNotOnSurface
from .integers import nearest_primitive_direction
from .lattice import DispersionRelation, cartesian_gradient, energy_range, evaluate

DEFAULT_BUDGET = 500.0
W_MAX = 6.0
L_MIN = 50.0
STALL_SPEED = 1e-7
STALL_PATIENCE = 1e-3
CLOSURE_TOL = 1e-6
ALIGN_TOL = 0.999


@dataclass(frozen=True)
class MagneticField:
    direction: np.ndarray
    rational_tag: Optional[np.ndarray] = None

    @classmethod
    def from_vector(cls, v, q_max=100, tol=1e-9):
        v = np.asarray(v, dtype=float)
        n = np.linalg.norm(v)
        if n == 0:
            raise ValueError("zero magnetic field")
        u = v / n
        return cls(u, detect_rational(u, q_max, tol))

    @property
    def is_rational(self):
        return self.rational_tag is not None


def as_direction(B):
    if isinstance(B, MagneticField):
        return B.direction
    B = np.asarray(B, dtype=float)
    return B / np.linalg.norm(B)


def plane_frame(B):
    """Orthonormal (e1, e2) with e1 x e2 = B, chosen deterministically from B."""
    B = as_direction(B)
    ref = np.zeros(3)
    ref[int(np.argmin(np.abs(B)))] = 1.0
    e1 = np.cross(ref, B)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(B, e1)
    return e1, e2


def detect_rational(B, q_max=100, tol=1e-9):
    """Smallest-height primitive integer vector within angle ``tol`` of B, or None.

    Directions are compared in the Cartesian frame, i.e. for the cubic
    lattice the integer vector is read in lattice units.
    """
    if q_max < 1:
        raise ValueError("q_max must be >= 1")
    return nearest_primitive_direction(as_direction(B), q_max, tol)


def hamiltonian_vector_field(d: DispersionRelation, B, p):
    """grad eps(p) x B in Cartesian components (p in lattice coordinates)."""
    g = cartesian_gradient(d, p)
    return np.cross(g, as_direction(B))


@dataclass
class Trajectory:
    """Traced orbit in the covering space.

    ``points`` are Cartesian; ``xy`` the same points in the plane frame with
    origin at the projected start.  ``period`` is set only for closed orbits.
    ``returns`` lists integer translations u for which the orbit came back
    close to start + u (see :func:`fermizones._kernels.trace_plane`).
    """

    points: np.ndarray
    xy: np.ndarray
    s: np.ndarray
    eps_f: float
    B: np.ndarray
    casimir: float
    origin: np.ndarray
    frame: tuple
    status: str
    period: Optional[np.ndarray]
    eps_drift: float
    casimir_drift: float
    h_max: float
    budget: float
    direction: int = 1
    basis: np.ndarray = field(default_factory=lambda: np.eye(3))
    returns: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=np.int64))
    return_arc: np.ndarray = field(default_factory=lambda: np.zeros(0))
    return_dist: np.ndarray = field(default_factory=lambda: np.zeros(0))
    meta: dict = field(default_factory=dict)

    @property
    def arc_length(self):
        return float(self.s[-1])

    @property
    def closed(self):
        return self.status == "closed"

    @property
    def displacement(self):
        return self.points[-1] - self.points[0]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["s", "x", "y", "z"])
            for s, q in zip(self.s, self.points):
                w.writerow([repr(float(s))] + [repr(float(c)) for c in q])


_STATUS = {
    _kernels.STATUS_BUDGET: "budget",
    _kernels.STATUS_CLOSED: "closed",
    _kernels.STATUS_STALLED: "stalled",
    _kernels.STATUS_LOST: "lost",
}


def project_start(d: DispersionRelation, eps_f, p0, max_move=0.05):
    """Newton projection of a lattice point onto eps = eps_f (Cartesian metric)."""
    A = d.lattice.basis
    q = A @ np.asarray(p0, dtype=float)
    start = q.copy()
    for _ in range(50):
        p = d.lattice.inverse @ q
        r = evaluate(d, p) - eps_f
        if abs(r) < 1e-13:
            break
        g = cartesian_gradient(d, p)
        g2 = g @ g
        if g2 == 0:
            raise StartNotOnSurface(f"vanishing gradient at start {p0}")
        q = q - r * g / g2
    if abs(evaluate(d, d.lattice.inverse @ q) - eps_f) > 1e-10:
        raise StartNotOnSurface(f"projection of {p0} onto eps={eps_f} did not converge")
    if np.linalg.norm(q - start) > max_move:
        raise StartNotOnSurface(f"start {p0} is {np.linalg.norm(q - start):.3g} from the level")
    return q


def restricted_series(d: DispersionRelation, origin, e1, e2):
    """(w, t, a) of eps(origin + x e1 + y e2) as a 2-D trigonometric series."""
    kc = d.cartesian_k
    w = 2.0 * np.pi * np.stack([kc @ e1, kc @ e2], axis=1)
    t = 2.0 * np.pi * (kc @ origin) + d.phi
    return np.ascontiguousarray(w), np.ascontiguousarray(t), np.ascontiguousarray(d.a, dtype=float)


def trace(d: DispersionRelation, eps_f, B, p0, budget=DEFAULT_BUDGET, h_max=0.05,
          h_min=1e-5, angle_tol=0.1, direction=1, check_closure=True,
          stall_patience=STALL_PATIENCE, raise_on_stall=True, start_cartesian=None,
          return_radius=0.05, max_returns=256):
    """Trace the orbit through lattice point ``p0`` for at most ``budget`` arc length.

    Returns a :class:`Trajectory`.  A stall (speed below 1e-7 for longer than
    ``stall_patience``) raises :class:`Stalled` carrying the partial trajectory
    unless ``raise_on_stall`` is False.
    """
    Bd = as_direction(B)
    A = d.lattice.basis
    if start_cartesian is not None:
        q0 = np.asarray(start_cartesian, dtype=float)
    else:
        q0 = project_start(d, eps_f, np.mod(p0, 1.0))
    e1, e2 = plane_frame(Bd)
    w, t, a = restricted_series(d, q0, e1, e2)
    P = np.ascontiguousarray(np.stack([e1, e2], axis=1))
    lattice_map = np.ascontiguousarray(d.lattice.inverse @ P)
    lattice_base = np.ascontiguousarray(d.lattice.inverse @ q0)
    pts, s, status, period, max_res, rets, ret_arc, ret_dist = _kernels.trace_plane(
        0.0, 0.0, w, t, a, float(eps_f), float(direction), float(budget), float(h_max),
        float(h_min), float(angle_tol), STALL_SPEED, float(stall_patience), lattice_map,
        lattice_base, np.ascontiguousarray(A, dtype=float), P, CLOSURE_TOL, ALIGN_TOL,
        bool(check_closure), float(return_radius), int(max_returns))
    points = q0 + pts @ P.T
    c = float(Bd @ q0)
    lat = points @ d.lattice.inverse.T
    eps_drift = float(np.max(np.abs(evaluate(d, lat) - eps_f)))
    cas_drift = float(np.max(np.abs(points @ Bd - c)))
    status = _STATUS[status]
    traj = Trajectory(points, pts, s, float(eps_f), Bd, c, q0, (e1, e2), status,
                      period.copy() if status == "closed" else None, eps_drift, cas_drift,
                      float(h_max), float(budget), int(direction), np.array(A))
    traj.returns = rets
    traj.return_arc = ret_arc
    traj.return_dist = ret_dist
    if status == "stalled" and raise_on_stall:
        raise Stalled(f"orbit stalled at s={traj.arc_length:.4g} (separatrix?)", trajectory=traj)
    return traj


@dataclass(frozen=True)
class OrbitClass:
    kind: str  # "compact" | "open" | "undetermined"
    eta: Optional[np.ndarray] = None
    width: Optional[float] = None
    extent: Optional[float] = None
    reason: Optional[str] = None

    @property
    def is_open(self):
        return self.kind == "open"

    @property
    def is_compact(self):
        return self.kind == "compact"

    def to_json(self):
        return {
            "class": self.kind,
            "eta": None if self.eta is None else [float(v) for v in self.eta],
            "width": self.width,
            "extent": self.extent,
            "reason": self.reason,
        }


def strip_fit(xy, s, tail=0.8, spacing=0.05):
    """Total-least-squares line through the last ``tail`` of a plane curve.

    The curve is resampled uniformly in arc length first.  Returns
    (direction (2,), width, extent) with width the spread of perpendicular
    offsets and extent the spread along the line.
    """
    s0 = s[-1] * (1.0 - tail)
    n = max(int((s[-1] - s0) / spacing), 8)
    grid = np.linspace(s0, s[-1], n)
    px = np.interp(grid, s, xy[:, 0])
    py = np.interp(grid, s, xy[:, 1])
    pts = np.stack([px, py], axis=1)
    centred = pts - pts.mean(axis=0)
    _, _, vt = np.linalg.svd(centred, full_matrices=False)
    eta = vt[0]
    along = centred @ eta
    perp = centred @ np.array([-eta[1], eta[0]])
    # orient along the direction of travel
    if along[-1] < along[0]:
        eta = -eta
    return eta, float(perp.max() - perp.min()), float(along.max() - along.min())


def classify(traj: Trajectory, w_max=W_MAX, l_min=L_MIN):
    """Compact / open-stable / undetermined verdict for a traced orbit."""
    e1, e2 = traj.frame
    if traj.status == "closed":
        u = traj.period
        if not np.any(u):
            return OrbitClass("compact")
        t = traj.basis @ np.asarray(u, dtype=float)
        t2 = np.array([t @ e1, t @ e2])
        eta2 = t2 / np.linalg.norm(t2)
        _, width, extent = strip_fit(traj.xy, traj.s, tail=1.0)
        eta = eta2[0] * e1 + eta2[1] * e2
        return OrbitClass("open", eta, width, max(extent, float(np.linalg.norm(t2))), None)
    if traj.status in ("stalled", "lost"):
        return OrbitClass("undetermined", reason="stalled")
    eta2, width, extent = strip_fit(traj.xy, traj.s)
    eta = eta2[0] * e1 + eta2[1] * e2
    if width < w_max and extent > l_min:
        return OrbitClass("open", eta, width, extent)
    reason = "wandering" if width >= w_max else "budget"
    return OrbitClass("undetermined", eta, width, extent, reason)


def trajectory_summary(traj: Trajectory, cls: OrbitClass):
    return {
        "class": cls.kind,
        "reason": cls.reason,
        "eta": None if cls.eta is None else [float(v) for v in cls.eta],
        "width": cls.width,
        "period_vector": None if traj.period is None else [int(v) for v in traj.period],
        "drift": {"eps": traj.eps_drift, "casimir": traj.casimir_drift},
        "arc_length": traj.arc_length,
        "status": traj.status,
        "B": [float(v) for v in traj.B],
    }


def export_trajectory(traj: Trajectory, cls: OrbitClass, outdir, stem="trajectory"):
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    traj.to_csv(outdir / f"{stem}.csv")
    (outdir / f"{stem}.json").write_text(json.dumps(trajectory_summary(traj, cls), indent=2))


@dataclass
class ContourLine:
    xy: np.ndarray  # canonical plane coordinates (e1.q, e2.q)
    points: np.ndarray  # Cartesian
    closed: bool


def contour_oracle(d: DispersionRelation, eps_f, B, c, half_size=3.0, step=0.01):
    """Level curves of eps on the plane B.q = c inside a square window.

    Marching squares on a regular grid of the plane (scikit-image); the
    window is centred at c*B and uses the same plane frame as :func:`trace`,
    but the plane coordinates here are canonical: x = e1.q, y = e2.q.
    """
    from skimage import measure

    lo, hi = energy_range(d)
    if not (lo < eps_f < hi):
        raise DegenerateLevel(f"eps_F={eps_f} outside ({lo:.6g}, {hi:.6g})")
    Bd = as_direction(B)
    e1, e2 = plane_frame(Bd)
    n = int(round(2 * half_size / step)) + 1
    g = np.linspace(-half_size, half_size, n)
    X, Y = np.meshgrid(g, g, indexing="ij")
    q = c * Bd + X[..., None] * e1 + Y[..., None] * e2
    vals = evaluate(d, (q.reshape(-1, 3) @ d.lattice.inverse.T)).reshape(n, n)
    out = []
    for cont in measure.find_contours(vals, eps_f):
        xy = cont * (g[1] - g[0]) + g[0]
        pts = c * Bd + xy[:, :1] * e1 + xy[:, 1:] * e2
        closed = bool(np.allclose(cont[0], cont[-1]))
        # canonical coordinates: e1.q = x since origin c*B is orthogonal to e1, e2
        out.append(ContourLine(xy, pts, closed))
    return out
