"""Level curves of 4-periodic functions on 2-planes.

A 2-plane in R^4 given by l1.x = c1, l2.x = c2 carries the restriction of a
function f on T^4, a quasiperiodic function of two variables.  Near a
rational pair (l1, l2) every level component should be either a closed curve
or an open curve confined to a strip, and the strip directions, lifted back
to R^4, should all lie in one integral hyperplane n.x = 0.  This module
traces the components, classifies them and fits n.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import _kernels
from .errors import RoundingFailed, Stalled, StartNotOnSurface
from .integers import integer_normal
from .tracer import ALIGN_TOL, CLOSURE_TOL, L_MIN, STALL_PATIENCE, STALL_SPEED, W_MAX, strip_fit

PLANE_TOL = 1e-12
PERTURB_DEG = 1.0


@dataclass(frozen=True)
class Periodic4:
    """f(x) = sum_i a_i cos(2 pi k_i . x + phi_i) on R^4 / Z^4."""

    k: np.ndarray
    a: np.ndarray
    phi: np.ndarray

    def __post_init__(self):
        k = np.atleast_2d(np.asarray(self.k, dtype=np.int64))
        if k.shape[1] != 4:
            raise ValueError("wave vectors must be integer 4-vectors")
        object.__setattr__(self, "k", k)
        object.__setattr__(self, "a", np.asarray(self.a, dtype=float).reshape(-1))
        object.__setattr__(self, "phi", np.asarray(self.phi, dtype=float).reshape(-1))
        if not (len(self.a) == len(self.phi) == len(k)):
            raise ValueError("k, a and phi must have the same length")

    @classmethod
    def from_terms(cls, terms):
        """``terms``: iterable of (k (4 ints), amplitude, phase)."""
        k, a, phi = zip(*[(list(t[0]), t[1], t[2]) for t in terms])
        return cls(np.array(k), np.array(a), np.array(phi))

    def value_grad(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return _kernels.eval_series_nd(np.ascontiguousarray(x), self.k.astype(float), self.a,
                                       self.phi)

    def to_json(self):
        return {"terms": [{"k": [int(v) for v in k], "a": float(a), "phi": float(p)}
                          for k, a, p in zip(self.k, self.a, self.phi)]}


def _plane_basis(l1, l2):
    """Orthonormal basis of ker(l1, l2), taken from the coordinate vectors in order.

    A coordinate plane therefore gets its coordinate axes as basis.
    """
    L = np.stack([l1, l2])
    _, s, vt = np.linalg.svd(L)
    if s[-1] < 1e-12 * s[0]:
        raise ValueError("covectors are linearly dependent")
    K = vt[2:].T  # (4, 2) orthonormal kernel basis
    proj = K @ K.T  # projector onto the kernel
    cols = proj.T  # projections of e_1..e_4
    order = np.argsort(-np.linalg.norm(cols, axis=1), kind="stable")[:2]
    order = np.sort(order)
    u = cols[order[0]] / np.linalg.norm(cols[order[0]])
    v = cols[order[1]] - (cols[order[1]] @ u) * u
    v /= np.linalg.norm(v)
    return np.stack([u, v], axis=1)


@dataclass(frozen=True)
class Quasi4Problem:
    """Level ``level`` of ``f`` on the plane l1.x = c[0], l2.x = c[1].

    ``base`` is the point of the plane closest to the origin and ``dirs``
    (4 x 2) an orthonormal basis of its direction space.
    """

    f: Periodic4
    l1: np.ndarray
    l2: np.ndarray
    c: tuple
    level: float
    base: np.ndarray = field(default=None)
    dirs: np.ndarray = field(default=None)

    def __post_init__(self):
        l1 = np.asarray(self.l1, dtype=float)
        l2 = np.asarray(self.l2, dtype=float)
        object.__setattr__(self, "l1", l1)
        object.__setattr__(self, "l2", l2)
        L = np.stack([l1, l2])
        if self.dirs is None:
            object.__setattr__(self, "dirs", _plane_basis(l1, l2))
        if self.base is None:
            base = np.linalg.lstsq(L, np.asarray(self.c, dtype=float), rcond=None)[0]
            object.__setattr__(self, "base", base)
        D = np.asarray(self.dirs, dtype=float)
        if np.max(np.abs(D.T @ D - np.eye(2))) > 1e-10 or np.max(np.abs(L @ D)) > 1e-10:
            raise ValueError("plane directions must be orthonormal and annihilated by l1, l2")

    def embed(self, xy):
        """R^4 points of plane coordinates ``xy`` (..., 2)."""
        return self.base + np.asarray(xy, dtype=float) @ self.dirs.T

    def to_json(self):
        return {"f": self.f.to_json(), "l1": self.l1.tolist(), "l2": self.l2.tolist(),
                "c": [float(v) for v in self.c], "level": float(self.level)}


@dataclass(frozen=True)
class RestrictedFunction:
    """f restricted to the plane as a 2-D trigonometric series."""

    w: np.ndarray
    t: np.ndarray
    a: np.ndarray

    def value_grad(self, xy):
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        arg = xy @ self.w.T + self.t
        val = np.cos(arg) @ self.a
        grad = -(np.sin(arg) * self.a) @ self.w
        return val, grad


def restrict(problem: Quasi4Problem) -> RestrictedFunction:
    """Chain rule through x = base + dirs @ (x, y)."""
    f = problem.f
    w = 2.0 * np.pi * (f.k @ problem.dirs)
    t = 2.0 * np.pi * (f.k @ problem.base) + f.phi
    return RestrictedFunction(np.ascontiguousarray(w), np.ascontiguousarray(t),
                              np.ascontiguousarray(f.a))


def plane_periods(problem: Quasi4Problem, max_height=50, tol=1e-9):
    """Integer vectors u (|u_i| <= max_height) in the direction space of the plane.

    u lies in the plane iff l1.u = l2.u = 0.  Two coordinates are enumerated
    and the other two solved for; the pair with the best conditioned solve is
    used.  The restriction is invariant under exactly these translations.
    """
    L = np.stack([problem.l1, problem.l2])
    best = None
    for i in range(4):
        for j in range(i + 1, 4):
            det = abs(np.linalg.det(L[:, [i, j]]))
            if best is None or det > best[0]:
                best = (det, i, j)
    _, i, j = best
    free = [x for x in range(4) if x not in (i, j)]
    r = np.arange(-max_height, max_height + 1)
    F1, F2 = np.meshgrid(r, r, indexing="ij")
    fr = np.stack([F1.ravel(), F2.ravel()], axis=1).astype(float)
    rhs = -(fr @ L[:, free].T)
    sol = np.linalg.solve(L[:, [i, j]], rhs.T).T
    near = np.all(np.abs(sol - np.round(sol)) < tol, axis=1)
    near &= np.all(np.abs(np.round(sol)) <= max_height, axis=1)
    out = np.zeros((int(near.sum()), 4), dtype=np.int64)
    out[:, free] = fr[near].astype(np.int64)
    out[:, [i, j]] = np.round(sol[near]).astype(np.int64)
    return out[np.any(out != 0, axis=1)]


# ---------------------------------------------------------------------------
# components


@dataclass(frozen=True)
class ComponentClass4:
    """Closed | Strip (eta4, width) | Undetermined."""

    kind: str  # "closed" | "strip" | "undetermined"
    eta4: Optional[np.ndarray] = None
    eta2: Optional[np.ndarray] = None
    width: Optional[float] = None
    extent: Optional[float] = None
    reason: Optional[str] = None

    def to_json(self):
        return {"class": self.kind,
                "eta4": None if self.eta4 is None else [float(v) for v in self.eta4],
                "width": self.width, "extent": self.extent, "reason": self.reason}


@dataclass
class Component4:
    xy: np.ndarray
    s: np.ndarray
    status: str
    period: Optional[np.ndarray]
    max_residual: float


_STATUS = {_kernels.STATUS_BUDGET: "budget", _kernels.STATUS_CLOSED: "closed",
           _kernels.STATUS_STALLED: "stalled", _kernels.STATUS_LOST: "lost"}


def max_line_deviation(xy, eta2):
    """Largest distance of the polyline from its best line along ``eta2``."""
    n = np.array([-eta2[1], eta2[0]])
    off = (xy - xy.mean(axis=0)) @ n
    mid = 0.5 * (off.max() + off.min())
    return float(np.max(np.abs(off - mid)))


def trace_component4(problem: Quasi4Problem, seed, budget=400.0, h_max=0.05, h_min=1e-6,
                     angle_tol=0.1, w_max=W_MAX, l_min=L_MIN):
    """Follow the level component through ``seed`` and classify it.

    ``seed`` is a plane point (2,) or an R^4 point (4,) that is projected
    orthogonally onto the plane first.  Returns (Component4, ComponentClass4).
    A strip's width is the spread of the whole polyline across its fitted
    line, so the confinement holds by construction and is re-checked by
    :func:`max_line_deviation`.
    """
    seed = np.asarray(seed, dtype=float)
    if seed.shape == (4,):
        seed = problem.dirs.T @ (seed - problem.base)
    r = restrict(problem)
    x, y, res = _kernels.project_to_level(seed[0], seed[1], r.w, r.t, r.a,
                                          float(problem.level), 1e-13, 50)
    if res > 1e-10 or np.hypot(x - seed[0], y - seed[1]) > 0.25:
        raise StartNotOnSurface(f"seed {seed.tolist()} does not project onto the level")
    eye = np.ascontiguousarray(np.eye(4))
    lattice_map = np.ascontiguousarray(problem.dirs)
    lattice_base = np.ascontiguousarray(problem.base + problem.dirs @ np.array([x, y]))
    pts, s, status, period, max_res, _, _, _ = _kernels.trace_plane(
        0.0, 0.0, r.w, r.t + r.w @ np.array([x, y]), r.a, float(problem.level), 1.0,
        float(budget), float(h_max), float(h_min), float(angle_tol), STALL_SPEED,
        STALL_PATIENCE, lattice_map, lattice_base, eye, lattice_map, CLOSURE_TOL, ALIGN_TOL,
        True, 0.0, 1)
    status = _STATUS[status]
    xy = pts + np.array([x, y])
    comp = Component4(xy, s, status, period.copy() if status == "closed" else None,
                      float(max_res))
    if status in ("stalled", "lost"):
        raise Stalled(f"component stalled at s={s[-1]:.4g} (in-plane critical point?)")
    return comp, classify_component4(problem, comp, w_max, l_min)


def classify_component4(problem, comp: Component4, w_max=W_MAX, l_min=L_MIN):
    D = problem.dirs
    if comp.status == "closed":
        if not np.any(comp.period):
            return ComponentClass4("closed")
        t4 = np.asarray(comp.period, dtype=float)
        t2 = D.T @ t4
        eta2 = t2 / np.linalg.norm(t2)
        width = 2.0 * max_line_deviation(comp.xy, eta2)
        return ComponentClass4("strip", D @ eta2, eta2, width, float(np.linalg.norm(t2)))
    eta2, _, extent = strip_fit(comp.xy, comp.s)
    width = 2.0 * max_line_deviation(comp.xy, eta2)
    if width < w_max and extent > l_min:
        return ComponentClass4("strip", D @ eta2, eta2, width, extent)
    reason = "wandering" if width >= w_max else "budget"
    return ComponentClass4("undetermined", D @ eta2, eta2, width, extent, reason)


# ---------------------------------------------------------------------------
# integral hyperplane


@dataclass
class HyperplaneFit:
    n: np.ndarray
    residuals: np.ndarray  # |n_hat . eta| per sample
    normal: np.ndarray  # unit normal of the fitted 3-space
    singular_values: np.ndarray

    def to_json(self):
        return {"n": [int(v) for v in self.n], "residuals": self.residuals.tolist(),
                "max_residual": float(self.residuals.max()),
                "normal": self.normal.tolist(),
                "singular_values": self.singular_values.tolist()}


def integral_hyperplane(etas, max_height=12, tol=1e-3, rank_tol=1e-6):
    """Primitive n in Z^4 with |n_hat . eta| < tol for every strip direction.

    The lifts must span three dimensions.  The fitted normal of their span is
    reported; n is the least-height primitive vector that passes the
    residual bound on every sample (equivalently a validated rounding of the
    normal).
    """
    E = np.atleast_2d(np.asarray(etas, dtype=float))
    if E.shape[1] != 4:
        raise ValueError("strip directions must be 4-vectors")
    E = E / np.linalg.norm(E, axis=1)[:, None]
    _, s, vt = np.linalg.svd(E, full_matrices=True)
    s = np.concatenate([s, np.zeros(4 - len(s))])
    if len(E) < 3 or s[2] < rank_tol * s[0]:
        raise RoundingFailed(f"strip directions span {int(np.sum(s > rank_tol * s[0]))} "
                             "dimension(s); three independent lifts are needed",
                             candidate=None, residual=None)
    normal = vt[3]
    n, res, best = integer_normal(E, max_height, tol)
    if n is None:
        raise RoundingFailed(f"no primitive normal of height <= {max_height} within {tol}; "
                             f"best {best.tolist()} with residual {res:.3g}",
                             candidate=best, residual=res)
    nh = n / np.linalg.norm(n)
    return HyperplaneFit(n, np.abs(E @ nh), normal, s)


# ---------------------------------------------------------------------------
# theorem check


def designated_problem():
    """Four-term f and rational pair used for the theorem check.

    f = cos 2pi x1 + 0.3 cos(2pi(x1 + x2) + 0.4) + 0.25 cos(2pi(x2 - x3) + 1.1)
        + 0.2 cos(2pi(x3 + x4) + 2.0),   level 0,
    planes near x3 = c1, x4 = c2.  The last three amplitudes sum to 0.75 < 1,
    so f > 0 on x1 = 0 and f < 0 on x1 = 1/2: every plane whose direction
    space is not orthogonal to e1 carries strips between these hyperplanes,
    and their directions satisfy x1 = const, i.e. n = (1, 0, 0, 0).
    """
    f = Periodic4.from_terms([((1, 0, 0, 0), 1.0, 0.0), ((1, 1, 0, 0), 0.3, 0.4),
                              ((0, 1, -1, 0), 0.25, 1.1), ((0, 0, 1, 1), 0.2, 2.0)])
    return Quasi4Problem(f, np.array([0.0, 0.0, 1.0, 0.0]), np.array([0.0, 0.0, 0.0, 1.0]),
                         (0.3, 0.7), 0.0)


def perturb_covector(l, radius_deg, rng):
    """Rotate ``l`` by a uniform random angle up to ``radius_deg`` in a random direction."""
    l = np.asarray(l, dtype=float)
    nrm = np.linalg.norm(l)
    u = rng.normal(size=4)
    u -= (u @ l) / nrm ** 2 * l
    u /= np.linalg.norm(u)
    th = np.radians(radius_deg) * rng.random()
    return nrm * (np.cos(th) * l / nrm + np.sin(th) * u)


@dataclass
class Quasi4Report:
    problems: list
    components: list  # dicts: plane, class json
    hyperplane: Optional[HyperplaneFit]
    error: Optional[str] = None

    def counts(self):
        out = {}
        for c in self.components:
            out[c["class"]] = out.get(c["class"], 0) + 1
        return out

    def to_json(self):
        return {"components": self.components,
                "hyperplane_n": None if self.hyperplane is None else
                [int(v) for v in self.hyperplane.n],
                "residuals": None if self.hyperplane is None else
                self.hyperplane.residuals.tolist(),
                "counts": self.counts(), "error": self.error,
                "planes": [p.to_json() for p in self.problems]}


def theorem_check(problem: Quasi4Problem = None, n_planes=10, per_plane=10, budget=400.0,
                  seed=0, radius_deg=PERTURB_DEG, window=4.0, max_height=12, tol=1e-3):
    """Trace ``per_plane`` components on each of ``n_planes`` perturbed planes.

    Perturbed planes rotate both covectors within ``radius_deg``; seeds are
    uniform in a square of half-side ``window`` (plane coordinates).  Seeds
    that do not project onto the level are redrawn.  The integral hyperplane
    is fitted to all strip directions.
    """
    problem = designated_problem() if problem is None else problem
    rng = np.random.default_rng(seed)
    problems, comps, etas = [], [], []
    for i in range(n_planes):
        pb = Quasi4Problem(problem.f, perturb_covector(problem.l1, radius_deg, rng),
                           perturb_covector(problem.l2, radius_deg, rng), problem.c,
                           problem.level)
        problems.append(pb)
        done = tries = 0
        while done < per_plane and tries < 50 * per_plane:
            tries += 1
            try:
                comp, cls = trace_component4(pb, rng.uniform(-window, window, 2), budget)
            except StartNotOnSurface:
                continue
            except Stalled as exc:
                comps.append({"plane": i, "class": "undetermined", "reason": "stalled",
                              "eta4": None, "width": None, "error": str(exc)})
                done += 1
                continue
            rec = cls.to_json()
            rec["plane"] = i
            rec["max_residual"] = comp.max_residual
            comps.append(rec)
            if cls.kind == "strip":
                etas.append(cls.eta4)
            done += 1
    fit, err = None, None
    try:
        fit = integral_hyperplane(etas, max_height, tol) if etas else None
        if fit is None:
            err = "no strip components"
    except RoundingFailed as exc:
        err = str(exc)
    return Quasi4Report(problems, comps, fit, err)


def write_report(report: Quasi4Report, path):
    Path(path).write_text(json.dumps(report.to_json(), indent=2, sort_keys=True))
