"""Carriers of open orbits, their topology, and integer zone labels.

Two independent routes lead to the integer label of a field direction:

* ``label_from_asymptotics`` works from traced orbits.  Every open orbit in a
  stability zone lives on a periodic surface invariant under the rank-2
  lattice {u : m.u = 0}, so the integer translations u at which an orbit
  returns close to a translate of its start all satisfy m.u = 0 exactly.
  Two independent returns give m as a primitive cross product, which is then
  checked against the fitted strip directions at B and two tilted fields.
* ``extract_carriers`` / ``homology_class`` work on the triangulated Fermi
  surface: remove compact orbits, close the remaining pieces with planar
  discs, and read off genus and the homology class by intersection numbers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import (DegenerateBasePoint, EmptyCarrier, NonManifoldCarrier, Stalled,
                     StartNotOnSurface, ValidationFailed)
from .integers import height, integer_normal, primitive, sign_normalize
from .lattice import (DispersionRelation, FermiTriangulation, _components_from_edges,
                      _newton_to_level, cartesian_gradient, cartesian_hessian, edge_key,
                      evaluate, gradient, height_critical_points, triangulate_level)
from .tracer import L_MIN, W_MAX, as_direction, classify, plane_frame, trace

DEFAULT_DELTA = np.radians(0.5)
MAX_HEIGHT = 12
LABEL_TOL = 1e-3
N_SEEDS = 16
SEED_RESOLUTION = 24
RETURN_RADII = (0.01, 0.02, 0.05)
TILT_ATTEMPTS = 3
POOL_ORBITS = 3  # open orbits at B pooled when one alone has collinear returns
SADDLE_OFFSET = 0.01


# ---------------------------------------------------------------------------
# labels


@dataclass(frozen=True)
class ZoneLabel:
    """Integer label m (primitive, first nonzero entry positive), Trivial or Undetermined.

    ``info`` carries diagnostics and does not take part in comparisons.
    """

    kind: str  # "integer" | "trivial" | "undetermined"
    m: Optional[tuple] = None
    reason: Optional[str] = None
    info: dict = field(default_factory=dict, compare=False, hash=False, repr=False)

    def __post_init__(self):
        if self.kind == "integer":
            m = np.asarray(self.m, dtype=np.int64)
            if not np.any(m):
                raise ValueError("integer label must be nonzero")
            m = sign_normalize(primitive(m))
            object.__setattr__(self, "m", tuple(int(v) for v in m))
        elif self.kind not in ("trivial", "undetermined"):
            raise ValueError(f"unknown label kind {self.kind!r}")

    @classmethod
    def integer(cls, m, **info):
        return cls("integer", tuple(int(v) for v in m), info=info)

    @classmethod
    def trivial(cls, **info):
        return cls("trivial", info=info)

    @classmethod
    def undetermined(cls, reason, **info):
        return cls("undetermined", reason=reason, info=info)

    @property
    def is_integer(self):
        return self.kind == "integer"

    @property
    def height(self):
        return height(self.m) if self.is_integer else 0

    @property
    def key(self):
        """Short string used for clustering and tables."""
        if self.is_integer:
            return "m:" + ",".join(str(v) for v in self.m)
        return self.kind

    @classmethod
    def from_key(cls, key):
        if key.startswith("m:"):
            return cls.integer([int(v) for v in key[2:].split(",")])
        if key == "trivial":
            return cls.trivial()
        return cls("undetermined", reason=None)

    def to_json(self):
        return list(self.m) if self.is_integer else self.kind


def sample_surface_points(t: FermiTriangulation, n, rng):
    """``n`` points of the level, stratified by area over the triangulation.

    The cumulative area is cut into ``n`` equal strata and one uniform point
    is drawn in each, then Newton-projected onto the level (lattice coords).
    """
    areas = t.areas()
    cum = np.cumsum(areas)
    u = (np.arange(n) + rng.random(n)) / n * cum[-1]
    tri = np.minimum(np.searchsorted(cum, u), len(areas) - 1)
    r1 = rng.random(n)
    r2 = rng.random(n)
    flip = r1 + r2 > 1.0
    r1[flip] = 1.0 - r1[flip]
    r2[flip] = 1.0 - r2[flip]
    corners = t.lifted(tri)
    pts = corners[:, 0] + r1[:, None] * (corners[:, 1] - corners[:, 0]) + r2[:, None] * (corners[:, 2] - corners[:, 0])
    out = []
    for p in pts:
        q = _newton_to_level(t.dispersion, p, t.eps_f, max_move=0.05)
        out.append(np.mod(p if q is None else q, 1.0))
    return np.array(out)


def saddle_seeds(d: DispersionRelation, eps_f, B, t: FermiTriangulation, offset=SADDLE_OFFSET):
    """Level points next to every critical point of the height B.q.

    Every carrier boundary passes through a saddle of the height, so orbits
    started a little off a saddle, in the four sectors around it, reach even
    a thin carrier that area-stratified sampling would miss.  Points are
    placed at ``offset`` (Cartesian) along the principal directions of the
    height's Hessian and Newton-projected onto the level.
    """
    B = as_direction(B)
    pts, kinds = height_critical_points(d, eps_f, B, t)
    A = d.lattice.basis
    e1, e2 = plane_frame(B)
    E = np.stack([e1, e2], axis=1)
    out = []
    for p, kind in zip(pts, kinds):
        if kind != 1:
            continue
        Ht = E.T @ cartesian_hessian(d, p) @ E
        _, vecs = np.linalg.eigh(Ht)
        for v in (vecs[:, 0], vecs[:, 1]):
            step = d.lattice.inverse @ (E @ v) * offset
            for sgn in (1.0, -1.0):
                q = _newton_to_level(d, p + sgn * step, eps_f, max_move=0.05)
                if q is not None:
                    out.append(np.mod(q, 1.0))
    return np.array(out).reshape(-1, 3)


def default_seeds(d: DispersionRelation, eps_f, B, t: FermiTriangulation, rng, n=N_SEEDS):
    """Saddle-adjacent seeds followed by ``n`` area-stratified ones."""
    return np.concatenate([saddle_seeds(d, eps_f, B, t), sample_surface_points(t, n, rng)])


def perturbed_fields(B, delta=DEFAULT_DELTA):
    """The two fields tilted by ``delta`` towards e2 and towards e1 of the plane frame."""
    B = as_direction(B)
    e1, e2 = plane_frame(B)
    c, s = np.cos(delta), np.sin(delta)
    return c * B + s * e2, c * B + s * e1


def lattice_normal(vectors):
    """Primitive integer normal of a set of integer 3-vectors spanning a plane.

    Returns ``(m, consistent)`` where m comes from the largest cross product
    and ``consistent`` tells whether every vector satisfies m.u = 0 exactly.
    ``m`` is None when the vectors have rank < 2.
    """
    U = np.unique(np.asarray(vectors, dtype=np.int64).reshape(-1, 3), axis=0)
    U = U[np.any(U != 0, axis=1)]
    best = None
    best_norm = 0
    for i in range(len(U)):
        c = np.cross(U[i], U[i + 1:])
        if len(c) == 0:
            continue
        nrm = np.abs(c).sum(axis=1)
        j = int(np.argmax(nrm))
        if nrm[j] > best_norm:
            best, best_norm = c[j], nrm[j]
    if best is None:
        return None, True
    m = sign_normalize(primitive(best))
    return m, bool(np.all(U @ m == 0))


def _trace_open(d, eps_f, B, p, budget, w_max, l_min, h_max, angle_tol):
    """Trace and classify; stalls and bad starts come back as None."""
    try:
        traj = trace(d, eps_f, B, p, budget=budget, h_max=h_max, angle_tol=angle_tol)
    except (Stalled, StartNotOnSurface):
        return None, None
    return traj, classify(traj, w_max, l_min)


def _orbit_integers(traj, radius=None):
    keep = traj.returns if radius is None else traj.returns[traj.return_dist < radius]
    vecs = [keep]
    if traj.closed and np.any(traj.period):
        vecs.append(traj.period[None, :])
    return np.concatenate(vecs, axis=0)


def return_lattice(traj, radii=RETURN_RADII):
    """Integer normal m of the orbit's return vectors, read at growing radii.

    Returns near a translate of the start can come from a neighbouring sheet
    of the periodic surface when the radius is large, so the tightest radius
    that gives rank 2 is used, and widening is stopped at the first radius
    that breaks consistency.  Returns ``(m, consistent, ints)``.
    """
    best = None
    ints = _orbit_integers(traj, radii[0])
    for r in radii:
        cur = _orbit_integers(traj, r)
        m, ok = lattice_normal(cur) if len(cur) else (None, True)
        if not ok:
            if best is not None:
                return best
            return None, False, cur
        ints = cur
        if m is not None and best is None:
            best = (m, True, cur)
    return best if best is not None else (None, True, ints)


@dataclass
class _OrbitEvidence:
    eta: np.ndarray
    width: float
    ints: np.ndarray
    m: Optional[np.ndarray]  # from this orbit's own returns (rank 2 only)
    consistent: bool


def _evidence(traj, cls):
    """Open-orbit evidence, or None if the orbit is neither open nor lattice-confined.

    An orbit wider than the strip threshold still counts when its returns
    span a rank-2 lattice exactly: the width bound is budget-relative, the
    integer relation is not.
    """
    m, ok, ints = return_lattice(traj)
    if cls.is_open or (cls.reason == "wandering" and m is not None and ok):
        return _OrbitEvidence(cls.eta, cls.width, ints, m, ok)
    return None


def _first_evidence(d, eps_f, B, seeds, budget, w_max, l_min, h_max, angle_tol,
                    attempts=TILT_ATTEMPTS):
    """Open-orbit evidence from the first seeds that give any; compact orbits are skipped."""
    tries = 0
    for p in seeds:
        traj, cls = _trace_open(d, eps_f, B, p, budget, w_max, l_min, h_max, angle_tol)
        if traj is None or cls.is_compact:
            continue
        ev = _evidence(traj, cls)
        if ev is not None:
            return ev
        tries += 1
        if tries >= attempts:
            break
    return None


def label_from_asymptotics(d: DispersionRelation, eps_f, B, delta=DEFAULT_DELTA,
                           budget=900.0, seeds=None, n_seeds=N_SEEDS, rng=None,
                           max_height=MAX_HEIGHT, tol=LABEL_TOL, w_max=W_MAX, l_min=L_MIN,
                           h_max=0.1, angle_tol=0.2, strict=False):
    """Integer label of the direction B from orbit asymptotics.

    Seeds (lattice points on the level) are traced at B in order.  If all
    close with zero period the label is Trivial.  The first open orbit fixes
    m through its integer return vectors (see module notes); it is re-traced
    from the same start at two fields tilted by ``delta``.  Their returns
    supply m when those of B are collinear, and an integer normal of the three
    strip directions is the last resort.  The label is accepted if height(m)
    <= ``max_height`` and |m_hat . eta| < ``tol`` for every strip direction
    consistent with m.  A tilted field whose orbit has its own, different,
    exact label lies across a zone boundary: it is recorded in ``info`` and
    left out of the validation.  Anything else (non-open seed or tilted orbit,
    inconsistent returns, failed rounding or validation) gives Undetermined,
    or :class:`ValidationFailed` for the last two when ``strict``.

    Parameters
    ----------
    seeds : (n, 3) array, optional
        Start points; :func:`default_seeds` on a coarse triangulation when
        omitted.
    rng : numpy Generator, optional
        Used only for seed sampling.
    """
    B = as_direction(B)
    if seeds is None:
        rng = np.random.default_rng(0) if rng is None else rng
        seeds = default_seeds(d, eps_f, B, triangulate_level(d, eps_f, SEED_RESOLUTION),
                              rng, n_seeds)
    info = {"budget": float(budget), "w_max": float(w_max), "l_min": float(l_min)}
    n_compact = 0
    n_stalled = 0
    first = None
    extra = []
    for p in seeds:
        traj, cls = _trace_open(d, eps_f, B, p, budget, w_max, l_min, h_max, angle_tol)
        if traj is None:
            n_stalled += 1
            continue
        if cls.is_compact:
            if first is None:
                n_compact += 1
            continue
        ev = _evidence(traj, cls)
        if first is None:
            if ev is None:
                info.update(n_compact=n_compact, width=cls.width, extent=cls.extent)
                return ZoneLabel.undetermined(cls.reason, **info)
            first = (p, ev)
            if ev.m is not None:
                break
            continue
        # collinear returns so far: later open orbits at B share the same plane
        if ev is None:
            break
        extra.append(ev.ints)
        m2, ok2 = lattice_normal(np.concatenate([first[1].ints] + extra, axis=0))
        if m2 is not None or len(extra) >= POOL_ORBITS - 1:
            break
    info.update(n_compact=n_compact, n_stalled=n_stalled)
    if first is None:
        if n_stalled and not n_compact:
            return ZoneLabel.undetermined("stalled", **info)
        if n_stalled:
            # a separatrix start says nothing about openness; the others all closed
            info["note"] = "stalled seeds skipped"
        return ZoneLabel.trivial(**info)

    p, ev = first
    if extra and ev.consistent:
        pooled = np.concatenate([ev.ints] + extra, axis=0)
        m2, ok2 = lattice_normal(pooled)
        if m2 is not None and ok2:
            ev = _OrbitEvidence(ev.eta, ev.width, pooled, m2, True)
            info["pooled_orbits"] = 1 + len(extra)
    if not ev.consistent:
        info["returns"] = np.unique(ev.ints, axis=0).tolist()
        return ZoneLabel.undetermined("inconsistent returns", **info)
    tilted = []
    unresolved_tilts = 0
    order = [p] + [q for q in seeds if q is not p]
    for Bp in perturbed_fields(B, delta):
        e2 = _first_evidence(d, eps_f, Bp, order, budget, w_max, l_min, h_max, angle_tol)
        if e2 is None:
            if ev.m is None:
                info["eta"] = [float(v) for v in ev.eta]
                return ZoneLabel.undetermined("tilted orbit not open", **info)
            # m is already fixed by exact returns at B; the tilt left the zone
            unresolved_tilts += 1
            continue
        tilted.append(e2)

    m = ev.m
    info["method"] = "returns"
    if m is None:
        pool = np.concatenate([ev.ints] + [e.ints for e in tilted], axis=0)
        m, ok = lattice_normal(pool) if len(pool) else (None, True)
        if m is not None and not ok:
            m = None
    if m is None:
        m, res, best = integer_normal([ev.eta] + [e.eta for e in tilted],
                                      min(max_height, MAX_HEIGHT), tol)
        info["method"] = "directions"
        if m is None:
            info["best"] = [int(v) for v in best]
            info["rounding_residual"] = res
            if strict:
                raise ValidationFailed("no integer normal of the strip directions",
                                       {"rounding": res})
            return ZoneLabel.undetermined("rounding", **info)
    if height(m) > max_height:
        info["candidate"] = [int(v) for v in m]
        return ZoneLabel.undetermined("height", **info)

    etas = [ev.eta]
    boundary = []
    for e in tilted:
        if len(e.ints) and np.any(e.ints @ m != 0):
            boundary.append(None if e.m is None else [int(v) for v in e.m])
        else:
            etas.append(e.eta)
    mhat = m / np.linalg.norm(m)
    residuals = [float(abs(mhat @ e)) for e in etas]
    info.update(eta=[[float(v) for v in e] for e in etas], residuals=residuals,
                width=float(ev.width))
    boundary += [None] * unresolved_tilts
    if boundary:
        info["across_boundary"] = boundary
    if max(residuals) >= tol:
        info["candidate"] = [int(v) for v in m]
        if strict:
            raise ValidationFailed(f"|m.eta| = {max(residuals):.3g} for m={m.tolist()}",
                                   {"eta": residuals})
        return ZoneLabel.undetermined("validation", **info)
    return ZoneLabel("integer", tuple(int(v) for v in m), info=info)


# ---------------------------------------------------------------------------
# carriers

CARRIER_BUDGET = 30.0
SNAP_CELLS = 4.0  # a boundary loop snaps to a saddle height within this many grid cells
BASE_POINT_RETRIES = 10
BARY_TOL = 1e-9


def classify_triangles(t: FermiTriangulation, B, budget=CARRIER_BUDGET, h_max=0.1,
                       angle_tol=0.2):
    """Per-triangle orbit class sampled at the centroid.

    Returns a boolean mask, True where the orbit through the centroid is not
    a closed null-homotopic loop within ``budget``.  Stalled traces start on
    a separatrix and count as compact: separatrices bound the carriers.
    """
    d = t.dispersion
    B = as_direction(B)
    cents = t.centroids()
    mask = np.zeros(len(cents), dtype=bool)
    for i, p in enumerate(cents):
        try:
            traj = trace(d, t.eps_f, B, p, budget=budget, h_max=h_max, angle_tol=angle_tol,
                         max_returns=1)
        except (Stalled, StartNotOnSurface):
            continue
        mask[i] = not (traj.status == "closed" and not np.any(traj.period))
    return mask


@dataclass
class CarrierComponent:
    """One carrier piece closed up by planar discs.

    ``vertices``/``triangles``/``offsets`` follow the periodic layout of
    :class:`~fermizones.lattice.FermiTriangulation`; the last ``n_disc``
    triangles are the disc fans.  ``loops`` are the boundary loops as lifted
    lattice coordinates, ``loop_heights`` their plane heights B.q.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    offsets: np.ndarray
    n_disc: int
    loops: list
    loop_heights: list
    plane_residual: float
    area_fraction: float
    euler: int = 0
    genus: int = 0
    z: Optional[tuple] = None

    @property
    def stochastic(self):
        return self.genus >= 2

    def to_json(self):
        return {"genus": int(self.genus),
                "z": None if self.z is None else [int(v) for v in self.z],
                "boundary_loops": len(self.loops),
                "area_fraction": float(self.area_fraction),
                "euler": int(self.euler),
                "plane_residual": float(self.plane_residual)}


@dataclass
class CarrierComplex:
    """Carrier components of one field direction on one triangulated level."""

    B: np.ndarray
    eps_f: float
    resolution: int
    components: list
    open_fraction: float
    debris_fraction: float = 0.0  # area of dropped null-homologous spheres

    @property
    def stochastic(self):
        return any(c.stochastic for c in self.components)


def _edge_count(triangles, offsets):
    keys = set()
    for tri, off in zip(triangles, offsets):
        for j in range(3):
            keys.add(edge_key(tri[j], tri[(j + 1) % 3], off[j], off[(j + 1) % 3]))
    return len(keys)


def _corner_classes(t, tris, table, in_comp):
    """Split vertices of the triangle set ``tris`` by their fans.

    Corners (triangle, k) of the same vertex are joined across every edge
    shared by two triangles of the set.  Each class is one vertex of the
    carrier as a manifold with boundary: a vertex where the carrier touches
    itself (a saddle with open orbits in opposite sectors) gets one copy per
    fan.  Returns (class id per corner (len(tris), 3), number of classes,
    base vertex per class, boundary half-edges as (triangle row, k)).
    """
    row = {int(ti): r for r, ti in enumerate(tris)}
    parent = np.arange(3 * len(tris))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    boundary = []
    for r, ti in enumerate(tris):
        tri, off = t.triangles[ti], t.offsets[ti]
        for j in range(3):
            j1 = (j + 1) % 3
            key = edge_key(tri[j], tri[j1], off[j], off[j1])
            other = [o for o in table[key] if o != ti and in_comp[o]]
            if not other:
                boundary.append((r, j))
                continue
            o = other[0]
            r2 = row[o]
            t2, f2 = t.triangles[o], t.offsets[o]
            for j2 in range(3):
                k2 = (j2 + 1) % 3
                if (t2[j2] == tri[j1] and t2[k2] == tri[j]
                        and edge_key(t2[j2], t2[k2], f2[j2], f2[k2]) == key):
                    break
            else:
                raise NonManifoldCarrier("inconsistent triangle orientation")
            for x, y in ((3 * r + j, 3 * r2 + k2), (3 * r + j1, 3 * r2 + j2)):
                fx, fy = find(x), find(y)
                if fx != fy:
                    parent[fy] = fx
    roots = np.array([find(i) for i in range(len(parent))])
    uniq, cls = np.unique(roots, return_inverse=True)
    cls = cls.reshape(-1, 3)
    base = t.triangles[tris].reshape(-1)[uniq]
    return cls, len(uniq), base, boundary


def _boundary_loops(offs, cls, boundary):
    """Chain boundary half-edges into loops of (class, row, k, frame shift).

    ``offs`` are the corner offsets of the rows.  The frame shift is the
    integer translation taking the row's triangle into the loop's lift.
    Raises NonManifoldCarrier if a vertex class has two outgoing boundary
    edges or a loop does not close in the covering space.
    """
    out = {}
    for r, j in boundary:
        c = int(cls[r, j])
        if c in out:
            raise NonManifoldCarrier("carrier boundary pinches; refine the triangulation")
        out[c] = (r, j)
    loops = []
    seen = set()
    for start in out:
        if start in seen:
            continue
        loop = []
        c, g = start, np.zeros(3, dtype=np.int64)
        while True:
            r, j = out[c]
            loop.append((c, r, j, g.copy()))
            seen.add(c)
            j1 = (j + 1) % 3
            nxt = int(cls[r, j1])
            if nxt not in out:
                raise NonManifoldCarrier("open carrier boundary chain")
            r2, k2 = out[nxt]
            # end of this half-edge is the start of the next one
            g = g + offs[r, j1] - offs[r2, k2]
            c = nxt
            if c == start:
                break
            if c in seen:
                raise NonManifoldCarrier("carrier boundary chains merge")
        if np.any(g):
            raise NonManifoldCarrier(f"boundary loop winds by {g.tolist()}: it bounds no disc")
        loops.append(loop)
    return loops


def _snap_to_plane(d, eps_f, p, normal, h, iters=30, tol=1e-13):
    """Newton (minimum norm) onto eps = eps_f, normal.p = h from lattice point p."""
    p = np.array(p, dtype=float)
    for _ in range(iters):
        F = np.array([evaluate(d, p) - eps_f, normal @ p - h])
        if np.max(np.abs(F)) < tol:
            break
        J = np.stack([gradient(d, p), normal])
        p = p - np.linalg.lstsq(J, F, rcond=None)[0]
    return p


def _loop_height(pts, normal, crit, A, reach):
    """Plane height for a boundary loop: nearest saddle within ``reach``, else the mean."""
    h = float(np.mean(pts @ normal))
    if len(crit):
        diff = pts[:, None, :] - crit[None, :, :]
        diff -= np.round(diff)
        dist = np.linalg.norm(diff @ A.T, axis=2)
        i, j = np.unravel_index(np.argmin(dist), dist.shape)
        if dist[i, j] < reach:
            h = float(normal @ (pts[i] - diff[i, j]))
    return h


def extract_carriers(t: FermiTriangulation, B, open_mask=None, budget=CARRIER_BUDGET,
                     crit=None) -> CarrierComplex:
    """Carrier components: open-classified triangles closed by planar disc fans.

    Components are maximal edge-connected sets of open triangles.  Vertices
    where a component touches itself are split per triangle fan.  Boundary
    loops are moved onto a plane orthogonal to B (the height of the nearest
    saddle of B.q on the level when one lies within a few grid cells, else
    the loop's mean height) and filled with a fan around their mean point,
    oriented against the boundary.

    Parameters
    ----------
    open_mask : bool array, optional
        Per-triangle classification; :func:`classify_triangles` when omitted.
    crit : (k, 3) array, optional
        Saddles of the height B.q on the level (lattice coordinates).
    """
    d = t.dispersion
    B = as_direction(B)
    if open_mask is None:
        open_mask = classify_triangles(t, B, budget)
    open_mask = np.asarray(open_mask, dtype=bool)
    if not open_mask.any():
        raise EmptyCarrier("every sampled orbit is compact")
    if crit is None:
        crit, kinds = height_critical_points(d, t.eps_f, B, t)
        crit = crit[kinds > 0] if len(crit) else crit
    A = d.lattice.basis
    normal = A.T @ B  # B.q as a function of lattice coordinates
    reach = SNAP_CELLS * np.linalg.norm(A, axis=0).max() / t.resolution

    table = t.edge_table()
    open_ids = np.flatnonzero(open_mask)
    local = {int(g): i for i, g in enumerate(open_ids)}
    sub = {k: [local[x] for x in v if open_mask[x]] for k, v in table.items()}
    labels = _components_from_edges(len(open_ids), {k: v for k, v in sub.items() if v})
    areas = t.areas()
    total_area = areas.sum()

    comps = []
    for c in range(int(labels.max()) + 1):
        tris = open_ids[labels == c]
        in_comp = np.zeros(len(t.triangles), dtype=bool)
        in_comp[tris] = True
        cls, nv, base, boundary = _corner_classes(t, tris, table, in_comp)
        offs = t.offsets[tris]
        loops = _boundary_loops(offs, cls, boundary)
        verts = t.vertices[base].astype(float)
        ctris = cls.astype(np.int64)
        coffs = offs.copy()
        heights, lifted_loops = [], []
        residual = 0.0
        disc_tris, disc_offs = [], []
        for loop in loops:
            ids = np.array([x[0] for x in loop])
            lifts = np.array([offs[r, j] + g for _, r, j, g in loop])
            pts = verts[ids] + lifts
            h = _loop_height(pts, normal, crit, A, reach)
            pts = np.array([_snap_to_plane(d, t.eps_f, q, normal, h) for q in pts])
            verts[ids] = pts - lifts
            residual = max(residual, float(np.max(np.abs(pts @ normal - h))))
            heights.append(h)
            lifted_loops.append(pts)
            centre = pts.mean(axis=0)
            cbase = np.floor(centre)
            cid = len(verts)
            verts = np.vstack([verts, centre - cbase])
            n = len(ids)
            for k in range(n):
                k1 = (k + 1) % n
                disc_tris.append([cid, ids[k1], ids[k]])
                disc_offs.append([cbase.astype(np.int64), lifts[k1], lifts[k]])
        if disc_tris:
            ctris = np.vstack([ctris, np.array(disc_tris, dtype=np.int64)])
            coffs = np.concatenate([coffs, np.array(disc_offs, dtype=np.int64)])
        comp = CarrierComponent(verts, ctris, coffs, len(disc_tris), lifted_loops, heights,
                                residual, float(areas[tris].sum() / total_area))
        comp.euler = len(verts) - _edge_count(ctris, coffs) + len(ctris)
        comps.append(comp)
    return CarrierComplex(B, t.eps_f, t.resolution, comps,
                          float(areas[open_mask].sum() / total_area))


def genus_of_carriers(c: CarrierComplex):
    """Genus per component from the Euler characteristic of the filled complex."""
    if not c.components:
        raise EmptyCarrier("no carrier components")
    out = []
    for comp in c.components:
        if comp.euler % 2 or comp.euler > 2:
            raise NonManifoldCarrier(f"filled carrier has Euler characteristic {comp.euler}")
        comp.genus = (2 - comp.euler) // 2
        out.append(comp.genus)
    return out


_CYCLIC = ((1, 2), (2, 0), (0, 1))


def _crossings(lifted, axis, base):
    """Signed crossings of the coordinate loop along ``axis`` through ``base`` (2 numbers).

    Returns None when the loop passes within BARY_TOL of a triangle edge.
    """
    i, j = _CYCLIC[axis]
    P = lifted[:, :, [i, j]]
    lo = np.ceil(P.min(axis=1) - base).astype(np.int64)
    hi = np.floor(P.max(axis=1) - base).astype(np.int64)
    total = 0
    ni = np.maximum(hi[:, 0] - lo[:, 0] + 1, 0)
    nj = np.maximum(hi[:, 1] - lo[:, 1] + 1, 0)
    for a in range(int(ni.max(initial=0))):
        for b in range(int(nj.max(initial=0))):
            sel = (a < ni) & (b < nj)
            if not sel.any():
                continue
            x = base + np.stack([lo[sel, 0] + a, lo[sel, 1] + b], axis=1)
            T = P[sel]
            e1 = T[:, 1] - T[:, 0]
            e2 = T[:, 2] - T[:, 0]
            r = x - T[:, 0]
            det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
            ok = np.abs(det) > 1e-15
            det = np.where(ok, det, 1.0)
            l1 = (r[:, 0] * e2[:, 1] - r[:, 1] * e2[:, 0]) / det
            l2 = (e1[:, 0] * r[:, 1] - e1[:, 1] * r[:, 0]) / det
            lam = np.stack([1 - l1 - l2, l1, l2], axis=1)
            near = ok & (np.abs(lam) < BARY_TOL).any(axis=1) & (lam > -BARY_TOL).all(axis=1)
            if near.any():
                return None
            inside = ok & (lam > 0).all(axis=1)
            total += int(np.sign(det[inside]).sum())
    return total


def homology_class(c: CarrierComplex, rng=None):
    """Integer class z_i of every filled component.

    z_i[k] is the signed intersection number of component i with a coordinate
    loop along e_k through a random base point (lattice coordinates).  The base
    point is redrawn when the loop grazes an edge.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    out = []
    for comp in c.components:
        lifted = comp.vertices[comp.triangles] + comp.offsets
        z = []
        for axis in range(3):
            for _ in range(BASE_POINT_RETRIES):
                n = _crossings(lifted, axis, rng.random(2))
                if n is not None:
                    break
            else:
                raise DegenerateBasePoint(f"coordinate loop {axis} grazes an edge "
                                          f"after {BASE_POINT_RETRIES} base points")
            z.append(n)
        comp.z = tuple(z)
        out.append(np.array(z))
    return out


def coherent_class(classes):
    """Common primitive class z (sign-normalized) if every z_i = +-z with z_i != 0, else None."""
    nz = [np.asarray(v) for v in classes if np.any(v)]
    if len(nz) != len(classes) or not nz:
        return None
    z = sign_normalize(nz[0])
    if np.gcd.reduce(np.abs(z)) != 1:
        return None
    for v in nz[1:]:
        if not (np.array_equal(v, z) or np.array_equal(v, -z)):
            return None
    return tuple(int(x) for x in z)


def carrier_analysis(d: DispersionRelation, eps_f, B, resolution=24, max_resolution=48,
                     budget=CARRIER_BUDGET, rng=None):
    """Carriers, genus and classes at the coarsest resolution that gives a manifold.

    The resolution doubles on NonManifoldCarrier up to ``max_resolution``.
    Components that close up to spheres with zero class cannot carry an open
    orbit; they are open triangles cut off from a carrier at a vertex (mesh
    resolution), and are dropped, their area kept in ``debris_fraction``.
    """
    res = int(resolution)
    while True:
        t = triangulate_level(d, eps_f, res)
        try:
            c = extract_carriers(t, B, budget=budget)
            genus_of_carriers(c)
            homology_class(c, rng)
        except NonManifoldCarrier:
            if 2 * res > max_resolution:
                raise
            res *= 2
            continue
        real = [comp.genus > 0 or any(comp.z) for comp in c.components]
        keep = [comp for comp, r in zip(c.components, real) if r]
        c.debris_fraction = float(sum(comp.area_fraction
                                      for comp, r in zip(c.components, real) if not r))
        if not keep:
            raise EmptyCarrier("every carrier component is a null-homologous sphere")
        c.components = keep
        return c


def carrier_report(c: Optional[CarrierComplex], label: ZoneLabel):
    """JSON-ready carrier report."""
    comps = [] if c is None else [comp.to_json() for comp in c.components]
    z = None if c is None else coherent_class([comp.z for comp in c.components])
    return {"components": comps,
            "z": None if z is None else list(z),
            "stochastic": bool(c is not None and c.stochastic),
            "debris_fraction": 0.0 if c is None else c.debris_fraction,
            "label": label.key,
            "residuals": label.info.get("residuals", [])}


def write_carrier_report(report, path):
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True))
