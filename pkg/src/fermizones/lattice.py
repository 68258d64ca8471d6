"""Dispersion relations on the Brillouin torus and their Fermi surfaces.

Points are given in lattice coordinates ``p`` (period 1 in every entry);
Cartesian quasimomenta are ``q = basis @ p``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import DegenerateLevel

log = logging.getLogger(__name__)

TWO_PI = 2.0 * np.pi
GRAD_THRESHOLD = 1e-3
VERTEX_TOL = 1e-9


@dataclass(frozen=True)
class ReciprocalLattice:
    """Columns of ``basis`` are the reciprocal basis vectors."""

    basis: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        basis = np.array(self.basis, dtype=float)
        if basis.shape != (3, 3):
            raise ValueError("lattice basis must be 3x3")
        if abs(np.linalg.det(basis)) <= 1e-12:
            raise ValueError("lattice basis is singular")
        basis.setflags(write=False)
        object.__setattr__(self, "basis", basis)
        inv = np.linalg.inv(basis)
        inv.setflags(write=False)
        object.__setattr__(self, "inverse", inv)

    def to_cartesian(self, p):
        return np.asarray(p, dtype=float) @ self.basis.T

    def to_lattice(self, q):
        return np.asarray(q, dtype=float) @ self.inverse.T

    @property
    def is_cubic(self):
        return bool(np.allclose(self.basis, np.eye(3)))


@dataclass(frozen=True)
class DispersionRelation:
    """eps(p) = sum_i a_i cos(2 pi k_i . p + phi_i) over a reciprocal lattice."""

    k: np.ndarray
    a: np.ndarray
    phi: np.ndarray
    lattice: ReciprocalLattice = field(default_factory=ReciprocalLattice)

    def __post_init__(self):
        k = np.atleast_2d(np.array(self.k, dtype=np.int64))
        a = np.atleast_1d(np.array(self.a, dtype=float))
        phi = np.atleast_1d(np.array(self.phi, dtype=float))
        if k.shape[1] != 3 or len(a) != len(k) or len(phi) != len(k):
            raise ValueError("terms need integer 3-vectors k with matching a, phi")
        if not np.any(np.any(k != 0, axis=1) & (a != 0)):
            raise ValueError("dispersion needs at least one term with k != 0")
        for arr in (k, a, phi):
            arr.setflags(write=False)
        object.__setattr__(self, "k", k)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "phi", phi)

    @classmethod
    def from_terms(cls, terms, lattice=None):
        """``terms`` is an iterable of ``(k, a, phi)`` or dicts with those keys."""
        ks, amps, phases = [], [], []
        for term in terms:
            if isinstance(term, dict):
                ks.append(term["k"])
                amps.append(term["a"])
                phases.append(term.get("phi", 0.0))
            else:
                kk, aa, pp = term
                ks.append(kk)
                amps.append(aa)
                phases.append(pp)
        return cls(np.array(ks), np.array(amps), np.array(phases),
                   lattice if lattice is not None else ReciprocalLattice())

    @property
    def cartesian_k(self):
        """Wavevectors w with 2 pi k.p = 2 pi w.q."""
        return self.k @ self.lattice.inverse

    @property
    def amplitude_sum(self):
        return float(np.sum(np.abs(self.a)))

    def is_even(self):
        """True when eps(-p) = eps(p) term by term (all phases zero mod pi)."""
        return bool(np.allclose(np.sin(self.phi), 0.0))

    def to_json(self):
        return {
            "lattice": self.lattice.basis.tolist(),
            "terms": [{"k": [int(v) for v in kk], "a": float(aa), "phi": float(pp)}
                      for kk, aa, pp in zip(self.k, self.a, self.phi)],
        }

    @classmethod
    def from_json(cls, obj):
        lattice = ReciprocalLattice(np.array(obj.get("lattice", np.eye(3)), dtype=float))
        return cls.from_terms(obj["terms"], lattice)


def load_surface(path) -> DispersionRelation:
    with open(path) as fh:
        return DispersionRelation.from_json(json.load(fh))


def save_surface(d: DispersionRelation, path):
    Path(path).write_text(json.dumps(d.to_json(), indent=2))


def ccc(lattice=None) -> DispersionRelation:
    """cos 2 pi p1 + cos 2 pi p2 + cos 2 pi p3."""
    return DispersionRelation.from_terms(
        [((1, 0, 0), 1.0, 0.0), ((0, 1, 0), 1.0, 0.0), ((0, 0, 1), 1.0, 0.0)], lattice)


def flat_torus() -> DispersionRelation:
    """cos 2 pi p3: the level 0 is two flat coordinate tori."""
    return DispersionRelation.from_terms([((0, 0, 1), 1.0, 0.0)])


def evaluate(d: DispersionRelation, p):
    """Energy at lattice point(s) ``p``; shape (..., 3) -> (...)."""
    p = np.asarray(p, dtype=float)
    pts = np.mod(p.reshape(-1, 3), 1.0)
    val, _ = _kernels.eval_series_nd(pts, d.k.astype(float), d.a, d.phi)
    return val.reshape(p.shape[:-1]) if p.ndim > 1 else float(val[0])


def gradient(d: DispersionRelation, p):
    """Derivative with respect to lattice coordinates."""
    p = np.asarray(p, dtype=float)
    pts = np.mod(p.reshape(-1, 3), 1.0)
    _, grad = _kernels.eval_series_nd(pts, d.k.astype(float), d.a, d.phi)
    return grad.reshape(p.shape)


def cartesian_gradient(d: DispersionRelation, p):
    """grad_q eps at lattice point(s) ``p``: the lattice gradient pulled back by basis^-T."""
    return gradient(d, p) @ d.lattice.inverse


def cartesian_hessian(d: DispersionRelation, p):
    """Second derivatives in Cartesian coordinates at lattice point(s) ``p``; (..., 3, 3)."""
    p = np.asarray(p, dtype=float)
    pts = p.reshape(-1, 3)
    kc = d.cartesian_k
    arg = TWO_PI * (pts @ d.k.T.astype(float)) + d.phi
    coef = -(TWO_PI ** 2) * d.a * np.cos(arg)
    H = np.einsum("nt,ti,tj->nij", coef, kc, kc)
    return H.reshape(p.shape[:-1] + (3, 3))


def height_critical_points(d: DispersionRelation, eps_f, B, t: "FermiTriangulation",
                           cutoff=0.3, tol=1e-11, max_starts=256):
    """Critical points of the height q -> B.q on the level eps = eps_f.

    These are the points where grad eps is parallel to B.  Newton's method on
    (grad eps - mu B, eps - eps_f) = 0 is started from every triangulation
    vertex whose unit normal makes |n x B| < ``cutoff`` (at most
    ``max_starts`` of them, best aligned first); converged points are
    deduplicated modulo the lattice.  Returns ``(p, kind)`` with ``p`` the
    (k, 3) lattice coordinates in [0, 1) and ``kind`` +1 for saddles, -1
    for local extrema of the height.
    """
    B = np.asarray(B, dtype=float)
    B = B / np.linalg.norm(B)
    A = d.lattice.basis
    g = t.gradients
    n = g / np.linalg.norm(g, axis=1)[:, None]
    score = np.linalg.norm(np.cross(n, B), axis=1)
    order = np.argsort(score, kind="stable")[:max_starts]
    cand = t.vertices[order[score[order] < cutoff]]
    if len(cand) == 0:
        return np.zeros((0, 3)), np.zeros(0, dtype=int)
    q = cand @ A.T
    mu = np.einsum("ij,j->i", cartesian_gradient(d, cand), B)
    for _ in range(40):
        p = q @ d.lattice.inverse.T
        gc = cartesian_gradient(d, p)
        H = cartesian_hessian(d, p)
        F = np.concatenate([gc - mu[:, None] * B, (evaluate(d, p) - eps_f)[:, None]], axis=1)
        J = np.zeros((len(q), 4, 4))
        J[:, :3, :3] = H
        J[:, :3, 3] = -B
        J[:, 3, :3] = gc
        # pseudo-inverse: degenerate (e.g. flat) levels make J singular
        step = np.einsum("nij,nj->ni", np.linalg.pinv(J), F)
        step = np.clip(step, -0.05, 0.05)
        q = q - step[:, :3]
        mu = mu - step[:, 3]
        if np.max(np.abs(F)) < tol:
            break
    p = q @ d.lattice.inverse.T
    gc = cartesian_gradient(d, p)
    F = np.concatenate([gc - mu[:, None] * B, (evaluate(d, p) - eps_f)[:, None]], axis=1)
    ok = np.max(np.abs(F), axis=1) < 1e-9
    pts = np.mod(p[ok], 1.0)
    mus = mu[ok]
    # deduplicate modulo the lattice
    keep = []
    for i, x in enumerate(pts):
        dup = False
        for j in keep:
            dd = x - pts[j]
            dd -= np.round(dd)
            if np.max(np.abs(dd)) < 1e-6:
                dup = True
                break
        if not dup:
            keep.append(i)
    pts = pts[keep]
    mus = mus[keep]
    # type from the height's Hessian on the tangent plane: -H_eps / mu restricted
    ref = np.zeros(3)
    ref[int(np.argmin(np.abs(B)))] = 1.0
    e1 = np.cross(ref, B)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(B, e1)
    E = np.stack([e1, e2], axis=1)
    kinds = []
    for x, m in zip(pts, mus):
        Ht = E.T @ cartesian_hessian(d, x) @ E
        kinds.append(1 if np.linalg.det(Ht) < 0 else -1)
    return pts, np.array(kinds, dtype=int)


def energy_range(d: DispersionRelation, density=48):
    """Sampled (min, max) of eps, polished by a few Newton steps on the gradient."""
    g = (np.arange(density) + 0.5) / density
    pts = np.stack(np.meshgrid(g, g, g, indexing="ij"), axis=-1).reshape(-1, 3)
    vals = evaluate(d, pts)
    out = []
    for idx, sign in ((np.argmin(vals), 1.0), (np.argmax(vals), -1.0)):
        p = pts[idx].copy()
        best = vals[idx]
        for _ in range(30):
            step = 1e-2 * sign * gradient(d, p)
            cand = p - step
            v = evaluate(d, cand)
            if sign * v < sign * best:
                p, best = cand, v
            else:
                break
        out.append(best)
    lo, hi = out
    return float(min(lo, vals.min())), float(max(hi, vals.max()))


def _level_points(d, eps_f, density):
    """Points of the level set found on the edges of a sampling grid."""
    g = np.arange(density) / density
    grid = np.stack(np.meshgrid(g, g, g, indexing="ij"), axis=-1)
    vals = evaluate(d, grid.reshape(-1, 3)).reshape((density,) * 3) - eps_f
    found = [grid[np.abs(vals) < 1e-12].reshape(-1, 3)]
    for axis in range(3):
        nxt = np.roll(vals, -1, axis=axis)
        mask = (vals * nxt < 0)
        if not mask.any():
            continue
        lo = grid[mask]
        f_lo = vals[mask]
        step = np.zeros(3)
        step[axis] = 1.0 / density
        t_lo = np.zeros(len(lo))
        t_hi = np.ones(len(lo))
        for _ in range(40):
            mid = 0.5 * (t_lo + t_hi)
            fm = evaluate(d, lo + mid[:, None] * step) - eps_f
            left = np.sign(fm) == np.sign(f_lo)
            t_lo = np.where(left, mid, t_lo)
            t_hi = np.where(left, t_hi, mid)
        found.append(lo + (0.5 * (t_lo + t_hi))[:, None] * step)
    return np.concatenate(found, axis=0)


def check_regular(d: DispersionRelation, eps_f, density=64):
    """Smallest sampled |grad eps| (Cartesian) on the level eps = eps_f.

    Returns ``inf`` when the sampling grid sees no point of the level.
    """
    pts = _level_points(d, eps_f, density)
    if len(pts) == 0:
        return float("inf")
    gnorm = np.linalg.norm(cartesian_gradient(d, pts), axis=1)
    # polish the smallest samples along the level towards smaller |grad|
    best = float(gnorm.min())
    for idx in np.argsort(gnorm)[:8]:
        p = pts[idx].copy()
        for _ in range(20):
            cand = _newton_to_level(d, p - 1e-3 * _grad_norm_descent(d, p), eps_f)
            if cand is None:
                break
            gn = float(np.linalg.norm(cartesian_gradient(d, cand)))
            if gn >= best:
                break
            best = gn
            p = cand
    return best


def _grad_norm_descent(d, p, h=1e-6):
    # finite-difference gradient of |grad eps|^2, normalised
    base = np.sum(cartesian_gradient(d, p) ** 2)
    out = np.zeros(3)
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        out[i] = (np.sum(cartesian_gradient(d, p + e) ** 2) - base) / h
    n = np.linalg.norm(out)
    return out / n if n > 0 else out


def _newton_to_level(d, p, eps_f, tol=1e-13, max_iter=30, max_move=None):
    """Move ``p`` along the lattice gradient onto the level; None on failure."""
    p = np.array(p, dtype=float)
    start = p.copy()
    for _ in range(max_iter):
        r = evaluate(d, p) - eps_f
        if abs(r) < tol:
            break
        g = gradient(d, p)
        g2 = g @ g
        if g2 == 0.0:
            return None
        p = p - r * g / g2
    if abs(evaluate(d, p) - eps_f) > 1e-10:
        return None
    if max_move is not None and np.linalg.norm(p - start) > max_move:
        return None
    return p


# ---------------------------------------------------------------------------
# triangulation


@dataclass(frozen=True)
class FermiTriangulation:
    """Closed triangulated level set in T^3.

    ``vertices`` live in [0, 1)^3 (lattice coordinates).  Triangle ``t`` uses
    vertex ``triangles[t, j]`` lifted to ``vertices[...] + offsets[t, j]``, so
    every triangle is geometrically contiguous in the covering space.
    Triangles are oriented with normals along grad eps.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    offsets: np.ndarray
    gradients: np.ndarray
    eps_f: float
    resolution: int
    dispersion: DispersionRelation

    def lifted(self, t=None):
        """(F, 3, 3) lifted lattice coordinates of triangle corners."""
        tri = self.triangles if t is None else self.triangles[t]
        off = self.offsets if t is None else self.offsets[t]
        return self.vertices[tri] + off

    def centroids(self):
        return self.lifted().mean(axis=1)

    def areas(self):
        q = self.lifted() @ self.dispersion.lattice.basis.T
        return 0.5 * np.linalg.norm(np.cross(q[:, 1] - q[:, 0], q[:, 2] - q[:, 0]), axis=1)

    def edge_table(self):
        """Map from undirected periodic edge to incident triangle list.

        The key is ``(a, b, da, db, dc)`` with ``a < b`` and (da, db, dc) the
        lift of b relative to a.
        """
        table = {}
        for t, (tri, off) in enumerate(zip(self.triangles, self.offsets)):
            for j in range(3):
                key = edge_key(tri[j], tri[(j + 1) % 3], off[j], off[(j + 1) % 3])
                table.setdefault(key, []).append(t)
        return table

    def components(self):
        """Triangle component labels (0..k-1) by shared edges."""
        return _components_from_edges(len(self.triangles), self.edge_table())

    def euler_characteristics(self):
        """Euler characteristic per component."""
        labels = self.components()
        table = self.edge_table()
        ncomp = int(labels.max()) + 1 if len(labels) else 0
        chi = np.zeros(ncomp, dtype=int)
        for c in range(ncomp):
            chi[c] += np.count_nonzero(labels == c)
            chi[c] += len(np.unique(self.triangles[labels == c]))
        for tris in table.values():
            chi[labels[tris[0]]] -= 1
        return chi

    def is_closed_manifold(self):
        return all(len(v) == 2 for v in self.edge_table().values())

    def euler_characteristic(self):
        return len(self.vertices) - len(self.edge_table()) + len(self.triangles)


def edge_key(a, b, off_a, off_b):
    rel = np.asarray(off_b) - np.asarray(off_a)
    if a < b:
        return (int(a), int(b), int(rel[0]), int(rel[1]), int(rel[2]))
    return (int(b), int(a), int(-rel[0]), int(-rel[1]), int(-rel[2]))


def _components_from_edges(n, table):
    parent = np.arange(n)

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for tris in table.values():
        r0 = find(tris[0])
        for t in tris[1:]:
            r = find(t)
            if r != r0:
                parent[r] = r0
    roots = np.array([find(i) for i in range(n)])
    _, labels = np.unique(roots, return_inverse=True)
    return labels


# cube corners (x, y, z) and faces as cyclic corner lists
_CORNERS = np.array([(i, j, k) for i in (0, 1) for j in (0, 1) for k in (0, 1)])
_FACES = []
for _axis in range(3):
    for _side in (0, 1):
        _others = [a for a in range(3) if a != _axis]
        _cyc = []
        for (u, v) in ((0, 0), (1, 0), (1, 1), (0, 1)):
            c = [0, 0, 0]
            c[_axis] = _side
            c[_others[0]] = u
            c[_others[1]] = v
            _cyc.append(tuple(c))
        _FACES.append(_cyc)


def _edge_of(c1, c2):
    """Grid edge (base corner, axis) joining two adjacent cube corners."""
    axis = int(np.argmax(np.abs(np.subtract(c2, c1))))
    base = tuple(min(a, b) for a, b in zip(c1, c2))
    return base, axis


def triangulate_level(d: DispersionRelation, eps_f, resolution=48,
                      grad_threshold=GRAD_THRESHOLD) -> FermiTriangulation:
    """Marching-cubes triangulation of eps = eps_f on the periodic grid.

    Cell faces with four crossings are resolved with the bilinear saddle
    value (asymptotic decider).  Per cube, face segments close into loops;
    loops of three points become one triangle, longer loops are fanned
    around a centre vertex projected onto the level.
    """
    n = int(resolution)
    lo, hi = energy_range(d)
    if not (lo < eps_f < hi):
        raise DegenerateLevel(f"eps_F={eps_f} outside open range ({lo:.6g}, {hi:.6g})")
    gmin = check_regular(d, eps_f, density=max(32, n))
    if gmin < grad_threshold:
        raise DegenerateLevel(f"level eps_F={eps_f} is critical: min |grad eps| = {gmin:.3g}")

    g = np.arange(n) / n
    grid = np.stack(np.meshgrid(g, g, g, indexing="ij"), axis=-1)
    vals = evaluate(d, grid.reshape(-1, 3)).reshape((n, n, n)) - eps_f
    vals = np.where(vals == 0.0, 1e-300, vals)
    inside = vals < 0

    # roots on all crossing edges
    edge_pos = {}
    for axis in range(3):
        nxt = np.roll(vals, -1, axis=axis)
        idx = np.argwhere(np.sign(vals) != np.sign(nxt))
        if len(idx) == 0:
            continue
        lo_pts = grid[idx[:, 0], idx[:, 1], idx[:, 2]]
        f_lo = vals[idx[:, 0], idx[:, 1], idx[:, 2]]
        step = np.zeros(3)
        step[axis] = 1.0 / n
        t_lo = np.zeros(len(idx))
        t_hi = np.ones(len(idx))
        for _ in range(30):
            mid = 0.5 * (t_lo + t_hi)
            fm = evaluate(d, lo_pts + mid[:, None] * step) - eps_f
            same = np.sign(fm) == np.sign(f_lo)
            t_lo = np.where(same, mid, t_lo)
            t_hi = np.where(same, t_hi, mid)
        tt = 0.5 * (t_lo + t_hi)
        for _ in range(3):
            pts = lo_pts + tt[:, None] * step
            r = evaluate(d, pts) - eps_f
            dr = gradient(d, pts)[:, axis] / n
            upd = np.where(np.abs(dr) > 0, r / np.where(dr == 0, 1, dr), 0.0)
            tt = np.clip(tt - upd, t_lo, t_hi)
        for (i, j, k), t in zip(idx, tt):
            edge_pos[(i, j, k, axis)] = t

    vert_index = {}
    vertices = []

    def edge_vertex(key):
        vid = vert_index.get(key)
        if vid is None:
            i, j, k, axis = key
            p = np.array([i, j, k], dtype=float) / n
            p[axis] += edge_pos[key] / n
            vid = len(vertices)
            vert_index[key] = vid
            vertices.append(p)
        return vid

    tris = []
    offs = []
    cubes = np.argwhere(
        np.any([np.roll(inside, tuple(-x for x in s), axis=(0, 1, 2)) != inside
                for s in [(0, 0, 1), (0, 1, 0), (1, 0, 0), (0, 1, 1), (1, 0, 1), (1, 1, 0), (1, 1, 1)]],
               axis=0))
    for (ci, cj, ck) in cubes:
        cval = {}
        for c in _CORNERS:
            cval[tuple(c)] = vals[(ci + c[0]) % n, (cj + c[1]) % n, (ck + c[2]) % n]
        segments = []
        for face in _FACES:
            fv = [cval[c] for c in face]
            crossing = [m for m in range(4) if (fv[m] < 0) != (fv[(m + 1) % 4] < 0)]
            if not crossing:
                continue
            ekeys = [_edge_of(face[m], face[(m + 1) % 4]) for m in crossing]
            if len(crossing) == 2:
                segments.append((ekeys[0], ekeys[1]))
            else:
                f00, f10, f11, f01 = fv
                den = f00 + f11 - f10 - f01
                saddle = (f00 * f11 - f10 * f01) / den if den != 0 else 0.0
                # corner m sits between crossing edges m-1 and m
                if (saddle < 0) == (f00 < 0):
                    # 00 and 11 joined through the centre: isolate corners 10 and 01
                    segments.append((ekeys[0], ekeys[1]))
                    segments.append((ekeys[2], ekeys[3]))
                else:
                    segments.append((ekeys[3], ekeys[0]))
                    segments.append((ekeys[1], ekeys[2]))
        # chain segments into loops
        adj = {}
        for s0, s1 in segments:
            adj.setdefault(s0, []).append(s1)
            adj.setdefault(s1, []).append(s0)
        seen = set()
        for start in adj:
            if start in seen:
                continue
            loop = [start]
            seen.add(start)
            prev, cur = None, start
            while True:
                nbrs = adj[cur]
                nxt = nbrs[0] if nbrs[0] != prev else nbrs[1]
                if len(nbrs) == 2 and nbrs[0] == nbrs[1]:
                    nxt = nbrs[0]
                if nxt == start:
                    break
                loop.append(nxt)
                seen.add(nxt)
                prev, cur = cur, nxt
            # lifted positions relative to this cube
            vids = []
            lifts = []
            for (base, axis) in loop:
                gi = ci + base[0]
                gj = cj + base[1]
                gk = ck + base[2]
                key = (gi % n, gj % n, gk % n, axis)
                vid = edge_vertex(key)
                shift = np.array([gi // n, gj // n, gk // n])
                vids.append(vid)
                lifts.append(vertices[vid] + shift)
            lifts = np.array(lifts)
            if len(loop) == 3:
                tris.append(vids)
                offs.append(np.round(lifts - np.array([vertices[v] for v in vids])).astype(int))
                continue
            centre = _newton_to_level(d, lifts.mean(axis=0), eps_f, max_move=2.0 / n)
            if centre is None:
                centre = lifts.mean(axis=0)
            cbase = np.floor(centre)
            cid = len(vertices)
            vertices.append(centre - cbase)
            m = len(loop)
            for q in range(m):
                a, b = q, (q + 1) % m
                tris.append([cid, vids[a], vids[b]])
                offs.append(np.array([cbase,
                                      np.round(lifts[a] - vertices[vids[a]]),
                                      np.round(lifts[b] - vertices[vids[b]])]).astype(int))

    vertices = np.array(vertices)
    tris = np.array(tris, dtype=np.int64).reshape(-1, 3)
    offs = np.array(offs, dtype=np.int64).reshape(-1, 3, 3)
    # orient along grad eps
    lifted = vertices[tris] + offs
    normal = np.cross(lifted[:, 1] - lifted[:, 0], lifted[:, 2] - lifted[:, 0])
    grad_c = gradient(d, lifted.mean(axis=1))
    flip = _coherent_flips(tris, offs, np.einsum("ij,ij->i", normal, grad_c))
    tris[flip] = tris[flip][:, [0, 2, 1]]
    offs[flip] = offs[flip][:, [0, 2, 1]]
    vgrad = cartesian_gradient(d, vertices)
    for arr in (vertices, tris, offs, vgrad):
        arr.setflags(write=False)
    return FermiTriangulation(vertices, tris, offs, vgrad, float(eps_f), n, d)


def _coherent_flips(tris, offs, score):
    """Triangles to flip for a coherent orientation along ``score`` (normal . grad).

    Orientation spreads across shared edges from triangle to triangle, so
    zero-area triangles (the level through a grid point) follow their
    neighbours; each component then takes the sign of its summed score.
    """
    table = {}
    for t, (tri, off) in enumerate(zip(tris, offs)):
        for j in range(3):
            j1 = (j + 1) % 3
            key = edge_key(tri[j], tri[j1], off[j], off[j1])
            table.setdefault(key, []).append((t, int(tri[j]) == key[0]))
    nbrs = [[] for _ in range(len(tris))]
    for inc in table.values():
        for (a, fa), (b, fb) in zip(inc[:-1], inc[1:]):
            # coherent neighbours traverse the shared edge in opposite directions
            nbrs[a].append((b, fa == fb))
            nbrs[b].append((a, fa == fb))
    flip = np.zeros(len(tris), dtype=bool)
    seen = np.zeros(len(tris), dtype=bool)
    for root in range(len(tris)):
        if seen[root]:
            continue
        seen[root] = True
        comp = [root]
        stack = [root]
        while stack:
            a = stack.pop()
            for b, differ in nbrs[a]:
                if not seen[b]:
                    seen[b] = True
                    flip[b] = flip[a] ^ differ
                    comp.append(b)
                    stack.append(b)
        comp = np.array(comp)
        signed = np.where(flip[comp], -score[comp], score[comp]).sum()
        if signed < 0:
            flip[comp] = ~flip[comp]
    return flip


def pi1_image_rank(t: FermiTriangulation):
    """Rank of the image of pi_1(component) in Z^3, one entry per component.

    Walks a spanning tree of the vertex graph of each component, assigning
    integer lifts; each non-tree edge closes a loop whose translation is
    collected.  The answer is the rank of the collected translations.
    """
    labels = t.components()
    ncomp = int(labels.max()) + 1 if len(labels) else 0
    # vertex adjacency with relative lifts
    adj = {}
    vcomp = {}
    for tri_id, (tri, off) in enumerate(zip(t.triangles, t.offsets)):
        for j in range(3):
            a, b = int(tri[j]), int(tri[(j + 1) % 3])
            rel = off[(j + 1) % 3] - off[j]
            adj.setdefault(a, []).append((b, rel))
            adj.setdefault(b, []).append((a, -rel))
            vcomp[a] = labels[tri_id]
            vcomp[b] = labels[tri_id]
    ranks = []
    for c in range(ncomp):
        verts = [v for v, cc in vcomp.items() if cc == c]
        root = verts[0]
        lift = {root: np.zeros(3, dtype=np.int64)}
        stack = [root]
        cycles = []
        while stack:
            v = stack.pop()
            for (w, rel) in adj[v]:
                if w not in lift:
                    lift[w] = lift[v] + rel
                    stack.append(w)
                else:
                    trans = lift[v] + rel - lift[w]
                    if np.any(trans):
                        cycles.append(trans)
        if not cycles:
            ranks.append(0)
        else:
            ranks.append(int(np.linalg.matrix_rank(np.array(cycles, dtype=float))))
    return ranks
