"""Integer-vector helpers: primitivity, heights and rational directions."""

from __future__ import annotations

from functools import lru_cache
from math import gcd

import numpy as np


def height(v):
    return int(np.max(np.abs(np.asarray(v, dtype=np.int64))))


def vec_gcd(v):
    g = 0
    for x in np.asarray(v, dtype=np.int64):
        g = gcd(g, int(x))
    return g


def primitive(v):
    """Divide an integer vector by the gcd of its entries (zero stays zero)."""
    v = np.asarray(v, dtype=np.int64)
    g = vec_gcd(v)
    return v if g in (0, 1) else v // g


def sign_normalize(v):
    """Flip so that the first nonzero entry is positive."""
    v = np.asarray(v)
    nz = np.flatnonzero(v)
    if len(nz) and v[nz[0]] < 0:
        return -v
    return v


def is_primitive(v):
    return vec_gcd(v) == 1


@lru_cache(maxsize=8)
def primitive_vectors(dim, max_height):
    """All primitive vectors of height <= max_height, one per +-pair, sorted by height."""
    rng = np.arange(-max_height, max_height + 1)
    grids = np.meshgrid(*([rng] * dim), indexing="ij")
    cand = np.stack([g.ravel() for g in grids], axis=1)
    cand = cand[np.any(cand != 0, axis=1)]
    g = np.abs(cand[:, 0])
    for j in range(1, dim):
        g = np.gcd(g, np.abs(cand[:, j]))
    cand = cand[g == 1]
    # keep first nonzero entry positive
    first = cand[np.arange(len(cand)), np.argmax(cand != 0, axis=1)]
    cand = cand[first > 0]
    h = np.max(np.abs(cand), axis=1)
    order = np.lexsort((np.linalg.norm(cand, axis=1), h))
    out = cand[order]
    out.setflags(write=False)
    return out


def nearest_primitive_direction(direction, max_height, tol):
    """Smallest-height primitive integer vector within angle ``tol`` of +-direction.

    For each height H the only candidate is the rounding of direction scaled to
    sup-norm H, which suffices whenever ``tol`` is small compared with 1/H.
    """
    v = np.asarray(direction, dtype=float)
    nrm = np.linalg.norm(v)
    if not nrm > 0:
        raise ValueError("direction must be nonzero")
    v = v / nrm
    big = int(np.argmax(np.abs(v)))
    for h in range(1, int(max_height) + 1):
        cand = np.rint(v * h / abs(v[big])).astype(np.int64)
        if not np.any(cand):
            continue
        if height(cand) != h or not is_primitive(cand):
            continue
        # atan2 keeps full precision at tiny angles, unlike arccos
        c = cand / np.linalg.norm(cand)
        ang = np.arctan2(np.linalg.norm(v - (v @ c) * c), abs(v @ c))
        if ang < tol:
            return sign_normalize(cand)
    return None


def integer_normal(directions, max_height=12, tol=1e-3):
    """Primitive integer vector of least height orthogonal to all ``directions``.

    ``directions`` are unit vectors; the residual of a candidate n is
    max_i |n_hat . d_i|.  Returns ``(n, residual, best)``.  When no candidate
    of height <= max_height reaches ``tol``, ``n`` is None and ``best`` holds
    the closest candidate (with its residual); otherwise ``best`` is None.
    """
    dirs = np.atleast_2d(np.asarray(directions, dtype=float))
    dim = dirs.shape[1]
    cand = primitive_vectors(dim, max_height)
    units = cand / np.linalg.norm(cand, axis=1)[:, None]
    res = np.max(np.abs(units @ dirs.T), axis=1)
    ok = np.flatnonzero(res < tol)
    if len(ok):
        # candidates are sorted by height; among the lowest height take the best fit
        h = np.max(np.abs(cand[ok]), axis=1)
        low = ok[h == h.min()]
        best = low[np.argmin(res[low])]
        return cand[best].copy(), float(res[best]), None
    best = int(np.argmin(res))
    return None, float(res[best]), cand[best].copy()
