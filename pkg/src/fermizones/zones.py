"""Stability-zone atlas on the sphere of field directions.

Grid
----
Each hemisphere is flattened by the Lambert azimuthal equal-area map, which
sends the closed hemisphere onto the disc of radius sqrt(2) and preserves
area exactly.  An N x N square grid covers [-sqrt(2), sqrt(2)]^2; a cell
is kept when it meets the disc, its area is the exact area of square ∩ disc,
and its direction is the image of the square's centre (a centre just outside
the disc maps slightly past the equator, which the map allows up to radius 2).
The southern chart is the antipodal image of the northern one, so cell k of
the south is exactly -1 times cell k of the north.  Cell areas therefore sum
to 4 pi up to rounding.
"""

from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import stats

from .carriers import (DEFAULT_DELTA, MAX_HEIGHT, N_SEEDS, SEED_RESOLUTION, ZoneLabel,
                       default_seeds, label_from_asymptotics)
from .errors import DegenerateLevel
from .lattice import DispersionRelation, check_regular, energy_range, triangulate_level
from .tracer import L_MIN, W_MAX, detect_rational

FORMAT_VERSION = 1
FOUR_PI = 4.0 * np.pi
SQRT2 = np.sqrt(2.0)


# ---------------------------------------------------------------------------
# grid


def _quadrant_area(x, y, r):
    """Signed area of {0<=X<=x, 0<=Y<=y} ∩ disc(r), odd in x and in y."""
    sx = np.sign(x)
    sy = np.sign(y)
    x = np.minimum(np.abs(x), r)
    y = np.minimum(np.abs(y), r)
    xs = np.sqrt(np.maximum(r * r - y * y, 0.0))  # where the circle meets Y = y

    def prim(t):
        return 0.5 * (t * np.sqrt(np.maximum(r * r - t * t, 0.0)) + r * r * np.arcsin(np.clip(t / r, -1, 1)))

    lo = np.minimum(x, xs)
    return sx * sy * (y * lo + prim(x) - prim(lo))


def rect_disc_area(x0, x1, y0, y1, r):
    """Exact area of the rectangle [x0,x1] x [y0,y1] intersected with disc(r)."""
    return (_quadrant_area(x1, y1, r) - _quadrant_area(x0, y1, r)
            - _quadrant_area(x1, y0, r) + _quadrant_area(x0, y0, r))


def lambert_inverse(X, Y):
    """Unit vectors (z >= 0 inside radius sqrt(2)) from Lambert plane coordinates."""
    r2 = X * X + Y * Y
    k = np.sqrt(np.maximum(1.0 - r2 / 4.0, 0.0))
    return np.stack([k * X, k * Y, 1.0 - r2 / 2.0], axis=-1)


def lambert_forward(v):
    """Lambert coordinates of unit vectors about +z (valid away from -z)."""
    v = np.asarray(v, dtype=float)
    k = np.sqrt(2.0 / (1.0 + v[..., 2]))
    return k * v[..., 0], k * v[..., 1]


@dataclass(frozen=True)
class SphereGrid:
    """Two-chart equal-area grid; arrays are indexed by cell id order."""

    N: int
    chart: np.ndarray  # 0 north, 1 south
    ij: np.ndarray  # (n, 2) square indices within the chart
    directions: np.ndarray  # (n, 3)
    areas: np.ndarray  # steradians

    @classmethod
    def build(cls, N):
        if N < 8:
            raise ValueError("grid resolution N must be >= 8")
        h = 2.0 * SQRT2 / N
        edges = -SQRT2 + h * np.arange(N + 1)
        I, J = np.meshgrid(np.arange(N), np.arange(N), indexing="ij")
        I = I.ravel()
        J = J.ravel()
        area = rect_disc_area(edges[I], edges[I + 1], edges[J], edges[J + 1], SQRT2)
        keep = area > 1e-15
        I, J, area = I[keep], J[keep], area[keep]
        cx = edges[I] + 0.5 * h
        cy = edges[J] + 0.5 * h
        north = lambert_inverse(cx, cy)
        north /= np.linalg.norm(north, axis=1)[:, None]
        n = len(I)
        chart = np.repeat([0, 1], n)
        ij = np.tile(np.stack([I, J], axis=1), (2, 1))
        dirs = np.concatenate([north, -north])
        areas = np.concatenate([area, area])
        for arr in (chart, ij, dirs, areas):
            arr.setflags(write=False)
        return cls(int(N), chart, ij, dirs, areas)

    def __len__(self):
        return len(self.chart)

    @property
    def step(self):
        return 2.0 * SQRT2 / self.N

    def index_map(self):
        """(2, N, N) array of cell ids, -1 where no cell exists."""
        out = -np.ones((2, self.N, self.N), dtype=np.int64)
        out[self.chart, self.ij[:, 0], self.ij[:, 1]] = np.arange(len(self))
        return out

    def antipode(self):
        """Cell id of the antipodal cell, cell by cell."""
        n = len(self) // 2
        return np.concatenate([np.arange(n, 2 * n), np.arange(n)])

    def neighbours(self):
        """Adjacency lists: 4-neighbours within a chart plus pairs across the equator."""
        idx = self.index_map()
        nb = [set() for _ in range(len(self))]
        for c in (0, 1):
            m = idx[c]
            for di, dj in ((1, 0), (0, 1)):
                a = m[: self.N - di, : self.N - dj]
                b = m[di:, dj:]
                ok = (a >= 0) & (b >= 0)
                for x, y in zip(a[ok], b[ok]):
                    nb[x].add(int(y))
                    nb[y].add(int(x))
        # seam: north point P on the circle meets south point -P
        t = np.linspace(0.0, 2 * np.pi, 16 * self.N, endpoint=False)
        rad = SQRT2 * (1.0 - 1e-9)
        P = rad * np.stack([np.cos(t), np.sin(t)], axis=1)
        h = self.step

        def cell_of(c, pts):
            k = np.clip(np.floor((pts + SQRT2) / h).astype(int), 0, self.N - 1)
            return idx[c, k[:, 0], k[:, 1]]

        a = cell_of(0, P)
        b = cell_of(1, -P)
        for x, y in zip(a, b):
            if x >= 0 and y >= 0:
                nb[x].add(int(y))
                nb[y].add(int(x))
        return [sorted(s) for s in nb]

    def angles(self):
        """Polar angle theta and azimuth phi of every cell direction (radians)."""
        d = self.directions
        return np.arccos(np.clip(d[:, 2], -1, 1)), np.arctan2(d[:, 1], d[:, 0])


# ---------------------------------------------------------------------------
# map


@dataclass
class Zone:
    key: str
    area: float
    cells: list

    @property
    def label(self):
        return ZoneLabel.from_key(self.key)


@dataclass
class ZoneMap:
    """Per-cell labels on a :class:`SphereGrid` plus scan settings.

    ``keys`` are label keys ('m:a,b,c', 'trivial', 'undetermined', 'rational');
    ``ladder`` maps each budget to its per-cell keys.
    """

    grid: SphereGrid
    keys: list
    diagnostics: list = field(default_factory=list)
    ladder: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def area_of(self, predicate):
        return float(sum(a for a, k in zip(self.grid.areas, self.keys) if predicate(k)))

    @property
    def mu0(self):
        return self.area_of(lambda k: k == "trivial")

    @property
    def undetermined_area(self):
        return self.area_of(lambda k: k == "undetermined")

    @property
    def rational_area(self):
        return self.area_of(lambda k: k == "rational")

    def measures(self):
        """Area per integer label (summed over its zones)."""
        out = {}
        for a, k in zip(self.grid.areas, self.keys):
            if k.startswith("m:"):
                out[k] = out.get(k, 0.0) + float(a)
        return dict(sorted(out.items(), key=lambda kv: (-kv[1], kv[0])))

    def undetermined_by_budget(self):
        areas = self.grid.areas
        return {float(S): float(sum(a for a, k in zip(areas, keys) if k == "undetermined"))
                for S, keys in sorted(self.ladder.items())}


def cluster_zones(zmap: ZoneMap, include_undetermined=False):
    """Connected clusters of equal label, sorted by area (descending).

    Integer and trivial labels form zones; undetermined and rational cells
    are left out unless ``include_undetermined``.
    """
    nb = zmap.grid.neighbours()
    keys = zmap.keys
    seen = np.zeros(len(keys), dtype=bool)
    zones = []
    for start in range(len(keys)):
        k = keys[start]
        if seen[start]:
            continue
        if not include_undetermined and k in ("undetermined", "rational"):
            continue
        comp = [start]
        seen[start] = True
        stack = [start]
        while stack:
            c = stack.pop()
            for n in nb[c]:
                if not seen[n] and keys[n] == k:
                    seen[n] = True
                    comp.append(n)
                    stack.append(n)
        comp.sort()
        zones.append(Zone(k, float(zmap.grid.areas[comp].sum()), comp))
    zones.sort(key=lambda z: (-z.area, z.key, z.cells[0]))
    return zones


def measure_deficit(zmap: ZoneMap):
    """4 pi minus the trivial area and all integer-zone areas."""
    return FOUR_PI - zmap.mu0 - sum(zmap.measures().values())


# ---------------------------------------------------------------------------
# scanning


def _threads(threads):
    if threads is not None:
        return max(1, int(threads))
    env = os.environ.get("FERMIZONES_THREADS")
    return max(1, int(env)) if env else 1


def cell_seeds(d, eps_f, B, tri, cell_id, seed, n=N_SEEDS):
    """Initial conditions for one cell; the random part is drawn from (seed, cell id) only."""
    rng = np.random.default_rng([int(seed), int(cell_id)])
    return default_seeds(d, eps_f, B, tri, rng, n)


def scan_sphere(d: DispersionRelation, eps_f, N, budgets=(900.0,), seed=0, w_max=W_MAX,
                l_min=L_MIN, max_height=MAX_HEIGHT, delta=DEFAULT_DELTA, n_seeds=N_SEEDS,
                threads=None, cells=None, progress=None):
    """Label every cell of the N-grid at each budget; the map carries the top budget.

    Parameters
    ----------
    budgets : sequence of arc-length budgets S (the ladder); all are recorded.
    seed : initial conditions of cell k come from ``default_rng([seed, k])``.
    threads : worker threads (default: FERMIZONES_THREADS or 1).  Results
        are merged in cell order, so the map does not depend on it.
    cells : optional subset of cell ids (others are left 'undetermined' with
        reason 'not scanned').
    """
    lo, hi = energy_range(d)
    if not (lo < eps_f < hi):
        raise DegenerateLevel(f"eps_F={eps_f} outside ({lo:.6g}, {hi:.6g})")
    grid = SphereGrid.build(N)
    tri = triangulate_level(d, eps_f, SEED_RESOLUTION)
    budgets = sorted(float(S) for S in budgets)
    todo = range(len(grid)) if cells is None else sorted(int(c) for c in cells)

    def work(cid):
        B = grid.directions[cid]
        if detect_rational(B) is not None:
            return ["rational"] * len(budgets), {"reason": "rational"}
        seeds = cell_seeds(d, eps_f, B, tri, cid, seed, n_seeds)
        keys = []
        diag = {}
        for S in budgets:
            lab = label_from_asymptotics(d, eps_f, B, delta=delta, budget=S, seeds=seeds,
                                         max_height=max_height, w_max=w_max, l_min=l_min)
            keys.append(lab.key)
            diag = _diagnostics(lab)
        return keys, diag

    results = {}
    nthreads = _threads(threads)
    if nthreads == 1:
        for n, cid in enumerate(todo):
            results[cid] = work(cid)
            if progress:
                progress(n + 1, len(todo))
    else:
        with ThreadPoolExecutor(nthreads) as ex:
            for n, (cid, res) in enumerate(zip(todo, ex.map(work, todo))):
                results[cid] = res
                if progress:
                    progress(n + 1, len(todo))

    ladder = {S: [] for S in budgets}
    diags = []
    for cid in range(len(grid)):
        keys, diag = results.get(cid, (["undetermined"] * len(budgets), {"reason": "not scanned"}))
        for S, k in zip(budgets, keys):
            ladder[S].append(k)
        diags.append(diag)
    config = {"eps_f": float(eps_f), "N": int(N), "budgets": budgets, "seed": int(seed),
              "w_max": float(w_max), "l_min": float(l_min), "max_height": int(max_height),
              "delta_deg": float(np.degrees(delta)), "n_seeds": int(n_seeds),
              "surface": d.to_json()}
    return ZoneMap(grid, list(ladder[budgets[-1]]), diags, ladder, config)


def _diagnostics(lab: ZoneLabel):
    info = lab.info
    out = {"reason": lab.reason}
    for key in ("n_compact", "method", "candidate"):
        if key in info:
            out[key] = info[key]
    if "residuals" in info:
        out["residual"] = float(max(info["residuals"]))
    if "across_boundary" in info:
        out["across_boundary"] = True
    return out


# ---------------------------------------------------------------------------
# fractal diagnostic


@dataclass
class BoxCount:
    dimension: float
    band: tuple  # 95% interval of the slope
    sizes: list  # box side in cells
    counts: list
    residual: float

    def to_json(self):
        return {"dimension": self.dimension, "band": list(self.band), "sizes": self.sizes,
                "counts": self.counts, "residual": self.residual}


def boundary_dimension(zmap: ZoneMap, refinements=3):
    """Box-counting slope of the undetermined cell set over dyadic box sizes.

    Boxes of side 1, 2, ..., 2**refinements cells are laid on both chart
    grids; the slope of log(count) against -log(side) is the estimate, with
    a 95% t-interval from the regression.  Returns None for an empty set.
    """
    N = zmap.grid.N
    idx = zmap.grid.index_map()
    und = np.zeros((2, N, N), dtype=bool)
    mask = np.array([k == "undetermined" for k in zmap.keys])
    und[zmap.grid.chart[mask], zmap.grid.ij[mask, 0], zmap.grid.ij[mask, 1]] = True
    und &= idx >= 0
    if not und.any():
        return None
    sizes, counts = [], []
    for r in range(refinements + 1):
        b = 2 ** r
        nb = -(-N // b)
        pad = np.zeros((2, nb * b, nb * b), dtype=bool)
        pad[:, :N, :N] = und
        boxes = pad.reshape(2, nb, b, nb, b).any(axis=(2, 4))
        sizes.append(b)
        counts.append(int(boxes.sum()))
    x = -np.log(np.array(sizes, dtype=float))
    y = np.log(np.array(counts, dtype=float))
    fit = stats.linregress(x, y)
    t = stats.t.ppf(0.975, len(x) - 2)
    resid = float(np.sqrt(np.mean((y - (fit.intercept + fit.slope * x)) ** 2)))
    slope = float(fit.slope)
    return BoxCount(slope, (slope - t * fit.stderr, slope + t * fit.stderr), sizes, counts, resid)


# ---------------------------------------------------------------------------
# Fermi-level sweep


@dataclass
class SweepRow:
    eps_f: float
    label: Optional[ZoneLabel]
    genus: Optional[list] = None
    error: Optional[str] = None

    @property
    def key(self):
        return "error" if self.label is None else self.label.key


def fermi_sweep(d: DispersionRelation, B, levels, budget=900.0, seed=0, genus=True,
                carrier_resolution=24, max_height=MAX_HEIGHT):
    """Label (and optionally carrier genera) at each Fermi level for a fixed B.

    Errors at a level (degenerate level, carrier failures) are recorded in
    the row instead of raised.
    """
    from .carriers import extract_carriers, genus_of_carriers
    from .errors import EmptyCarrier, FermiZonesError

    rows = []
    for k, eps in enumerate(levels):
        eps = float(eps)
        try:
            if check_regular(d, eps, 32) < 1e-3:
                raise DegenerateLevel(f"critical level eps_F={eps}")
            tri = triangulate_level(d, eps, SEED_RESOLUTION)
            rng = np.random.default_rng([int(seed), k])
            seeds = default_seeds(d, eps, B, tri, rng)
            lab = label_from_asymptotics(d, eps, B, budget=budget, seeds=seeds,
                                         max_height=max_height)
        except FermiZonesError as exc:
            rows.append(SweepRow(eps, None, error=str(exc)))
            continue
        row = SweepRow(eps, lab)
        if genus and lab.is_integer:
            try:
                carriers = extract_carriers(triangulate_level(d, eps, carrier_resolution), B)
                row.genus = genus_of_carriers(carriers)
            except EmptyCarrier:
                row.genus = []
            except FermiZonesError as exc:
                row.error = str(exc)
        rows.append(row)
    return rows


def constant_intervals(rows):
    """Maximal runs of consecutive levels with the same label key."""
    out = []
    for r in rows:
        if out and out[-1]["key"] == r.key:
            out[-1]["hi"] = r.eps_f
            out[-1]["count"] += 1
        else:
            out.append({"key": r.key, "lo": r.eps_f, "hi": r.eps_f, "count": 1})
    return out


# ---------------------------------------------------------------------------
# export


def summary(zmap: ZoneMap, zones=None):
    zones = cluster_zones(zmap) if zones is None else zones
    return {
        "format_version": FORMAT_VERSION,
        "config": zmap.config,
        "mu0": zmap.mu0,
        "zones": [{"m": ZoneLabel.from_key(z.key).to_json(), "area": z.area, "cells": len(z.cells)}
                  for z in zones],
        "measures": {k: v for k, v in zmap.measures().items()},
        "undetermined_area": zmap.undetermined_area,
        "rational_area": zmap.rational_area,
        "deficit": measure_deficit(zmap),
        "ladder": {str(S): a for S, a in zmap.undetermined_by_budget().items()},
    }


def export_map(zmap: ZoneMap, outdir, stem="zonemap"):
    """Write ``stem``.csv (one row per cell) and ``stem``.json (summary)."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    theta, phi = zmap.grid.angles()
    budgets = sorted(zmap.ladder)
    with open(outdir / f"{stem}.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cell_id", "chart", "i", "j", "theta", "phi", "area", "label"]
                   + [f"label_S{S:g}" for S in budgets] + ["diagnostics"])
        for c in range(len(zmap.grid)):
            w.writerow([c, int(zmap.grid.chart[c]), int(zmap.grid.ij[c, 0]), int(zmap.grid.ij[c, 1]),
                        repr(float(theta[c])), repr(float(phi[c])), repr(float(zmap.grid.areas[c])),
                        zmap.keys[c]] + [zmap.ladder[S][c] for S in budgets]
                       + [json.dumps(zmap.diagnostics[c], sort_keys=True) if zmap.diagnostics else "{}"])
    (outdir / f"{stem}.json").write_text(json.dumps(summary(zmap), indent=2, sort_keys=True))


def load_map(path_csv, config=None):
    """Rebuild a :class:`ZoneMap` from an exported CSV."""
    rows = list(csv.DictReader(open(path_csv)))
    N = None
    if config is None:
        js = Path(path_csv).with_suffix(".json")
        if js.exists():
            config = json.loads(js.read_text()).get("config", {})
    config = config or {}
    N = int(config["N"]) if "N" in config else None
    if N is None:
        raise ValueError("grid resolution unknown: pass config with 'N'")
    grid = SphereGrid.build(N)
    if len(rows) != len(grid):
        raise ValueError(f"{path_csv}: {len(rows)} rows for a grid of {len(grid)} cells")
    keys = [r["label"] for r in rows]
    ladder = {}
    for col in rows[0]:
        if col.startswith("label_S"):
            ladder[float(col[7:])] = [r[col] for r in rows]
    diags = [json.loads(r["diagnostics"]) for r in rows]
    return ZoneMap(grid, keys, diags, ladder, config)
