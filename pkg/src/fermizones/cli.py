"""Command-line front end.

    fermizones trace  --config run.json
    fermizones label  --config run.json --seed 3
    fermizones scan   --config run.json --grid 32 --budget 300 --out runs/scan
    fermizones sweep  --config run.json
    fermizones sigma  --config run.json
    fermizones m4     --out runs/m4
    fermizones render runs/scan/zonemap.csv

Every run writes ``manifest.json`` (format version, subcommand, the fully
resolved configuration and library versions) next to its outputs.  Nothing
time- or host-dependent is written, so equal configs give equal files.

Exit codes: 0 success, 2 invalid configuration or input, 3 numerical failure.
FERMIZONES_THREADS caps the number of scan worker threads.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import zlib
from importlib import metadata
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, FermiZonesError

FORMAT_VERSION = 1
COMMANDS = ("trace", "label", "scan", "sweep", "sigma", "m4", "render")

DEFAULTS = {
    "surface": "ccc",  # "ccc" | "flat_torus" | path to a surface JSON | inline surface JSON
    "eps_f": 0.0,
    "B": None,  # field direction (3 numbers); "scan" is accepted for scan
    "p0": None,  # trace start (lattice coordinates); default: a seeded point of the level
    "grid": 16,
    "budgets": [900.0],
    "w_max": 6.0,
    "l_min": 50.0,
    "max_height": 12,
    "delta_deg": 0.5,
    "n_seeds": 16,
    "levels": None,  # list, or {"start", "stop", "num"}
    "carriers": False,
    "omega_tau": [float(x) for x in np.logspace(0.0, 2.0, 9)],
    "samples": 64,
    "seed": 0,
    "out": "fermizones_out",
    "m4": {},
}
M4_DEFAULTS = {"n_planes": 10, "per_plane": 10, "budget": 400.0, "radius_deg": 1.0,
               "window": 4.0, "problem": None}

log = logging.getLogger("fermizones")


# ---------------------------------------------------------------------------
# configuration


def _vector(value, n, name):
    try:
        v = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a list of {n} numbers, got {value!r}")
    if v.shape != (n,) or not np.all(np.isfinite(v)):
        raise ConfigError(f"{name} must be a list of {n} finite numbers, got {value!r}")
    return v


def _surface(spec, base_dir):
    from .lattice import DispersionRelation, ccc, flat_torus

    if isinstance(spec, dict):
        try:
            return DispersionRelation.from_json(spec)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad inline surface: {exc}")
    if spec == "ccc":
        return ccc()
    if spec == "flat_torus":
        return flat_torus()
    path = Path(spec)
    if not path.is_absolute():
        path = base_dir / path
    if not path.exists():
        raise ConfigError(f"surface file not found: {path}")
    try:
        return DispersionRelation.from_json(json.loads(path.read_text()))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad surface file {path}: {exc}")


def resolve_config(args):
    """Merge defaults, the JSON config file and command-line flags, then validate.

    Returns the resolved config (JSON-ready; the surface is inlined) and the
    dispersion relation.
    """
    cfg = json.loads(json.dumps(DEFAULTS))
    base_dir = Path.cwd()
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            user = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})")
        if not isinstance(user, dict):
            raise ConfigError(f"{path}: top level must be an object")
        unknown = sorted(set(user) - set(DEFAULTS))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        cfg.update(user)
        base_dir = path.resolve().parent
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.out is not None:
        cfg["out"] = args.out
    if args.budget is not None:
        cfg["budgets"] = [args.budget]
    if args.grid is not None:
        cfg["grid"] = args.grid

    d = _surface(cfg["surface"], base_dir)
    cfg["surface"] = d.to_json()
    try:
        cfg["eps_f"] = float(cfg["eps_f"])
        cfg["seed"] = int(cfg["seed"])
        cfg["grid"] = int(cfg["grid"])
        cfg["max_height"] = int(cfg["max_height"])
        cfg["n_seeds"] = int(cfg["n_seeds"])
        cfg["samples"] = int(cfg["samples"])
        for key in ("w_max", "l_min", "delta_deg"):
            cfg[key] = float(cfg[key])
        cfg["budgets"] = sorted(float(S) for S in cfg["budgets"])
        cfg["omega_tau"] = [float(x) for x in cfg["omega_tau"]]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad config value: {exc}")
    if not cfg["budgets"] or min(cfg["budgets"]) <= 0:
        raise ConfigError("budgets must be a nonempty list of positive arc lengths")
    if cfg["grid"] < 8:
        raise ConfigError("grid N must be >= 8")
    if cfg["seed"] < 0:
        raise ConfigError("seed must be non-negative")
    if cfg["w_max"] <= 0 or cfg["l_min"] <= 0 or cfg["max_height"] < 1 or cfg["n_seeds"] < 1:
        raise ConfigError("w_max, l_min, max_height and n_seeds must be positive")
    if cfg["samples"] < 1:
        raise ConfigError("samples must be positive")
    if not cfg["omega_tau"] or min(cfg["omega_tau"]) < 1.0:
        raise ConfigError("omega_tau must be a nonempty list of values >= 1")
    if cfg["B"] is not None and cfg["B"] != "scan":
        B = _vector(cfg["B"], 3, "B")
        if np.linalg.norm(B) == 0:
            raise ConfigError("B must be nonzero")
        cfg["B"] = B.tolist()
    if cfg["p0"] is not None:
        cfg["p0"] = _vector(cfg["p0"], 3, "p0").tolist()
    if cfg["levels"] is not None:
        lv = cfg["levels"]
        if isinstance(lv, dict):
            try:
                lv = np.linspace(float(lv["start"]), float(lv["stop"]), int(lv["num"])).tolist()
            except (KeyError, TypeError, ValueError):
                raise ConfigError("levels must be a list or {start, stop, num}")
        try:
            cfg["levels"] = [float(x) for x in lv]
        except (TypeError, ValueError):
            raise ConfigError("levels must be a list of numbers")
    if not isinstance(cfg["m4"], dict):
        raise ConfigError("m4 must be an object")
    unknown = sorted(set(cfg["m4"]) - set(M4_DEFAULTS))
    if unknown:
        raise ConfigError(f"unknown m4 keys: {', '.join(unknown)}")
    cfg["m4"] = {**M4_DEFAULTS, **cfg["m4"]}
    cfg["carriers"] = bool(cfg["carriers"])
    return cfg, d


def _need_B(cfg):
    if cfg["B"] is None or cfg["B"] == "scan":
        raise ConfigError("this subcommand needs a field direction B")
    return np.asarray(cfg["B"], dtype=float)


def _need_level(d, eps_f):
    from .lattice import energy_range

    lo, hi = energy_range(d)
    if not lo < eps_f < hi:
        raise ConfigError(f"eps_f={eps_f} outside the band ({lo:.6g}, {hi:.6g})")


# ---------------------------------------------------------------------------
# output


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _write_json(path, obj):
    Path(path).write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def _versions():
    out = {"fermizones": __version__}
    for pkg in ("numpy", "numba", "scipy", "scikit-image"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = None
    return out


def write_manifest(outdir, command, cfg, outputs):
    _write_json(Path(outdir) / "manifest.json",
                {"format_version": FORMAT_VERSION, "command": command, "config": cfg,
                 "outputs": sorted(outputs), "versions": _versions()})


# ---------------------------------------------------------------------------
# subcommands; each returns the list of files written


def cmd_trace(cfg, d, out):
    from .carriers import sample_surface_points
    from .lattice import triangulate_level
    from .tracer import classify, export_trajectory, trace

    _need_level(d, cfg["eps_f"])
    B = _need_B(cfg)
    if cfg["p0"] is None:
        t = triangulate_level(d, cfg["eps_f"], 24)
        p0 = sample_surface_points(t, 1, np.random.default_rng(cfg["seed"]))[0]
    else:
        p0 = np.asarray(cfg["p0"])
    traj = trace(d, cfg["eps_f"], B, p0, budget=cfg["budgets"][-1])
    cls = classify(traj, w_max=cfg["w_max"], l_min=cfg["l_min"])
    export_trajectory(traj, cls, out)
    log.info("trace: %s, arc %.4g, drift %.2e", cls.kind, traj.arc_length,
             max(traj.eps_drift, traj.casimir_drift))
    return ["trajectory.csv", "trajectory.json"]


def cmd_label(cfg, d, out):
    from .carriers import (SEED_RESOLUTION, carrier_analysis, carrier_report, default_seeds,
                           label_from_asymptotics)
    from .lattice import triangulate_level

    _need_level(d, cfg["eps_f"])
    B = _need_B(cfg)
    rng = np.random.default_rng(cfg["seed"])
    t = triangulate_level(d, cfg["eps_f"], SEED_RESOLUTION)
    seeds = default_seeds(d, cfg["eps_f"], B, t, rng, cfg["n_seeds"])
    lab = label_from_asymptotics(d, cfg["eps_f"], B, delta=np.radians(cfg["delta_deg"]),
                                 budget=cfg["budgets"][-1], seeds=seeds,
                                 max_height=cfg["max_height"], w_max=cfg["w_max"],
                                 l_min=cfg["l_min"])
    report = {"format_version": FORMAT_VERSION, "B": cfg["B"], "eps_f": cfg["eps_f"],
              "label": lab.to_json(), "key": lab.key, "reason": lab.reason, "info": lab.info}
    _write_json(out / "label.json", report)
    files = ["label.json"]
    if cfg["carriers"]:
        from .errors import EmptyCarrier

        try:
            c = carrier_analysis(d, cfg["eps_f"], B, rng=np.random.default_rng(cfg["seed"]))
        except EmptyCarrier:
            c = None
        _write_json(out / "carriers.json", carrier_report(c, lab))
        files.append("carriers.json")
    log.info("label: %s", lab.key)
    return files


def cmd_scan(cfg, d, out):
    from .zones import boundary_dimension, export_map, scan_sphere

    step = max(1, cfg["grid"] // 4)

    def progress(n, total):
        if n % step == 0 or n == total:
            log.info("scan: %d/%d cells", n, total)

    zmap = scan_sphere(d, cfg["eps_f"], cfg["grid"], budgets=cfg["budgets"], seed=cfg["seed"],
                       w_max=cfg["w_max"], l_min=cfg["l_min"], max_height=cfg["max_height"],
                       delta=np.radians(cfg["delta_deg"]), n_seeds=cfg["n_seeds"],
                       progress=progress)
    zmap.config["surface"] = cfg["surface"]
    export_map(zmap, out)
    bc = boundary_dimension(zmap)
    _write_json(out / "boundary.json", {"format_version": FORMAT_VERSION,
                                        "box_count": None if bc is None else bc.to_json()})
    (out / "zonemap.svg").write_text(render_svg(zmap))
    return ["zonemap.csv", "zonemap.json", "boundary.json", "zonemap.svg"]


def cmd_sweep(cfg, d, out):
    from .zones import constant_intervals, fermi_sweep

    B = _need_B(cfg)
    if not cfg["levels"]:
        raise ConfigError("sweep needs 'levels'")
    rows = fermi_sweep(d, B, cfg["levels"], budget=cfg["budgets"][-1], seed=cfg["seed"],
                       genus=cfg["carriers"], max_height=cfg["max_height"])
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["eps_f", "label", "genus", "error"])
        for r in rows:
            w.writerow([repr(r.eps_f), r.key,
                        "" if r.genus is None else " ".join(str(g) for g in r.genus),
                        r.error or ""])
    _write_json(out / "sweep.json", {"format_version": FORMAT_VERSION, "B": cfg["B"],
                                     "intervals": constant_intervals(rows)})
    return ["sweep.csv", "sweep.json"]


def cmd_sigma(cfg, d, out):
    from .carriers import SEED_RESOLUTION, default_seeds, label_from_asymptotics
    from .errors import InsufficientRange, UndeterminedLabel
    from .lattice import triangulate_level
    from .transport import chambers_estimate, fit_power_law, predict_sigma_limit, write_sigma_csv

    _need_level(d, cfg["eps_f"])
    B = _need_B(cfg)
    rng = np.random.default_rng(cfg["seed"])
    t = triangulate_level(d, cfg["eps_f"], SEED_RESOLUTION)
    lab = label_from_asymptotics(d, cfg["eps_f"], B, budget=cfg["budgets"][-1],
                                 seeds=default_seeds(d, cfg["eps_f"], B, t, rng, cfg["n_seeds"]),
                                 max_height=cfg["max_height"])
    try:
        pred = predict_sigma_limit(lab, B)
    except UndeterminedLabel:
        pred = None
    res = chambers_estimate(d, cfg["eps_f"], B, cfg["omega_tau"], samples=cfg["samples"],
                            seed=cfg["seed"])
    eta = None if pred is None else pred.eta_plane
    write_sigma_csv(res, out / "sigma.csv", eta)
    report = {"format_version": FORMAT_VERSION, "B": cfg["B"], "label": lab.key,
              "prediction": None if pred is None else pred.to_json(), "n_used": res.n_used,
              "errors": res.errors, "max_drift": res.max_drift}
    try:
        fit = fit_power_law(res.omega_tau, res.tensors)
        report["fit"] = {"exponents": fit.exponents, "residuals": fit.residuals}
    except InsufficientRange as exc:
        report["fit"] = None
        report["fit_error"] = str(exc)
    _write_json(out / "sigma.json", report)
    return ["sigma.csv", "sigma.json"]


def cmd_m4(cfg, d, out):
    from .quasi4 import Periodic4, Quasi4Problem, designated_problem, theorem_check, write_report

    m4 = cfg["m4"]
    if m4["problem"] is None:
        problem = designated_problem()
    else:
        p = m4["problem"]
        try:
            f = Periodic4.from_terms([(t["k"], t["a"], t.get("phi", 0.0))
                                      for t in p["f"]["terms"]])
            problem = Quasi4Problem(f, _vector(p["l1"], 4, "l1"), _vector(p["l2"], 4, "l2"),
                                    tuple(_vector(p["c"], 2, "c")), float(p.get("level", 0.0)))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad m4 problem: {exc}")
    report = theorem_check(problem, n_planes=int(m4["n_planes"]), per_plane=int(m4["per_plane"]),
                           budget=float(m4["budget"]), seed=cfg["seed"],
                           radius_deg=float(m4["radius_deg"]), window=float(m4["window"]),
                           max_height=cfg["max_height"])
    write_report(report, out / "quasi4.json")
    log.info("m4: %s, n=%s", report.counts(),
             None if report.hyperplane is None else list(report.hyperplane.n))
    return ["quasi4.json"]


def cmd_render(path, out):
    from .zones import load_map

    path = Path(path)
    if not path.exists():
        raise ConfigError(f"map file not found: {path}")
    try:
        zmap = load_map(path)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"cannot read map {path}: {exc}")
    name = path.with_suffix(".svg").name
    (out / name).write_text(render_svg(zmap))
    return [name]


# ---------------------------------------------------------------------------
# SVG


def _label_colour(key):
    """Fill colour: grey trivial, black undetermined, white rational; integer
    labels run from blue (height 1) to red (height >= 8), with a small
    deterministic hue offset so neighbouring labels of equal height differ."""
    if key == "trivial":
        return "#c8c8c8"
    if key == "undetermined":
        return "#000000"
    if not key.startswith("m:"):
        return "#ffffff"
    h = max(abs(int(v)) for v in key[2:].split(","))
    hue = 240.0 - 240.0 * min(h - 1, 7) / 7.0 + (zlib.crc32(key.encode()) % 21 - 10)
    return f"hsl({hue % 360:.0f},70%,55%)"


def render_svg(zmap, size=360):
    """Two stereographic discs (northern and southern hemisphere of B), one
    polygon per grid cell.  The southern disc is viewed from below."""
    from .zones import SQRT2, lambert_inverse

    grid = zmap.grid
    h = grid.step
    R = 0.5 * size - 10
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{2 * size}" height="{size + 40}" '
             f'viewBox="0 0 {2 * size} {size + 40}">',
             '<rect width="100%" height="100%" fill="white"/>']
    corners = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)
    for c in range(len(grid)):
        chart = int(grid.chart[c])
        xy = -SQRT2 + h * (grid.ij[c] + corners)
        r = np.linalg.norm(xy, axis=1)
        xy = xy * np.minimum(1.0, SQRT2 / np.maximum(r, 1e-300))[:, None]
        v = lambert_inverse(xy[:, 0], xy[:, 1])
        sx = v[:, 0] / (1.0 + v[:, 2])
        sy = v[:, 1] / (1.0 + v[:, 2])
        if chart == 1:
            sx = -sx
        cx = 0.5 * size + chart * size
        pts = " ".join(f"{cx + R * a:.2f},{0.5 * size - R * b:.2f}" for a, b in zip(sx, sy))
        parts.append(f'<polygon points="{pts}" fill="{_label_colour(zmap.keys[c])}" '
                     f'stroke="none"/>')
    for chart, title in ((0, "B_z > 0"), (1, "B_z < 0")):
        cx = 0.5 * size + chart * size
        parts.append(f'<circle cx="{cx:.2f}" cy="{0.5 * size:.2f}" r="{R:.2f}" fill="none" '
                     'stroke="#444" stroke-width="1"/>')
        parts.append(f'<text x="{cx:.2f}" y="{size + 25}" font-size="14" '
                     f'text-anchor="middle" font-family="sans-serif">{title}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


# ---------------------------------------------------------------------------
# entry point


def build_parser():
    ap = argparse.ArgumentParser(prog="fermizones",
                                 description="Magnetic orbits on periodic Fermi surfaces.")
    ap.add_argument("--version", action="version", version=f"fermizones {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        if name == "render":
            p.add_argument("map", help="zonemap CSV written by 'scan'")
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--seed", type=int, help="random seed (default 0)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--budget", type=float, help="arc-length budget S (replaces the ladder)")
        p.add_argument("--grid", type=int, help="sphere grid resolution N")
        p.add_argument("-v", "--verbose", action="store_true")
    return ap


_RUNNERS = {"trace": cmd_trace, "label": cmd_label, "scan": cmd_scan, "sweep": cmd_sweep,
            "sigma": cmd_sigma, "m4": cmd_m4}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg, d = resolve_config(args)
        if args.command == "render" and not Path(args.map).exists():
            raise ConfigError(f"map file not found: {args.map}")
        out = Path(cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "render":
            cfg["map"] = str(args.map)
            files = cmd_render(args.map, out)
        else:
            files = _RUNNERS[args.command](cfg, d, out)
        write_manifest(out, args.command, cfg, files + ["manifest.json"])
    except ConfigError as exc:
        print(f"fermizones {args.command}: {exc}", file=sys.stderr)
        return 2
    except FermiZonesError as exc:
        print(f"fermizones {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        # argument checks inside the library
        print(f"fermizones {args.command}: [validation] {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
