import json
import subprocess
import sys

import numpy as np
import pytest

from fermizones.cli import main, render_svg
from fermizones.zones import load_map


def write_cfg(path, **cfg):
    path.write_text(json.dumps(cfg))
    return str(path)


def run(args):
    return main([str(a) for a in args])


def test_label_flat_torus(tmp_path):
    cfg = write_cfg(tmp_path / "c.json", surface="flat_torus", eps_f=0.0, B=[0.3, 0.2, 1.0])
    assert run(["label", "--config", cfg, "--out", tmp_path / "o", "--budget", 100]) == 0
    rep = json.loads((tmp_path / "o" / "label.json").read_text())
    assert rep["label"] == [0, 0, 1]
    man = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert man["format_version"] == 1 and man["command"] == "label"
    assert man["config"]["budgets"] == [100.0] and man["config"]["surface"]["terms"]
    assert "label.json" in man["outputs"]


def test_scan_all_compact_and_byte_identical(tmp_path):
    cfg = write_cfg(tmp_path / "c.json", eps_f=2.5)
    for name in ("a", "b"):
        assert run(["scan", "--config", cfg, "--grid", 8, "--budget", 60,
                    "--out", tmp_path / name]) == 0
    summ = json.loads((tmp_path / "a" / "zonemap.json").read_text())
    assert summ["mu0"] == pytest.approx(4 * np.pi, abs=1e-6)
    assert summ["format_version"] == 1
    for f in ("zonemap.json", "zonemap.csv", "zonemap.svg", "boundary.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    # render from the exported map reproduces the scan's SVG
    assert run(["render", tmp_path / "a" / "zonemap.csv", "--out", tmp_path / "r"]) == 0
    assert (tmp_path / "r" / "zonemap.svg").read_bytes() == (tmp_path / "a" / "zonemap.svg").read_bytes()


def test_separate_processes_agree(tmp_path):
    cfg = write_cfg(tmp_path / "c.json", eps_f=2.5, grid=8, budgets=[60])
    outs = []
    for name in ("p", "q"):
        r = subprocess.run([sys.executable, "-m", "fermizones", "scan", "--config", cfg,
                            "--out", str(tmp_path / name)], capture_output=True, text=True)
        assert r.returncode == 0, r.stderr
        outs.append((tmp_path / name / "zonemap.json").read_bytes())
    assert outs[0] == outs[1]


@pytest.mark.parametrize("cfg,code", [
    ({"bogus": 1}, 2),
    ({"surface": "missing.json"}, 2),
    ({"B": [0, 0, 0]}, 2),
    ({"budgets": []}, 2),
    ({"omega_tau": [0.5]}, 2),
    ({"eps_f": 7.0, "B": [0.1, 0.2, 1.0]}, 2),
    ({"eps_f": 1.0, "B": [0.0, 0.3, 1.0]}, 3),  # critical level: numerical failure
])
def test_exit_codes(tmp_path, capsys, cfg, code):
    path = write_cfg(tmp_path / "c.json", **cfg)
    assert run(["trace", "--config", path, "--out", tmp_path / "o"]) == code
    err = capsys.readouterr().err
    assert err.startswith("fermizones trace:") and "[" in err


def test_missing_config_and_bad_json(tmp_path):
    out = tmp_path / "o"
    assert run(["label", "--config", tmp_path / "none.json", "--out", out]) == 2
    (tmp_path / "bad.json").write_text("{")
    assert run(["label", "--config", tmp_path / "bad.json", "--out", out]) == 2
    assert run(["render", tmp_path / "none.csv", "--out", out]) == 2
    assert not out.exists()


def test_trace_sweep_sigma_m4(tmp_path):
    surf = tmp_path / "surf.json"
    surf.write_text(json.dumps({"terms": [{"k": [0, 0, 1], "a": 1.0, "phi": 0.0}]}))
    cfg = write_cfg(tmp_path / "c.json", surface="surf.json", B=[0.3, 0.2, 1.0],
                    levels={"start": -0.5, "stop": 0.5, "num": 3}, samples=4,
                    omega_tau=[1.0, 3.0, 10.0, 31.6, 100.0],
                    m4={"n_planes": 1, "per_plane": 2})
    assert run(["trace", "--config", cfg, "--out", tmp_path / "t", "--budget", 20]) == 0
    tj = json.loads((tmp_path / "t" / "trajectory.json").read_text())
    assert tj["class"] == "open" and tj["drift"]["eps"] < 1e-8
    assert run(["sweep", "--config", cfg, "--out", tmp_path / "w", "--budget", 100]) == 0
    rows = (tmp_path / "w" / "sweep.csv").read_text().splitlines()
    assert len(rows) == 4 and all("m:0,0,1" in r for r in rows[1:])
    assert run(["sigma", "--config", cfg, "--out", tmp_path / "s", "--budget", 100]) == 0
    sig = json.loads((tmp_path / "s" / "sigma.json").read_text())
    assert sig["label"] == "m:0,0,1" and sig["fit"]["exponents"]["eig1"] == pytest.approx(0, abs=1e-6)
    assert run(["m4", "--config", cfg, "--out", tmp_path / "m"]) == 0
    q = json.loads((tmp_path / "m" / "quasi4.json").read_text())
    assert len(q["components"]) == 2


def test_svg_colours_and_shape(tmp_path):
    cfg = write_cfg(tmp_path / "c.json", eps_f=2.5)
    run(["scan", "--config", cfg, "--grid", 8, "--budget", 40, "--out", tmp_path / "a"])
    z = load_map(tmp_path / "a" / "zonemap.csv")
    z.keys = ["m:0,0,1" if i % 2 else "undetermined" for i in range(len(z.keys))]
    svg = render_svg(z)
    assert svg.startswith("<svg") and svg.count("<polygon") == len(z.keys)
    assert "#000000" in svg and "hsl(" in svg
