from __future__ import annotations

import csv
import json
import subprocess
import sys
import xml.etree.ElementTree as ET
from pathlib import Path

import pytest

from chshforge import cli
from chshforge.topology import load_calibration


def _gen(tmp_path, preset, seed, name):
    out = tmp_path / name
    assert cli.main(["gen-calibration", "--preset", preset, "--seed", str(seed), "--out", str(out)]) == 0
    return out


def test_gen_calibration_ideal_all_zero(tmp_path):
    doc = json.loads(_gen(tmp_path, "ideal", 0, "ideal.json").read_text())
    assert doc["num_qubits"] == 127 and len(doc["edges"]) == 144
    for q in doc["qubits"]:
        assert q["p10"] == q["p01"] == q["drift_rad_per_s"] == 0
    assert all(e["error"] == 0 for e in doc["edges_error"])


def test_gen_calibration_deterministic(tmp_path):
    a = _gen(tmp_path, "eagle-like", 7, "a.json").read_bytes()
    b = _gen(tmp_path, "eagle-like", 7, "b.json").read_bytes()
    c = _gen(tmp_path, "eagle-like", 8, "c.json").read_bytes()
    assert a == b and a != c


def test_gen_calibration_mean_error(tmp_path):
    cal = load_calibration(_gen(tmp_path, "eagle-like", 3, "e.json"))
    errs = list(cal.edge_errors.values())
    assert 5e-3 <= sum(errs) / len(errs) <= 1.2e-2


def test_gen_calibration_unwritable(tmp_path, capsys):
    assert cli.main(["gen-calibration", "--out", str(tmp_path / "nope" / "x.json")]) != 0
    assert "nope" in capsys.readouterr().err


def _svg_ok(path: Path):
    root = ET.parse(path).getroot()
    assert root.tag.endswith("svg")
    text = path.read_text()
    assert "href" not in text and "url(" not in text and "<image" not in text


def test_sweep_ideal(tmp_path):
    out = tmp_path / "run"
    argv = ["sweep", "--calibration", "ideal", "--lengths", "2..6", "--shots", "1000", "--reps", "3",
            "--no-mitigation", "--out-dir", str(out)]
    assert cli.main(argv) == 0
    res = json.loads((out / "results.json").read_text())
    for per in res["per_strategy"].values():
        assert len(per) == 5
        for entry in per.values():
            assert entry["max_s_mean"] > 2.7
    rows = list(csv.reader((out / "results.csv").open()))
    assert len(rows) - 1 == 3 * 5 * 3
    for svg in ("max_s_vs_distance.svg", "scurves.svg"):
        _svg_ok(out / svg)
    assert "Quantum Domain" in (out / "max_s_vs_distance.svg").read_text()
    man = json.loads((out / "manifest.json").read_text())
    listed = {Path(p).name for p in man["outputs"]}
    assert listed == {p.name for p in out.iterdir()}
    assert man["seed"] == 0 and man["config"]["shots"] == 1000

    # re-running from the manifest reproduces every numerical output
    again = tmp_path / "again"
    assert cli.main(["sweep", "--config", str(out / "manifest.json"), "--out-dir", str(again)]) == 0
    for name in ("results.json", "results.csv", "retention.csv"):
        assert (again / name).read_bytes() == (out / name).read_bytes()


def test_sweep_row_count_eagle_like(tmp_path):
    cal = _gen(tmp_path, "eagle-like", 1, "cal.json")
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"calibration": str(cal), "lengths": [2, 3, 4], "shots": 50, "repetitions": 2, "phase_count": 3}))
    out = tmp_path / "o"
    assert cli.main(["sweep", "--config", str(cfg), "--out-dir", str(out)]) == 0
    rows = list(csv.reader((out / "results.csv").open()))
    assert len(rows) - 1 == 3 * 3 * 2


def test_missing_calibration_file(tmp_path, capsys):
    missing = tmp_path / "absent_cal.json"
    rc = cli.main(["sweep", "--calibration", str(missing), "--out-dir", str(tmp_path)])
    assert rc != 0
    assert str(missing) in capsys.readouterr().err


def test_bad_config(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"shots": 10, "colour": "red"}))
    assert cli.main(["sweep", "--config", str(cfg), "--out-dir", str(tmp_path)]) != 0
    assert "colour" in capsys.readouterr().err
    assert cli.main(["sweep", "--config", str(tmp_path / "none.json")]) != 0


def test_cost_report(tmp_path, capsys):
    assert cli.main(["cost-report", "--out-dir", str(tmp_path)]) == 0
    text = capsys.readouterr().out
    lines = {tuple(l.split()[:2]): l.split() for l in text.splitlines() if l.split()[:1] in (["unitary"], ["dynamic"])}
    assert lines[("unitary", "15")][2] == "79"
    assert lines[("dynamic", "15")][2:4] == ["14", "2"]
    assert "shorter than the unitary one from length" in text
    rows = list(csv.DictReader((tmp_path / "cost_report.csv").open()))
    assert len(rows) == 3 * 14


def test_scurve_command(tmp_path, capsys):
    argv = ["scurve", "--strategy", "post", "--length", "4", "--calibration", "ideal", "--shots", "500", "--out-dir", str(tmp_path)]
    assert cli.main(argv) == 0
    assert "max|S|" in capsys.readouterr().out
    _svg_ok(tmp_path / "scurve_postprocessed_4.svg")
    doc = json.loads((tmp_path / "scurve_postprocessed_4.json").read_text())
    assert doc["retention"] is not None


def test_precedence_flag_env_file(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"shots": 11, "seed": 5, "repetitions": 2}))
    args = cli.build_parser().parse_args(["sweep", "--config", str(cfg), "--shots", "33"])
    c = cli.build_config(args, {"CHSHFORGE_SHOTS": "22", "CHSHFORGE_SEED": "9"})
    assert (c.shots, c.seed, c.repetitions) == (33, 9, 2)
    c = cli.build_config(cli.build_parser().parse_args(["sweep"]), {})
    assert (c.shots, c.repetitions, c.lengths) == (1000, 5, tuple(range(2, 16)))


@pytest.mark.parametrize("text, want", [("2..5", [2, 3, 4, 5]), ("2-4", [2, 3, 4]), ("2,7,9", [2, 7, 9]), ("3", [3])])
def test_parse_lengths(text, want):
    assert cli.parse_lengths(text) == want


def test_unknown_strategy_exit_code(tmp_path, capsys):
    assert cli.main(["scurve", "--strategy", "teleport", "--calibration", "ideal", "--out-dir", str(tmp_path)]) == 2
    assert "teleport" in capsys.readouterr().err


def test_console_script_module():
    r = subprocess.run([sys.executable, "-m", "chshforge.cli", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and "chshforge" in r.stdout


def test_sweep_files_independent_of_threads(tmp_path):
    outs = []
    for w in (1, 4):
        out = tmp_path / f"w{w}"
        argv = ["sweep", "--calibration", "ideal", "--lengths", "3", "--shots", "100", "--reps", "1",
                "--threads", str(w), "--out-dir", str(out)]
        assert cli.main(argv) == 0
        outs.append([(out / f).read_bytes() for f in ("results.json", "results.csv", "retention.csv")])
        assert json.loads((out / "manifest.json").read_text())["config"]["threads"] == w
    assert outs[0] == outs[1]
