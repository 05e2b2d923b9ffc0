"""Command-line entry point: calibrations, S-curves, distance sweeps and cost reports."""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import plots
from .harness import (
    ExperimentConfig,
    HarnessError,
    cost_table,
    crossover_length,
    duration_threshold,
    ideal_retention,
    last_violation_length,
    resolve_calibration,
    retention_table,
    run_scurve,
    sweep_distance,
)
from .topology import CalibrationError, TopologyError, dump_calibration, eagle_like_calibration, eagle_map, ideal_calibration

ENV_PREFIX = "CHSHFORGE_"
PRESETS = ("ideal", "eagle-like")
# desk-scale defaults keep a full three-strategy sweep affordable
DESK_DEFAULTS = {"shots": 1000, "repetitions": 5, "lengths": list(range(2, 16))}
_CAL_NAMES = ("bundled", "ideal", "eagle-like")


def tool_version() -> str:
    try:
        from importlib.metadata import version

        return version("artifact")
    except Exception:
        return "0.1.0"


@dataclass
class RunManifest:
    config: dict
    tool_version: str
    timestamp: str
    outputs: list = field(default_factory=list)
    seed: int = 0
    command: str = ""

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "config": self.config,
            "tool_version": self.tool_version,
            "timestamp": self.timestamp,
            "outputs": list(self.outputs),
            "seed": self.seed,
        }

    def write(self, path: Path) -> None:
        path.write_text(json.dumps(self.to_dict(), indent=2) + "\n")


# ---------------------------------------------------------------------------
# config resolution: flag > environment > file > default
# ---------------------------------------------------------------------------


def parse_lengths(text) -> list[int]:
    if isinstance(text, (list, tuple)):
        return [int(v) for v in text]
    out = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        for sep in ("..", "-"):
            if sep in part:
                a, b = part.split(sep, 1)
                out.extend(range(int(a), int(b) + 1))
                break
        else:
            out.append(int(part))
    return out


def _parse_bool(text) -> bool:
    if isinstance(text, bool):
        return text
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_list(text):
    if isinstance(text, (list, tuple)):
        return list(text)
    return [s.strip() for s in str(text).split(",") if s.strip()]


# option name -> (config field, parser)
_OVERRIDES = {
    "seed": ("seed", int),
    "shots": ("shots", int),
    "reps": ("repetitions", int),
    "lengths": ("lengths", parse_lengths),
    "strategies": ("strategies", _parse_list),
    "mitigation": ("mitigation", _parse_bool),
    "dd": ("dd", _parse_bool),
    "drift": ("drift", _parse_bool),
    "threads": ("threads", int),
    "calibration": ("calibration", str),
    "noise_scale": ("noise_scale", float),
}


def load_config_file(path) -> dict:
    p = Path(path)
    if not p.exists():
        raise HarnessError(f"config file not found: {p}")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise HarnessError(f"config file {p} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise HarnessError(f"config file {p} must hold a JSON object")
    if "config" in doc and "tool_version" in doc:  # a run manifest
        doc = doc["config"]
    return doc


def build_config(args, env=None) -> ExperimentConfig:
    env = os.environ if env is None else env
    values = dict(DESK_DEFAULTS)
    if getattr(args, "config", None):
        values.update(load_config_file(args.config))
    for opt, (name, parse) in _OVERRIDES.items():
        raw = env.get(ENV_PREFIX + opt.upper())
        if raw is not None and raw != "":
            values[name] = parse(raw)
    for opt, (name, parse) in _OVERRIDES.items():
        v = getattr(args, opt, None)
        if v is not None:
            values[name] = parse(v)
    try:
        cfg = ExperimentConfig.from_dict(values)
    except TypeError as exc:
        raise HarnessError(f"config schema violation: {exc}") from None
    src = cfg.calibration
    if src not in _CAL_NAMES and not Path(src).exists():
        raise HarnessError(f"calibration file not found: {src}")
    return cfg


def _out_dir(args, env=None) -> Path:
    env = os.environ if env is None else env
    d = args.out_dir or env.get(ENV_PREFIX + "OUT_DIR") or "."
    p = Path(d)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _timestamp() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())


def _write(path: Path, text: str, outputs: list) -> None:
    path.write_text(text)
    outputs.append(str(path))


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_gen_calibration(out_path, preset: str, seed: int) -> Path:
    if preset not in PRESETS:
        raise HarnessError(f"unknown preset {preset!r}; choose from {PRESETS}")
    cmap = eagle_map()
    cal = ideal_calibration(cmap) if preset == "ideal" else eagle_like_calibration(cmap, seed)
    path = Path(out_path)
    if path.parent and not path.parent.exists():
        raise HarnessError(f"cannot write {path}: directory does not exist")
    path.write_text(dump_calibration(cal))
    return path


def _scurve_panels(result, lengths):
    panels = {}
    for n in lengths:
        curves = {}
        for s in result.config.strategies:
            cell = result.cells.get((s, n))
            if cell and cell.scurves:
                sc = cell.scurves[0]
                curves[s] = (sc.phases.tolist(), sc.s.tolist())
        if curves:
            panels[f"length {n}"] = curves
    return panels


def _report(result) -> str:
    lines = ["# Distance sweep report", ""]
    cfg = result.config
    lines.append(f"shots {cfg.shots}, repetitions {cfg.repetitions}, mitigation {cfg.mitigation}, dd {cfg.dd}, seed {cfg.seed}")
    lines.append("")
    lines.append("| strategy | length | mean max|S| | std | retention |")
    lines.append("|---|---|---|---|---|")
    for (s, n), c in sorted(result.cells.items()):
        lines.append(f"| {s} | {n} | {c.max_s_mean:.4f} | {c.max_s_std:.4f} | {c.retention_mean:.4f} |")
    lines.append("")
    if {"dynamic", "unitary"} <= set(cfg.strategies):
        lines.append(f"crossover length (dynamic >= unitary from here on): {crossover_length(result)}")
    for s in cfg.strategies:
        lines.append(f"largest length with mean max|S| > 2 for {s}: {last_violation_length(result, s)}")
    table = retention_table(result)
    if table:
        lines += ["", "## Post-selection retention", "", "| length | measured | noiseless expectation |", "|---|---|---|"]
        for n, r in table:
            lines.append(f"| {n} | {r:.4f} | {ideal_retention(n):.4f} |")
        lines += [
            "",
            "Only the two register parities are checked, so in the noiseless limit the kept",
            "fraction is 1/2 at n = 3 and 1/4 for every n >= 4. It does not fall off",
            "exponentially with distance; noise only moves it slightly.",
        ]
    return "\n".join(lines) + "\n"


def cmd_sweep(cfg: ExperimentConfig, out_dir: Path, progress=None) -> RunManifest:
    cal = resolve_calibration(cfg)
    result = sweep_distance(cfg, cal, progress)
    outputs: list[str] = []
    _write(out_dir / "results.json", result.to_json(indent=1) + "\n", outputs)
    _write(out_dir / "results.csv", result.to_csv(), outputs)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("length", "retention_mean", "noiseless"))
    for n, r in retention_table(result):
        w.writerow((n, repr(r), repr(ideal_retention(n))))
    _write(out_dir / "retention.csv", buf.getvalue(), outputs)
    series = {
        s: [(n, c.max_s_mean, c.max_s_std) for (st, n), c in sorted(result.cells.items()) if st == s]
        for s in cfg.strategies
    }
    _write(out_dir / "max_s_vs_distance.svg", plots.max_s_plot(series), outputs)
    lengths = list(cfg.scurve_lengths) or sorted({min(cfg.lengths), max(cfg.lengths)})
    _write(out_dir / "scurves.svg", plots.scurve_plot(_scurve_panels(result, lengths)), outputs)
    _write(out_dir / "report.md", _report(result), outputs)
    man = RunManifest(cfg.to_dict(), tool_version(), _timestamp(), outputs, cfg.seed, "sweep")
    man.outputs.append(str(out_dir / "manifest.json"))
    man.write(out_dir / "manifest.json")
    return man


def cmd_scurve(cfg: ExperimentConfig, strategy: str, length: int, out_dir: Path) -> RunManifest:
    cal = resolve_calibration(cfg)
    sc = run_scurve(cfg, strategy, length, 0, cal)
    outputs: list[str] = []
    stem = f"scurve_{sc.strategy}_{length}"
    _write(out_dir / f"{stem}.json", json.dumps(sc.to_dict(), indent=1) + "\n", outputs)
    panel = {f"{sc.strategy}, length {length}": {sc.strategy: (sc.phases.tolist(), sc.s.tolist())}}
    _write(out_dir / f"{stem}.svg", plots.scurve_plot(panel), outputs)
    man = RunManifest(cfg.to_dict(), tool_version(), _timestamp(), outputs, cfg.seed, "scurve")
    man.outputs.append(str(out_dir / "manifest.json"))
    man.write(out_dir / "manifest.json")
    print(f"max|S| = {sc.max_abs_s:.4f} at phi = {sc.argmax_phase:.4f}")
    return man


def format_cost_table(rows) -> str:
    head = ("strategy", "length", "2q gates", "2q depth", "duration (us)")
    body = [(r.strategy, str(r.length), str(r.two_qubit_gates), str(r.two_qubit_depth), f"{r.duration_s * 1e6:.3f}") for r in rows]
    widths = [max(len(h), *(len(b[i]) for b in body)) if body else len(h) for i, h in enumerate(head)]
    fmt = "  ".join(f"{{:<{w}}}" if i == 0 else f"{{:>{w}}}" for i, w in enumerate(widths))
    lines = [fmt.format(*head), fmt.format(*("-" * w for w in widths))]
    lines += [fmt.format(*b) for b in body]
    return "\n".join(lines)


def cmd_cost_report(cfg: ExperimentConfig, out_dir: Path) -> RunManifest:
    cal = resolve_calibration(cfg)
    rows = cost_table(cfg, cal)
    print(format_cost_table(rows))
    thr = duration_threshold(rows)
    if thr is not None:
        print(f"dynamic CNOT is shorter than the unitary one from length {thr} on")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("strategy", "length", "two_qubit_gates", "two_qubit_depth", "duration_s"))
    for r in rows:
        w.writerow((r.strategy, r.length, r.two_qubit_gates, r.two_qubit_depth, repr(r.duration_s)))
    outputs: list[str] = []
    _write(out_dir / "cost_report.csv", buf.getvalue(), outputs)
    man = RunManifest(cfg.to_dict(), tool_version(), _timestamp(), outputs, cfg.seed, "cost-report")
    man.outputs.append(str(out_dir / "manifest.json"))
    man.write(out_dir / "manifest.json")
    return man


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with ExperimentConfig fields (or a run manifest)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--shots", type=int)
    p.add_argument("--reps", type=int, help="repetitions per (strategy, length)")
    p.add_argument("--lengths", help="e.g. 2..15 or 2,4,8")
    p.add_argument("--strategies", help="comma list of unitary, dynamic, postprocessed")
    p.add_argument("--mitigation", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--dd", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--drift", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--threads", type=int)
    p.add_argument("--calibration", help="bundled, ideal, eagle-like, or a calibration JSON path")
    p.add_argument("--noise-scale", dest="noise_scale", type=float)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="chshforge", description="CHSH benchmarks of long-range CNOT realizations")
    ap.add_argument("--version", action="version", version=f"%(prog)s {tool_version()}")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-calibration", help="write a synthetic device calibration")
    g.add_argument("--preset", choices=PRESETS, default="eagle-like")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", default="calibration.json")

    s = sub.add_parser("scurve", help="run one S-curve")
    _common(s)
    s.add_argument("--strategy", default="dynamic")
    s.add_argument("--length", type=int, default=3)

    w = sub.add_parser("sweep", help="distance sweep over strategies and lengths")
    _common(w)

    c = sub.add_parser("cost-report", help="gate counts, depth and scheduled duration")
    _common(c)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "gen-calibration":
            path = cmd_gen_calibration(args.out, args.preset, args.seed)
            print(f"wrote {path}")
            return 0
        cfg = build_config(args)
        out = _out_dir(args)
        if args.command == "scurve":
            cmd_scurve(cfg, args.strategy, args.length, out)
        elif args.command == "sweep":
            def progress(s, n, rep, sc):
                print(f"{s:>13} n={n:<2} rep={rep:<2} max|S|={sc.max_abs_s:.4f}", file=sys.stderr, flush=True)

            cmd_sweep(cfg, out, progress)
        elif args.command == "cost-report":
            cmd_cost_report(cfg, out)
        return 0
    except (HarnessError, CalibrationError, TopologyError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
