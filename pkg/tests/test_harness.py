from __future__ import annotations

import csv
import io
import json
import math

import numpy as np
import pytest

from chshforge.harness import (
    CellResult,
    DistanceSweepResult,
    ExperimentConfig,
    HarnessError,
    compute_s,
    cost_table,
    crossover_length,
    duration_threshold,
    ideal_retention,
    last_violation_length,
    postselect_filter,
    resolve_calibration,
    run_scurve,
    sweep_distance,
    tensored_postselect,
)
from chshforge.mitigation import ConfusionSet, QuasiDistribution, mitigate
from chshforge.simulator import Counts

import oracle

TSIRELSON = 2 * math.sqrt(2)
IDEAL = dict(calibration="ideal", mitigation=False)


def _sine_fit(phases, s):
    basis = np.column_stack([np.sin(phases), np.cos(phases)])
    coef, *_ = np.linalg.lstsq(basis, s, rcond=None)
    resid = s - basis @ coef
    return float(np.hypot(*coef)), float(np.sqrt(np.mean(resid**2)))


@pytest.mark.parametrize(
    "values, s",
    [
        ((1, 0, 0, 1), 2.0),
        ((math.sqrt(2) / 2, -math.sqrt(2) / 2, math.sqrt(2) / 2, math.sqrt(2) / 2), TSIRELSON),
        ((0, 0, 0, 0), 0.0),
    ],
)
def test_compute_s_examples(values, s):
    assert compute_s(values) == pytest.approx(s, abs=1e-12)
    assert compute_s(dict(zip(("ZZ", "ZX", "XZ", "XX"), values))) == pytest.approx(s, abs=1e-12)


def test_compute_s_matches_analytic_curve():
    for phi in np.linspace(-2, 9, 23):
        assert compute_s(oracle.chsh_ideal(phi)) == pytest.approx(TSIRELSON * math.sin(phi + math.pi / 4), abs=1e-12)


def test_compute_s_missing_observable():
    with pytest.raises(HarnessError, match="XX"):
        compute_s({"ZZ": 1, "ZX": 0, "XZ": 0})
    with pytest.raises(HarnessError):
        compute_s([1, 0, 0])


def test_postselect_example():
    # register order a, b, z (empty), x
    counts = Counts({"110": 600, "011": 400}, {"a": 1, "b": 1, "z": 0, "x": 1})
    kept, retention = postselect_filter(counts)
    assert kept.counts == {"11": 600}
    assert retention == pytest.approx(0.6)


def test_postselect_all_odd():
    counts = Counts({"0010": 7, "1101": 3}, {"a": 1, "b": 1, "z": 1, "x": 1})
    kept, retention = postselect_filter(counts)
    assert kept.shots == 0 and retention == 0.0


def test_postselect_needs_registers():
    with pytest.raises(HarnessError, match="'z'"):
        postselect_filter(Counts({"00": 1}, {"a": 1, "b": 1}))


def test_postselect_quasi_renormalized():
    q = QuasiDistribution({"0000": 0.5, "1100": 0.3, "0011": 0.2}, {"a": 1, "b": 1, "z": 1, "x": 1}, 10)
    kept, retention = postselect_filter(q)
    assert retention == pytest.approx(0.8)
    assert kept.probs == pytest.approx({"00": 0.5 / 0.8, "11": 0.3 / 0.8})


def test_tensored_postselect_matches_full_space_mitigation():
    rng = np.random.default_rng(5)
    regs = {"a": 1, "b": 1, "z": 2, "x": 3}
    keys = rng.choice(2**7, 60, replace=False)
    counts = Counts({format(int(k), "07b"): int(v) for k, v in zip(keys, rng.integers(1, 40, 60))}, regs)
    conf = ConfusionSet.from_flips({q: (0.06 * rng.random(), 0.06 * rng.random()) for q in range(7)})
    e, kept = tensored_postselect(counts, conf, list(range(7)))
    dist, ret = postselect_filter(mitigate(counts, conf, distance=None, halo=7, registers=regs))
    assert kept == pytest.approx(ret, abs=1e-9)
    assert e == pytest.approx(dist.probs.get("00", 0) + dist.probs.get("11", 0) - dist.probs.get("01", 0) - dist.probs.get("10", 0), abs=1e-9)


def test_tensored_postselect_identity_equals_raw_filter():
    counts = Counts({"1100": 600, "0101": 400, "0000": 250}, {"a": 1, "b": 1, "z": 1, "x": 1})
    e, kept = tensored_postselect(counts, ConfusionSet.identity(range(4)), list(range(4)))
    assert kept == pytest.approx(850 / 1250)
    assert e == pytest.approx(1.0)


def test_config_validation():
    for bad in (dict(phase_count=1), dict(shots=0), dict(repetitions=0), dict(lengths=(16,)), dict(lengths=())):
        with pytest.raises(HarnessError):
            ExperimentConfig(**bad)
    with pytest.raises(ValueError):
        ExperimentConfig(strategies=("teleport",))
    with pytest.raises(HarnessError, match="post_mitigation"):
        ExperimentConfig(post_mitigation="dense")


def test_config_defaults_and_round_trip():
    cfg = ExperimentConfig()
    assert (cfg.phase_count, cfg.shots, cfg.repetitions) == (31, 10000, 20)
    assert cfg.phases()[0] == pytest.approx(-math.pi / 2) and cfg.phases()[-1] == pytest.approx(3 * math.pi)
    d = json.loads(json.dumps(cfg.to_dict()))
    assert ExperimentConfig.from_dict(d) == cfg
    with pytest.raises(HarnessError, match="bogus"):
        ExperimentConfig.from_dict({**d, "bogus": 1})


def test_resolve_calibration_scale_and_drift():
    cal = resolve_calibration(ExperimentConfig(noise_scale=2.0))
    base = resolve_calibration(ExperimentConfig())
    e = next(iter(base.edge_errors))
    assert cal.edge_error(*e) == pytest.approx(2 * base.edge_error(*e))
    assert all(q.drift_rad_per_s == 0 for q in base.qubits)


@pytest.mark.parametrize("strategy", ["unitary", "dynamic", "postprocessed"])
def test_zero_noise_scurve_is_a_sine(strategy):
    sc = run_scurve(ExperimentConfig(shots=10000, **IDEAL), strategy, 3)
    amp, rms = _sine_fit(sc.phases, sc.s)
    assert abs(amp - TSIRELSON) <= 0.05
    assert rms < 0.05
    assert abs(sc.max_abs_s - TSIRELSON) <= 0.03
    d = min(abs((sc.argmax_phase - t + math.pi) % (2 * math.pi) - math.pi) for t in (math.pi / 4, 5 * math.pi / 4))
    assert d <= sc.phases[1] - sc.phases[0] + 1e-12
    assert np.all(np.abs(sc.expectations) <= 1) and np.all(np.abs(sc.s) <= 4)


def test_post_matches_dynamic_at_zero_noise():
    cfg = ExperimentConfig(shots=10000, **IDEAL)
    post = run_scurve(cfg, "postprocessed", 5)
    dyn = run_scurve(cfg, "dynamic", 5)
    assert np.max(np.abs(post.s - dyn.s)) < 0.1


def test_retention_flat_across_phase_and_basis():
    sc = run_scurve(ExperimentConfig(shots=10000, phase_count=7, **IDEAL), "postprocessed", 6)
    assert np.all(np.abs(sc.retention - 0.25) <= 0.02)
    assert np.ptp(sc.retention) <= 0.02


def test_scurve_serializes():
    sc = run_scurve(ExperimentConfig(shots=200, phase_count=3, **IDEAL), "dynamic", 4)
    d = json.loads(json.dumps(sc.to_dict()))
    assert set(d["expectations"]) == {"ZZ", "ZX", "XZ", "XX"}
    assert len(d["s"]) == 3 and d["retention"] is None


@pytest.mark.slow
def test_sample_calibration_unitary_n12_below_bound():
    cfg = ExperimentConfig()  # default 10k shots; fewer shots bias the grid maximum upward
    assert run_scurve(cfg, "unitary", 12).max_abs_s < 2.0


def _small_sweep():
    cfg = ExperimentConfig(lengths=(2, 3, 4), shots=300, repetitions=2, phase_count=5, **IDEAL)
    return sweep_distance(cfg)


def test_sweep_layout_and_exports():
    res = _small_sweep()
    assert set(res.cells) == {(s, n) for s in ("unitary", "dynamic", "postprocessed") for n in (2, 3, 4)}
    for cell in res.cells.values():
        assert len(cell.max_s) == 2 and cell.max_s_std >= 0
    # identical physical chain for every strategy
    assert {len(res.chains[n]) for n in (2, 3, 4)} == {2, 3, 4}
    for (s, n), cell in res.cells.items():
        assert all(sc.chain == res.chains[n] for sc in cell.scurves)
    doc = json.loads(res.to_json())
    entry = doc["per_strategy"]["postprocessed"]["4"]
    assert {"max_s_mean", "max_s_std", "retention_mean", "scurves"} <= set(entry)
    assert entry["retention_mean"] == pytest.approx(0.25, abs=0.06)
    rows = list(csv.reader(io.StringIO(res.to_csv())))
    assert rows[0] == ["strategy", "length", "rep", "max_s", "retention"]
    assert len(rows) == 1 + 3 * 3 * 2


def test_sweep_reproducible():
    a, b = _small_sweep(), _small_sweep()
    assert a.to_json() == b.to_json()


def _fake(means):
    cells = {}
    for s, vals in means.items():
        for n, v in vals.items():
            cells[(s, n)] = CellResult([v], [1.0])
    return DistanceSweepResult(ExperimentConfig(), cells)


def test_crossover_and_last_violation():
    res = _fake(
        {
            "unitary": {2: 2.6, 3: 2.4, 4: 2.1, 5: 1.9, 6: 1.6},
            "dynamic": {2: 2.2, 3: 2.1, 4: 2.0, 5: 1.95, 6: 1.8},
            "postprocessed": {2: 2.7, 3: 2.5, 4: 2.3, 5: 2.2, 6: 1.99},
        }
    )
    assert crossover_length(res) == 5
    assert last_violation_length(res, "unitary") == 4
    assert last_violation_length(res, "postprocessed") == 5
    assert last_violation_length(_fake({"unitary": {2: 1.5}}), "unitary") is None
    assert crossover_length(_fake({"unitary": {2: 2.0, 3: 2.0}, "dynamic": {2: 1.0, 3: 1.0}})) is None


def test_ideal_retention():
    assert [ideal_retention(n) for n in (2, 3, 4, 15)] == [1.0, 0.5, 0.25, 0.25]
    for n in range(3, 16):
        assert ideal_retention(n) == pytest.approx(oracle.parity_retention(n))


def test_cost_table():
    rows = cost_table(ExperimentConfig(lengths=tuple(range(2, 16))))
    by = {(r.strategy, r.length): r for r in rows}
    assert by[("unitary", 15)].two_qubit_gates == 79
    assert by[("dynamic", 15)].two_qubit_gates == 14
    assert by[("dynamic", 15)].two_qubit_depth == 2
    cal = resolve_calibration(ExperimentConfig())
    d = cal.durations
    assert by[("dynamic", 15)].duration_s >= d.measure_s + d.feedforward_s
    th = duration_threshold(rows)
    assert th is not None
    for n in range(th, 16):
        assert by[("dynamic", n)].duration_s < by[("unitary", n)].duration_s
