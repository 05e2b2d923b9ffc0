from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import stats

from chshforge.circuit import Circuit, decompose_swaps
from chshforge.noise import (
    CLEAN_HASH,
    GATE,
    IDLE,
    NoiseError,
    NoiseModel,
    build_slots,
    from_calibration,
    pattern_from_codes,
    sample_codes,
    sample_pattern,
)
from chshforge.rng import ShotStream, derive_seed, uniforms
from chshforge.schedule import Durations, schedule_asap
from chshforge.synthesis import ChshCircuitSpec, build_chsh_circuit, synth_unitary_cnot
from chshforge.topology import (
    CalibrationData,
    CouplingMap,
    QubitCalibration,
    TopologyError,
    bundled_calibration,
    eagle_map,
    find_chain,
    ideal_calibration,
)


def test_uniforms_are_pure_functions_of_coordinates():
    a = uniforms(3, np.arange(10)[:, None], 1, np.arange(5)[None, :])
    b = uniforms(3, np.arange(10)[::-1][:, None], 1, np.arange(5)[None, :])[::-1]
    assert np.array_equal(a, b)
    assert ShotStream(3, 4).uniform(1, 2) == a[4, 2]
    assert 0.0 <= a.min() and a.max() < 1.0


def test_uniforms_distribution():
    u = uniforms(11, np.arange(50000), 1, 0)
    assert stats.kstest(u, "uniform").pvalue > 0.001


def test_derive_seed_order_sensitive():
    assert derive_seed(1, 2) != derive_seed(2, 1)
    assert derive_seed(1, 2) == derive_seed(1, 2)
    assert 0 <= derive_seed(5, 6, 7) < 2**63


def test_ideal_calibration_gives_clean_patterns():
    m = eagle_map()
    cal = ideal_calibration(m)
    chain = find_chain(m, cal, 5)
    model = from_calibration(cal, chain)
    assert model.is_ideal
    circ = build_chsh_circuit(ChshCircuitSpec(5, 0.3, ("X", "Z"), "dynamic"))
    sc = schedule_asap(circ, model.durations)
    for shot in range(50):
        pat = sample_pattern(model, sc, ShotStream(1, shot))
        assert pat.is_clean
        assert pat.hash == CLEAN_HASH


def test_edge_error_copied():
    m = CouplingMap(3, frozenset({(0, 1), (1, 2)}))
    q = (QubitCalibration(),) * 3
    cal = CalibrationData(m, q, {(0, 1): 0.01, (1, 2): 0.02})
    model = from_calibration(cal, (0, 1, 2))
    assert model.edge_p(0, 1) == 0.01
    assert model.edge_p(2, 1) == 0.02
    ratio = cal.durations.x_s / cal.durations.cx_s
    assert model.p1[0] == pytest.approx(0.01 * ratio)
    assert model.p1[1] == pytest.approx(0.015 * ratio)


def test_missing_edge_calibration():
    m = CouplingMap(3, frozenset({(0, 1), (1, 2)}))
    q = (QubitCalibration(),) * 3
    cal = CalibrationData(m, q, {(0, 1): 0.01})
    with pytest.raises(NoiseError, match="edge"):
        from_calibration(cal, (0, 1, 2))
    with pytest.raises(TopologyError):
        from_calibration(cal, (0, 2))


def test_unscheduled_circuit_rejected():
    with pytest.raises(NoiseError, match="scheduled"):
        build_slots(NoiseModel.ideal(2), Circuit(2).cx(0, 1))


def test_two_qubit_pauli_uniform_over_15():
    model = NoiseModel(2, {(0, 1): 1.0})
    sc = schedule_asap(Circuit(2).cx(0, 1))
    slots = build_slots(model, sc)
    assert [s.kind for s in slots] == [GATE]
    codes = sample_codes(slots, 9, np.arange(15000))[:, 0]
    assert codes.min() >= 1 and codes.max() <= 15
    freq = np.bincount(codes, minlength=16)[1:]
    assert stats.chisquare(freq).pvalue > 0.05
    pat = pattern_from_codes(slots, [codes[0]])
    assert len(pat.events) == 1 and len(pat.events[0].params[0]) == 2 and pat.events[0].params[0] != "II"


def _idle_circuit():
    # qubit 0 idles from t_X to t_measure while qubit 1 is read out
    c = Circuit(2, {"a": 1})
    c.h(0).measure(1, "a").cx(0, 1)
    return c


def test_idle_damping_frequency():
    d = Durations()
    t = d.measure_s - d.x_s
    t1 = t / math.log(2)
    model = NoiseModel(2, {(0, 1): 0.0}, t1=(t1, math.inf), t2=(2 * t1, math.inf))
    sc = schedule_asap(_idle_circuit(), d)
    slots = build_slots(model, sc)
    idle = [s for s in slots if s.kind == IDLE]
    assert len(idle) == 1 and idle[0].window.duration == pytest.approx(t)
    assert idle[0].q == 0.0  # T2 = 2 T1: no pure dephasing
    codes = sample_codes(slots, 4, np.arange(10000))[:, idle[0].index]
    assert abs(np.mean(codes & 1) - 0.5) < 0.02
    assert not np.any(codes & 2)


@pytest.mark.parametrize("t", [1e-9, 1e-7, 5e-6, 1e-3])
def test_pure_damping_limit(t):
    model = NoiseModel(1, {}, t1=(1e-4,), t2=(2e-4,))
    assert model.dephase_p(0, t) == 0.0
    assert model.gamma(0, t) == pytest.approx(1 - math.exp(-t / 1e-4))


def test_dephasing_closed_form():
    model = NoiseModel(1, {}, t1=(3e-4,), t2=(2e-4,))
    t = 1e-5
    rate = 1 / 2e-4 - 1 / 6e-4
    assert model.dephase_p(0, t) == pytest.approx(0.5 * (1 - math.exp(-t * rate)))


def test_patterns_deterministic():
    cal = bundled_calibration()
    chain = find_chain(cal.coupling, cal, 6)
    model = from_calibration(cal, chain)
    sc = schedule_asap(decompose_swaps(build_chsh_circuit(ChshCircuitSpec(6, 1.0, ("Z", "X"), "unitary"))), model.durations)
    a = [sample_pattern(model, sc, ShotStream(7, s)) for s in range(200)]
    b = [sample_pattern(model, sc, ShotStream(7, s)) for s in range(200)]
    assert [p.key for p in a] == [p.key for p in b]
    assert [p.hash for p in a] == [p.hash for p in b]
    assert any(not p.is_clean for p in a)
    for p in a:
        for e in p.events:
            assert set(e.qubits) <= set(sc.circuit.instructions[e.instr].qubits) or e.action in ("damping", "dephase", "drift")


def test_expected_two_qubit_error_count():
    cal = bundled_calibration()
    chain = find_chain(cal.coupling, cal, 8)
    model = from_calibration(cal, chain)
    circ = decompose_swaps(synth_unitary_cnot(8))
    sc = schedule_asap(circ, model.durations)
    slots = build_slots(model, sc)
    two = [s for s in slots if s.kind == GATE and len(s.qubits) == 2]
    n = 20000
    codes = sample_codes(slots, 3, np.arange(n))
    observed = int(sum(np.count_nonzero(codes[:, s.index]) for s in two))
    p = np.array([s.p for s in two])
    mean = n * p.sum()
    sigma = math.sqrt(n * np.sum(p * (1 - p)))
    assert abs(observed - mean) <= 3 * sigma


def test_readout_flip_marginals():
    model = NoiseModel(1, {}, p10=(0.03,), p01=(0.07,))
    c = Circuit(1, {"a": 1}).measure(0, "a")
    slots = build_slots(model, schedule_asap(c))
    codes = sample_codes(slots, 2, np.arange(40000))[:, 0]
    assert abs(np.mean(codes & 1) - 0.03) < 3 * math.sqrt(0.03 * 0.97 / 40000)
    assert abs(np.mean(codes >> 1) - 0.07) < 3 * math.sqrt(0.07 * 0.93 / 40000)


def test_noise_model_validation():
    with pytest.raises(NoiseError):
        NoiseModel(1, {}, p10=(1.5,))
    with pytest.raises(NoiseError, match="T2"):
        NoiseModel(1, {}, t1=(1e-4,), t2=(3e-4,))
    with pytest.raises(NoiseError, match="entries"):
        NoiseModel(2, {}, p1=(0.1,))
