from __future__ import annotations

import json
import math

import numpy as np
import pytest

from chshforge.circuit import Circuit, GateKind, decompose_swaps, two_qubit_depth
from chshforge.noise import NoiseModel
from chshforge.schedule import Durations, pad_dd, schedule_asap
from chshforge.simulator import expectation, run_shots
from chshforge.synthesis import ChshCircuitSpec, build_chsh_circuit, synth_dynamic_cnot

D = Durations()


def _check_consistent(sc):
    circ = sc.circuit
    busy = {}
    for i, ins in enumerate(circ):
        if ins.kind is GateKind.BARRIER:
            continue
        for q in ins.qubits:
            busy.setdefault(q, []).append((sc.starts[i], sc.end(i)))
    for spans in busy.values():
        spans.sort()
        for (a0, a1), (b0, b1) in zip(spans, spans[1:]):
            assert b0 >= a1 - 1e-15
    for q, spans in busy.items():
        gaps = sum(b0 - a1 for (_, a1), (b0, _) in zip(spans, spans[1:]))
        assert sum(w.duration for w in sc.windows(q)) == pytest.approx(gaps, abs=1e-15)


def test_h_then_cx():
    sc = schedule_asap(Circuit(2).h(0).cx(0, 1), D)
    assert sc.starts == (0.0, 60e-9)


def test_measure_then_feedforward_gap():
    c = Circuit(2, {"x": 1}).measure(1, "x").cond_pauli("Z", 0, [0])
    sc = schedule_asap(c, D)
    assert sc.starts[1] - sc.starts[0] >= 835e-9 + D.feedforward_s - 1e-18
    assert sc.feedforward_intervals == ((835e-9, 835e-9 + D.feedforward_s),)


def test_parallel_cx():
    sc = schedule_asap(Circuit(4).cx(0, 1).cx(2, 3), D)
    assert sc.starts == (0.0, 0.0)
    assert sc.total_duration == pytest.approx(595e-9)


def test_barrier_synchronizes():
    c = Circuit(2).cx(0, 1).h(0).barrier(0, 1).h(1)
    sc = schedule_asap(c, D)
    assert sc.starts[3] == pytest.approx(595e-9 + 60e-9)


@pytest.mark.parametrize("strategy", ["unitary", "dynamic", "postprocessed"])
@pytest.mark.parametrize("n", [2, 3, 6, 11])
def test_schedule_invariants(strategy, n):
    circ = decompose_swaps(build_chsh_circuit(ChshCircuitSpec(n, 0.7, ("X", "X"), strategy)))
    sc = schedule_asap(circ, D)
    _check_consistent(sc)
    _check_consistent(pad_dd(sc))


def _window_circuit(k):
    # qubit 0 idles for k * t_X between two H gates while qubit 1 runs X gates
    c = Circuit(2).h(0).h(1)
    for _ in range(k):
        c.x(1)
    c.barrier(0, 1).h(0)
    return c


def test_short_window_not_padded():
    sc = schedule_asap(_window_circuit(3), D)
    assert pad_dd(sc).dd_pulses == 0


def test_pulse_placement():
    sc = schedule_asap(_window_circuit(10), D)
    (w,) = sc.windows(0)
    assert w.duration == pytest.approx(10 * D.x_s)
    p = pad_dd(sc)
    assert p.dd_pulses == 2
    xs = sorted(p.starts[i] for i, ins in enumerate(p.circuit) if ins.kind is GateKind.X and ins.qubits == (0,))
    assert xs[0] == pytest.approx(w.start + 2.5 * D.x_s - D.x_s / 2)
    assert xs[1] == pytest.approx(w.start + 7.5 * D.x_s - D.x_s / 2)
    assert p.total_duration == pytest.approx(sc.total_duration)


def test_feedforward_window_not_padded():
    c = Circuit(2, {"x": 1}).h(0).h(1).measure(1, "x").cond_pauli("Z", 0, [0])
    sc = schedule_asap(c, D)
    assert sc.windows(0)[0].duration > 4 * D.x_s
    assert pad_dd(sc).dd_pulses == 0


def test_pad_dd_keeps_two_qubit_depth():
    for n in range(3, 16):
        for circ in (synth_dynamic_cnot(n), decompose_swaps(build_chsh_circuit(ChshCircuitSpec(n, 0.1, ("Z", "Z"), "unitary")))):
            sc = schedule_asap(circ, D)
            assert two_qubit_depth(pad_dd(sc).circuit) == two_qubit_depth(circ)


def _tvd(a, b):
    keys = set(a.counts) | set(b.counts)
    return 0.5 * sum(abs(a.counts.get(k, 0) / a.shots - b.counts.get(k, 0) / b.shots) for k in keys)


@pytest.mark.parametrize("phi", [0.0, 0.9, 2.4])
def test_padding_inert_without_noise(phi):
    circ = decompose_swaps(build_chsh_circuit(ChshCircuitSpec(6, phi, ("X", "Z"), "unitary")))
    sc = schedule_asap(circ, D)
    padded = pad_dd(sc)
    assert padded.dd_pulses > 0
    a = run_shots(sc, None, 10000, 1)
    b = run_shots(padded, None, 10000, 2)
    assert _tvd(a, b) < 0.02


def test_echo_cancels_drift():
    c = _window_circuit(10)
    c = Circuit(2, {"a": 1}).extend(c.instructions)
    c.measure(0, "a")
    sc = schedule_asap(c, D)
    (w,) = sc.windows(0)
    omega = (math.pi / 2) / w.duration
    model = NoiseModel(2, {(0, 1): 0.0}, drift=(omega, 0.0))
    bare = run_shots(sc, model, 10000, 3)
    padded = run_shots(pad_dd(sc), model, 10000, 3)

    def mean_x(counts):
        return (counts.counts.get("0", 0) - counts.counts.get("1", 0)) / counts.shots

    assert abs(mean_x(bare)) < 0.04
    assert mean_x(padded) >= 0.99


def test_timeline_json():
    sc = schedule_asap(Circuit(2).h(0).cx(0, 1), D)
    doc = json.loads(sc.timeline_json())
    assert doc == [
        {"instr_index": 0, "start_s": 0.0, "duration_s": 60e-9},
        {"instr_index": 1, "start_s": 60e-9, "duration_s": 595e-9},
    ]


def test_nonpositive_duration_rejected():
    with pytest.raises(ValueError):
        Durations(x_s=0.0)
