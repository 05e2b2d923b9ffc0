"""ASAP scheduling, idle-window extraction and X-X dynamical-decoupling padding."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

from .circuit import Circuit, GateKind, Instruction

_EPS = 1e-15


@dataclass(frozen=True)
class Durations:
    """Pulse-class durations in seconds."""

    x_s: float = 60e-9
    cx_s: float = 595e-9
    measure_s: float = 835e-9
    feedforward_s: float = 700e-9

    def __post_init__(self):
        for name in ("x_s", "cx_s", "measure_s", "feedforward_s"):
            if not getattr(self, name) > 0:
                raise ValueError(f"duration {name} must be positive")

    def of(self, ins: Instruction) -> float:
        k = ins.kind
        if k is GateKind.BARRIER:
            return 0.0
        if k is GateKind.CX:
            return self.cx_s
        if k is GateKind.SWAP:
            return 3 * self.cx_s
        if k is GateKind.MEASURE:
            return self.measure_s
        return self.x_s  # H, X, Z, RY, COND_PAULI


@dataclass(frozen=True)
class IdleWindow:
    qubit: int
    start: float
    duration: float
    after: int  # instruction that opens the window
    before: int  # instruction that closes it

    @property
    def end(self) -> float:
        return self.start + self.duration


@dataclass(frozen=True)
class ScheduledCircuit:
    circuit: Circuit
    starts: tuple[float, ...]
    durations: tuple[float, ...]
    timing: Durations
    idle_windows: dict = field(repr=False)
    feedforward_intervals: tuple[tuple[float, float], ...] = ()
    dd_pulses: int = 0

    @property
    def total_duration(self) -> float:
        return max((s + d for s, d in zip(self.starts, self.durations)), default=0.0)

    def end(self, i: int) -> float:
        return self.starts[i] + self.durations[i]

    def order(self) -> list[int]:
        """Instruction indices in execution order (start time, then list position)."""
        return sorted(range(len(self.starts)), key=lambda i: (self.starts[i], i))

    def windows(self, qubit: int) -> tuple[IdleWindow, ...]:
        return self.idle_windows.get(qubit, ())

    def timeline(self) -> list[dict]:
        return [
            {"instr_index": i, "start_s": self.starts[i], "duration_s": self.durations[i]}
            for i in self.order()
        ]

    def timeline_json(self, **kwargs) -> str:
        return json.dumps(self.timeline(), **kwargs)


def _idle_windows(circuit: Circuit, starts, durations) -> dict[int, tuple[IdleWindow, ...]]:
    per_qubit: dict[int, list[int]] = {}
    for i, ins in enumerate(circuit):
        if ins.kind is GateKind.BARRIER:
            continue
        for q in ins.qubits:
            per_qubit.setdefault(q, []).append(i)
    out = {}
    for q, idx in per_qubit.items():
        idx.sort(key=lambda i: (starts[i], i))
        wins = []
        for prev, nxt in zip(idx, idx[1:]):
            gap_start = starts[prev] + durations[prev]
            gap = starts[nxt] - gap_start
            if gap > _EPS:
                wins.append(IdleWindow(q, gap_start, gap, prev, nxt))
        out[q] = tuple(wins)
    return out


def _feedforward_intervals(circuit: Circuit, starts, durations) -> tuple[tuple[float, float], ...]:
    written_at = {}
    out = []
    for i, ins in enumerate(circuit):
        if ins.kind is GateKind.MEASURE:
            written_at[ins.clbits[0]] = starts[i] + durations[i]
        elif ins.kind is GateKind.COND_PAULI:
            ready = max(written_at[c] for c in ins.clbits)
            out.append((ready, starts[i]))
    return tuple(out)


def _build(circuit, starts, durations, timing, dd_pulses=0) -> ScheduledCircuit:
    starts, durations = tuple(starts), tuple(durations)
    return ScheduledCircuit(
        circuit,
        starts,
        durations,
        timing,
        _idle_windows(circuit, starts, durations),
        _feedforward_intervals(circuit, starts, durations),
        dd_pulses,
    )


def schedule_asap(circuit: Circuit, durations: Durations | None = None) -> ScheduledCircuit:
    """Start every instruction as soon as its qubits and condition bits are ready.

    A conditional Pauli additionally waits ``feedforward_s`` after the last of
    its condition measurements ends.
    """
    timing = durations or Durations()
    free = [0.0] * circuit.num_qubits
    bit_ready: dict[int, float] = {}
    starts, durs = [], []
    for ins in circuit:
        d = timing.of(ins)
        t = max(free[q] for q in ins.qubits)
        if ins.kind is GateKind.COND_PAULI:
            t = max(t, max(bit_ready[c] for c in ins.clbits) + timing.feedforward_s)
        for q in ins.qubits:
            free[q] = t + d
        if ins.kind is GateKind.MEASURE:
            bit_ready[ins.clbits[0]] = t + d
        starts.append(t)
        durs.append(d)
    return _build(circuit, starts, durs, timing)


def pad_dd(scheduled: ScheduledCircuit) -> ScheduledCircuit:
    """Insert an X-X echo pair at 1/4 and 3/4 of every idle window of at least 4 t_X.

    Windows that overlap a feedforward wait are left alone. Original
    instructions keep their start times, so the total duration is unchanged.
    """
    tx = scheduled.timing.x_s
    ff = scheduled.feedforward_intervals
    inserts: dict[int, list[tuple[float, int]]] = {}
    n_pulses = 0
    for q in sorted(scheduled.idle_windows):
        for w in scheduled.idle_windows[q]:
            if w.duration < 4 * tx - _EPS:
                continue
            if any(w.start < b and w.end > a for a, b in ff):
                continue
            for frac in (0.25, 0.75):
                inserts.setdefault(w.after, []).append((w.start + frac * w.duration - tx / 2, q))
                n_pulses += 1
    if not inserts:
        return scheduled
    src = scheduled.circuit
    out = src.copy_empty()
    starts, durs = [], []
    for i, ins in enumerate(src):
        out.append(ins)
        starts.append(scheduled.starts[i])
        durs.append(scheduled.durations[i])
        for t, q in sorted(inserts.get(i, ())):
            out.x(q)
            starts.append(t)
            durs.append(tx)
    return _build(out, starts, durs, scheduled.timing, scheduled.dd_pulses + n_pulses)

