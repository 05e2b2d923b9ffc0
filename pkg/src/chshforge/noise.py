"""Stochastic error processes derived from calibration data.

Noise is attached to *slots*: one per noisy gate, idle window and measurement,
numbered in execution order. A shot's error pattern is one small integer code
per slot, drawn from the shot's PATTERN stream with counters ``2*slot`` and
``2*slot + 1``:

* gate slot: 0 = no error, otherwise a Pauli index (1..3 for one qubit,
  1..15 for two qubits, decoded as ``(idx // 4, idx % 4)`` with I, X, Y, Z = 0..3)
* idle slot: bit 0 = damping candidate, bit 1 = stochastic Z
* readout slot: bit 0 = flip a recorded 0, bit 1 = flip a recorded 1

Coherent drift is deterministic and needs no slot.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .circuit import GateKind
from .rng import PATTERN, derive_seed, uniforms
from .schedule import Durations, IdleWindow, ScheduledCircuit
from .topology import CalibrationData, CalibrationError, QubitChain, validate_chain

PAULI_LABELS = "IXYZ"
CLEAN_HASH = 0

GATE, IDLE, READOUT = "gate", "idle", "readout"


class NoiseError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseModel:
    """Noise parameters over logical qubits ``0..num_qubits-1``."""

    num_qubits: int
    p2: dict = field(repr=False)  # {(i, j): two-qubit depolarizing probability}
    p1: tuple[float, ...] = ()
    p10: tuple[float, ...] = ()
    p01: tuple[float, ...] = ()
    t1: tuple[float, ...] = ()
    t2: tuple[float, ...] = ()
    drift: tuple[float, ...] = ()
    durations: Durations = Durations()
    physical: tuple[int, ...] | None = None

    def __post_init__(self):
        n = self.num_qubits
        object.__setattr__(self, "p2", {tuple(sorted(e)): float(p) for e, p in dict(self.p2).items()})
        for name, default in (("p1", 0.0), ("p10", 0.0), ("p01", 0.0), ("t1", math.inf), ("t2", math.inf), ("drift", 0.0)):
            vals = tuple(float(v) for v in getattr(self, name)) or (default,) * n
            if len(vals) != n:
                raise NoiseError(f"{name} needs {n} entries, got {len(vals)}")
            object.__setattr__(self, name, vals)
        for name in ("p1", "p10", "p01"):
            for v in getattr(self, name):
                if not 0.0 <= v <= 1.0:
                    raise NoiseError(f"{name} entry {v} outside [0, 1]")
        for e, p in self.p2.items():
            if not 0.0 <= p <= 1.0:
                raise NoiseError(f"edge {e}: probability {p} outside [0, 1]")
        for q in range(n):
            if self.t2[q] > 2 * self.t1[q] * (1 + 1e-12):
                raise NoiseError(f"qubit {q}: T2 exceeds 2*T1")

    @classmethod
    def ideal(cls, num_qubits: int, durations: Durations | None = None) -> "NoiseModel":
        edges = {(i, i + 1): 0.0 for i in range(num_qubits - 1)}
        return cls(num_qubits, edges, durations=durations or Durations())

    @property
    def is_ideal(self) -> bool:
        return (
            not any(self.p2.values())
            and not any(self.p1)
            and not any(self.p10)
            and not any(self.p01)
            and all(math.isinf(t) for t in self.t1 + self.t2)
            and not any(self.drift)
        )

    def edge_p(self, a: int, b: int) -> float:
        try:
            return self.p2[(min(a, b), max(a, b))]
        except KeyError:
            raise NoiseError(f"no two-qubit error rate for logical pair ({a}, {b})") from None

    def gamma(self, q: int, t: float) -> float:
        """Amplitude-damping probability over an idle time ``t``."""
        return 0.0 if math.isinf(self.t1[q]) else -math.expm1(-t / self.t1[q])

    def dephase_p(self, q: int, t: float) -> float:
        """Probability of a stochastic Z over ``t``: 1/T2phi = 1/T2 - 1/(2 T1)."""
        rate = (0.0 if math.isinf(self.t2[q]) else 1.0 / self.t2[q]) - (
            0.0 if math.isinf(self.t1[q]) else 0.5 / self.t1[q]
        )
        rate = max(rate, 0.0)
        return -0.5 * math.expm1(-t * rate)

    def drift_angle(self, q: int, t: float) -> float:
        return self.drift[q] * t

    def with_drift(self, rad_per_s: float) -> "NoiseModel":
        from dataclasses import replace

        return replace(self, drift=(float(rad_per_s),) * self.num_qubits)


def from_calibration(
    calibration: CalibrationData, chain, oneq_error: float | None = None
) -> NoiseModel:
    """Noise model over a chain; logical qubit i is ``chain[i]``.

    One-qubit depolarizing probability defaults to the mean error of the
    chain edges touching the qubit, scaled by t_X / t_CX.
    """
    qubits = tuple(chain.qubits if isinstance(chain, QubitChain) else chain)
    if len(qubits) < 1:
        raise NoiseError("empty chain")
    validate_chain(calibration.coupling, qubits)
    n = len(qubits)
    try:
        p2 = {(i, i + 1): calibration.edge_error(qubits[i], qubits[i + 1]) for i in range(n - 1)}
    except CalibrationError as exc:
        raise NoiseError(str(exc)) from None
    d = calibration.durations
    ratio = d.x_s / d.cx_s
    p1 = []
    for i in range(n):
        if oneq_error is not None:
            p1.append(float(oneq_error))
            continue
        inc = [p2[e] for e in ((i - 1, i), (i, i + 1)) if e in p2]
        p1.append(ratio * sum(inc) / len(inc) if inc else 0.0)
    cq = [calibration.qubits[q] for q in qubits]
    return NoiseModel(
        n,
        p2,
        tuple(p1),
        tuple(c.p10 for c in cq),
        tuple(c.p01 for c in cq),
        tuple(c.t1_s for c in cq),
        tuple(c.t2_s for c in cq),
        tuple(c.drift_rad_per_s for c in cq),
        d,
        qubits,
    )


# ---------------------------------------------------------------------------
# slots and patterns
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Slot:
    index: int
    kind: str
    instr: int  # gate/measure instruction, or the instruction closing an idle window
    qubits: tuple[int, ...]
    p: float  # error probability / damping gamma / p10
    q: float = 0.0  # dephasing probability / p01
    window: IdleWindow | None = None

    @property
    def n_paulis(self) -> int:
        return 15 if len(self.qubits) == 2 else 3


def gate_error_p(model: NoiseModel, ins) -> float:
    k = ins.kind
    if k is GateKind.CX:
        return model.edge_p(*ins.qubits)
    if k is GateKind.SWAP:
        # an undecomposed SWAP stands for three CX on the same edge
        return 1.0 - (1.0 - model.edge_p(*ins.qubits)) ** 3
    return model.p1[ins.qubits[0]]


def windows_closing(scheduled: ScheduledCircuit) -> dict[int, list[IdleWindow]]:
    out: dict[int, list[IdleWindow]] = {}
    for q in sorted(scheduled.idle_windows):
        for w in scheduled.idle_windows[q]:
            out.setdefault(w.before, []).append(w)
    return out


def build_slots(model: NoiseModel, scheduled: ScheduledCircuit) -> list[Slot]:
    """Noise slots in execution order; slots with zero probability are omitted."""
    if not isinstance(scheduled, ScheduledCircuit):
        raise NoiseError("noise sampling needs a scheduled circuit")
    circ = scheduled.circuit
    if circ.num_qubits > model.num_qubits:
        raise NoiseError(f"circuit uses {circ.num_qubits} qubits, noise model covers {model.num_qubits}")
    closing = windows_closing(scheduled)
    slots: list[Slot] = []
    for i in scheduled.order():
        ins = circ.instructions[i]
        for w in closing.get(i, ()):
            g = model.gamma(w.qubit, w.duration)
            z = model.dephase_p(w.qubit, w.duration)
            if g > 0 or z > 0:
                slots.append(Slot(len(slots), IDLE, i, (w.qubit,), g, z, w))
        if ins.kind is GateKind.BARRIER:
            continue
        if ins.kind is GateKind.MEASURE:
            q = ins.qubits[0]
            if model.p10[q] > 0 or model.p01[q] > 0:
                slots.append(Slot(len(slots), READOUT, i, (q,), model.p10[q], model.p01[q]))
            continue
        p = gate_error_p(model, ins)
        if p > 0:
            slots.append(Slot(len(slots), GATE, i, ins.qubits, p))
    return slots


def sample_codes(slots: list[Slot], seed: int, shots, chunk: int = 4096) -> np.ndarray:
    """Pattern codes, shape (len(shots), len(slots)), dtype uint8."""
    shots = np.asarray(shots, dtype=np.uint64).reshape(-1)
    n = len(slots)
    out = np.zeros((len(shots), n), dtype=np.uint8)
    if n == 0 or len(shots) == 0:
        return out
    p = np.array([s.p for s in slots])
    q = np.array([s.q for s in slots])
    is_gate = np.array([s.kind == GATE for s in slots])
    is_read = np.array([s.kind == READOUT for s in slots])
    m = np.array([s.n_paulis for s in slots], dtype=np.float64)
    counters = np.arange(2 * n, dtype=np.uint64)
    for lo in range(0, len(shots), chunk):
        sh = shots[lo : lo + chunk]
        u = uniforms(seed, sh[:, None], PATTERN, counters[None, :])
        u0, u1 = u[:, 0::2], u[:, 1::2]
        hit = u0 < p
        choice = 1 + np.minimum(np.floor(u1 * m), m - 1).astype(np.uint8)
        # idle: damping and dephasing draw independently; readout: both flip
        # flags come from one uniform, so a symmetric flip is a plain NOT
        second = np.where(is_read, u0, u1) < q
        flags = hit.astype(np.uint8) | (second.astype(np.uint8) << 1)
        out[lo : lo + chunk] = np.where(is_gate, np.where(hit, choice, 0), flags)
    return out


@dataclass(frozen=True)
class ErrorEvent:
    slot: int  # -1 for deterministic drift
    instr: int
    qubits: tuple[int, ...]
    action: str  # "pauli", "damping", "dephase", "readout_flip", "drift"
    params: tuple = ()
    window: IdleWindow | None = None


def pauli_string(code: int, nq: int) -> str:
    if nq == 1:
        return PAULI_LABELS[code]
    return PAULI_LABELS[code // 4] + PAULI_LABELS[code % 4]


def decode(slot: Slot, code: int) -> list[ErrorEvent]:
    if code == 0:
        return []
    if slot.kind == GATE:
        return [ErrorEvent(slot.index, slot.instr, slot.qubits, "pauli", (pauli_string(code, len(slot.qubits)),))]
    events = []
    if slot.kind == IDLE:
        if code & 1:
            events.append(ErrorEvent(slot.index, slot.instr, slot.qubits, "damping", (), slot.window))
        if code & 2:
            events.append(ErrorEvent(slot.index, slot.instr, slot.qubits, "dephase", ("Z",), slot.window))
    else:
        if code & 1:
            events.append(ErrorEvent(slot.index, slot.instr, slot.qubits, "readout_flip", ("flip0",)))
        if code & 2:
            events.append(ErrorEvent(slot.index, slot.instr, slot.qubits, "readout_flip", ("flip1",)))
    return events


@dataclass(frozen=True)
class ErrorPattern:
    """Error events of one shot.

    ``key`` lists the nonzero (slot, code) pairs; the hash is computed from it
    alone, so deterministic drift events do not make a shot unclean.
    """

    events: tuple[ErrorEvent, ...]
    key: tuple[tuple[int, int], ...]

    @property
    def is_clean(self) -> bool:
        return not self.key

    @property
    def hash(self) -> int:
        return pattern_hash(self.key)

    def stochastic(self) -> tuple[ErrorEvent, ...]:
        return tuple(e for e in self.events if e.slot >= 0)


def pattern_hash(key) -> int:
    if not key:
        return CLEAN_HASH
    flat = [v for pair in key for v in pair]
    return derive_seed(len(key), *flat) | 1


def drift_events(model: NoiseModel, scheduled: ScheduledCircuit) -> list[ErrorEvent]:
    out = []
    for q in sorted(scheduled.idle_windows):
        for w in scheduled.idle_windows[q]:
            ang = model.drift_angle(q, w.duration)
            if ang != 0.0:
                out.append(ErrorEvent(-1, w.before, (q,), "drift", (ang,), w))
    return out


def pattern_from_codes(slots, codes, drift=()) -> ErrorPattern:
    key = tuple((s.index, int(c)) for s, c in zip(slots, codes) if c)
    events = list(drift)
    for s, c in zip(slots, codes):
        events.extend(decode(s, int(c)))
    return ErrorPattern(tuple(events), key)


def sample_pattern(model: NoiseModel, scheduled: ScheduledCircuit, rng) -> ErrorPattern:
    """Error pattern of the shot whose stream is ``rng`` (a :class:`ShotStream`)."""
    slots = build_slots(model, scheduled)
    codes = sample_codes(slots, rng.seed, [rng.shot])[0]
    return pattern_from_codes(slots, codes, drift_events(model, scheduled))
