"""Pure-state trajectory simulator with mid-circuit measurement and feedforward.

Shots are walked through the compiled program in groups. All shots of a group
share one state; a group is split only where its members' histories actually
differ (a Pauli error that acts nontrivially, a damping jump, an outcome of a
collapsing measurement, a feedforward decision). A shot's result depends only
on its own random numbers, so grouping, the shared trajectory cache and the
number of workers change the cost but never the output.

Two reductions keep states small:

* qubits sitting in a computational basis state are stored as classical values
  instead of tensor axes (global phases are dropped);
* a measurement whose qubit is never touched again is deferred: the qubit stays
  in the state, feedforward on its bit becomes a parity-controlled Pauli, and
  all deferred bits are sampled jointly at the end by the chain rule.
"""
from __future__ import annotations

import hashlib
import json
import math
import threading
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .circuit import Circuit, GateKind
from .noise import GATE, IDLE, READOUT, NoiseModel, build_slots, sample_codes, windows_closing
from .rng import BRANCH, uniforms
from .schedule import ScheduledCircuit, schedule_asap

MAX_QUBITS = 20
_DROP_TOL = 1e-20
_NORM_TOL = 1e-8
_S2 = 1.0 / math.sqrt(2.0)


class SimulationError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# state representation
# ---------------------------------------------------------------------------


class Traj:
    """Quantum state plus classical bookkeeping shared by a group of shots.

    ``axes`` lists the qubits held in ``psi`` (one tensor axis each); every
    other qubit sits in the basis value ``basis[q]``. ``known`` holds true
    values of measured bits fixed for the whole group and ``pending`` the
    deferred measurements as (op position, bit, qubit).
    """

    __slots__ = ("axes", "psi", "basis", "known", "pending")

    def __init__(self, axes, psi, basis, known=(), pending=()):
        self.axes = axes
        self.psi = psi
        self.basis = basis
        self.known = known
        self.pending = pending

    @classmethod
    def zero(cls, n):
        return cls((), np.ones((), dtype=np.complex128), (0,) * n)

    def with_state(self, axes, psi, basis=None):
        return Traj(axes, psi, self.basis if basis is None else basis, self.known, self.pending)

    @property
    def nbytes(self):
        return self.psi.nbytes + 64 * (len(self.basis) + len(self.known) + len(self.pending))

    def known_value(self, bit):
        for b, v in self.known:
            if b == bit:
                return v
        return None

    def dense(self) -> np.ndarray:
        """Full statevector, qubit 0 as the most significant index."""
        n = len(self.basis)
        order = list(self.axes)
        psi = self.psi
        for q in range(n):
            if q not in self.axes:
                vec = np.zeros(2, dtype=np.complex128)
                vec[self.basis[q]] = 1.0
                psi = np.multiply.outer(psi, vec)
                order.append(q)
        perm = [order.index(q) for q in range(n)]
        return np.transpose(psi, perm).reshape(-1)


def _view(psi, p):
    k = psi.ndim
    return psi.reshape(1 << p, 2, 1 << (k - p - 1))


def _masses(psi, p):
    if psi.size <= 1024:
        v = psi.reshape(1 << p, 2, -1)
        x0, x1 = v[:, 0], v[:, 1]
        return float(np.vdot(x0, x0).real), float(np.vdot(x1, x1).real)
    pr = psi.real ** 2 + psi.imag ** 2
    a = 1 << p
    b = pr.size >> (p + 1)
    if b >= 16:
        m = pr.reshape(a, 2, b).sum(axis=2).sum(axis=0)
    else:
        m = (np.ones(a) @ pr.reshape(a, 2 * b)).reshape(2, b).sum(axis=1)
    return float(m[0]), float(m[1])


_KRON_CACHE: dict = {}


def _kron_eye_t(u, b):
    key = (u.tobytes(), b)
    k = _KRON_CACHE.get(key)
    if k is None:
        if len(_KRON_CACHE) > 512:
            _KRON_CACHE.clear()
        k = _KRON_CACHE[key] = np.ascontiguousarray(np.kron(u, np.eye(b)).T)
    return k


def _apply_matrix(psi, p, u):
    u = np.asarray(u, dtype=np.complex128)
    v = _view(psi, p)
    a, _, b = v.shape
    if b >= 16:
        return np.matmul(u, v).reshape(psi.shape)
    # few trailing amplitudes: one GEMM against U (x) I_b
    return (v.reshape(a, 2 * b) @ _kron_eye_t(u, b)).reshape(psi.shape)


def _apply_x(psi, p):
    return np.ascontiguousarray(_view(psi, p)[:, ::-1]).reshape(psi.shape)


def _apply_z(psi, p):
    v = _view(psi, p).copy()
    v[:, 1] *= -1.0
    return v.reshape(psi.shape)


def _apply_y(psi, p):
    v = _view(psi, p)
    out = np.empty_like(v)
    out[:, 0] = -1j * v[:, 1]
    out[:, 1] = 1j * v[:, 0]
    return out.reshape(psi.shape)


def _apply_diag(psi, p, d0, d1):
    v = _view(psi, p).copy()
    v[:, 0] *= d0
    v[:, 1] *= d1
    return v.reshape(psi.shape)


_H = np.array(((_S2, _S2), (_S2, -_S2)), dtype=np.complex128)
_X = ((0.0, 1.0), (1.0, 0.0))
_Y = ((0.0, -1j), (1j, 0.0))
_Z = ((1.0, 0.0), (0.0, -1.0))
_I = ((1.0, 0.0), (0.0, 1.0))
_PAULI_MATS = (_I, _X, _Y, _Z)


def _ry(theta):
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    return ((c, -s), (s, c))


def _matmul2(a, b):
    return tuple(tuple(sum(a[i][k] * b[k][j] for k in range(2)) for j in range(2)) for i in range(2))


def _lift(tr: Traj, q: int, vec=None) -> Traj:
    """Move basis qubit ``q`` into the tensor as the last axis."""
    if vec is None:
        vec = np.zeros(2, dtype=np.complex128)
        vec[tr.basis[q]] = 1.0
    psi = np.multiply.outer(tr.psi, vec)
    return tr.with_state(tr.axes + (q,), psi)


def _drop_if_basis(tr: Traj, q: int) -> Traj:
    p = tr.axes.index(q)
    m0, m1 = _masses(tr.psi, p)
    tot = m0 + m1
    if m1 <= _DROP_TOL * tot:
        val, m = 0, m0
    elif m0 <= _DROP_TOL * tot:
        val, m = 1, m1
    else:
        return tr
    v = _view(tr.psi, p)[:, val]
    shape = tr.psi.shape[:p] + tr.psi.shape[p + 1 :]
    psi = (v / math.sqrt(m)).reshape(shape) if m != 1.0 else v.reshape(shape).copy()
    basis = list(tr.basis)
    basis[q] = val
    return tr.with_state(tr.axes[:p] + tr.axes[p + 1 :], psi, tuple(basis))


def _flip_basis(tr: Traj, q: int) -> Traj:
    basis = list(tr.basis)
    basis[q] ^= 1
    return tr.with_state(tr.axes, tr.psi, tuple(basis))


def apply_pauli(tr: Traj, q: int, code: int) -> Traj:
    """Apply I/X/Y/Z (code 0..3) up to global phase."""
    if code == 0:
        return tr
    if q not in tr.axes:
        return _flip_basis(tr, q) if code in (1, 2) else tr
    p = tr.axes.index(q)
    fn = (None, _apply_x, _apply_y, _apply_z)[code]
    return tr.with_state(tr.axes, fn(tr.psi, p))


def apply_1q(tr: Traj, q: int, u, check_drop=False) -> Traj:
    if q not in tr.axes:
        col = np.array([u[0][tr.basis[q]], u[1][tr.basis[q]]], dtype=np.complex128)
        if col[1] == 0:
            basis = list(tr.basis)
            basis[q] = 0
            return tr.with_state(tr.axes, tr.psi, tuple(basis))
        if col[0] == 0:
            basis = list(tr.basis)
            basis[q] = 1
            return tr.with_state(tr.axes, tr.psi, tuple(basis))
        return _lift(tr, q, col)
    p = tr.axes.index(q)
    out = tr.with_state(tr.axes, _apply_matrix(tr.psi, p, u))
    return _drop_if_basis(out, q) if check_drop else out


def apply_cx(tr: Traj, c: int, t: int) -> Traj:
    if c not in tr.axes:
        return apply_pauli(tr, t, 1) if tr.basis[c] else tr
    # the control marginal never changes; a freshly lifted target can only
    # end up in a basis state if the control already was one
    lifted = t not in tr.axes
    if lifted:
        tr = _lift(tr, t)
    pc, pt = tr.axes.index(c), tr.axes.index(t)
    psi = tr.psi.copy()
    idx = [slice(None)] * psi.ndim
    idx[pc] = 1
    sub = tr.psi[tuple(idx)]
    psi[tuple(idx)] = np.flip(sub, axis=pt if pt < pc else pt - 1)
    tr = tr.with_state(tr.axes, psi)
    return tr if lifted else _drop_if_basis(tr, t)


def apply_swap(tr: Traj, a: int, b: int) -> Traj:
    axes = list(tr.axes)
    basis = list(tr.basis)
    ia = axes.index(a) if a in axes else None
    ib = axes.index(b) if b in axes else None
    if ia is not None:
        axes[ia] = b
    if ib is not None:
        axes[ib] = a
    basis[a], basis[b] = basis[b], basis[a]
    return tr.with_state(tuple(axes), tr.psi, tuple(basis))


def apply_gate(tr: Traj, kind: GateKind, qubits, angle=None) -> Traj:
    if kind is GateKind.CX:
        return apply_cx(tr, *qubits)
    if kind is GateKind.SWAP:
        return apply_swap(tr, *qubits)
    q = qubits[0]
    if kind is GateKind.X:
        return apply_pauli(tr, q, 1)
    if kind is GateKind.Z:
        return apply_pauli(tr, q, 3)
    if kind is GateKind.H:
        return apply_1q(tr, q, _H, check_drop=True)
    if kind is GateKind.RY:
        return apply_1q(tr, q, _ry(angle))
    raise SimulationError(f"not a unitary gate: {kind}")


def apply_rz(tr: Traj, q: int, theta: float) -> Traj:
    if q not in tr.axes or theta == 0.0:
        return tr
    p = tr.axes.index(q)
    return tr.with_state(tr.axes, _apply_diag(tr.psi, p, np.exp(-0.5j * theta), np.exp(0.5j * theta)))


def population1(tr: Traj, q: int) -> float:
    if q not in tr.axes:
        return float(tr.basis[q])
    m0, m1 = _masses(tr.psi, tr.axes.index(q))
    return m1 / (m0 + m1)


def project(tr: Traj, q: int, outcome: int) -> tuple[Traj, float]:
    """Collapse qubit ``q`` onto ``outcome``; returns the new state and its probability."""
    if q not in tr.axes:
        return tr, 1.0 if tr.basis[q] == outcome else 0.0
    p = tr.axes.index(q)
    m0, m1 = _masses(tr.psi, p)
    m = (m0, m1)[outcome]
    prob = m / (m0 + m1)
    if m == 0.0:
        return tr, 0.0
    v = _view(tr.psi, p)[:, outcome] / math.sqrt(m)
    shape = tr.psi.shape[:p] + tr.psi.shape[p + 1 :]
    basis = list(tr.basis)
    basis[q] = outcome
    return tr.with_state(tr.axes[:p] + tr.axes[p + 1 :], v.reshape(shape), tuple(basis)), prob


def damp(tr: Traj, q: int, gamma: float, jump: bool) -> Traj:
    """Amplitude damping: K1 = sqrt(g)|0><1| if ``jump`` else K0 = diag(1, sqrt(1-g)), renormalized."""
    if q not in tr.axes:
        if jump:
            basis = list(tr.basis)
            basis[q] = 0
            return tr.with_state(tr.axes, tr.psi, tuple(basis))
        return tr
    if jump:
        tr, _ = project(tr, q, 1)
        basis = list(tr.basis)
        basis[q] = 0
        return tr.with_state(tr.axes, tr.psi, tuple(basis))
    if gamma == 0.0:
        return tr
    p = tr.axes.index(q)
    m0, m1 = _masses(tr.psi, p)
    k = math.sqrt(1.0 - gamma)
    norm = math.sqrt(m0 + (1.0 - gamma) * m1)
    return tr.with_state(tr.axes, _apply_diag(tr.psi, p, 1.0 / norm, k / norm))


def _parity_mask(ndim, positions):
    mask = np.zeros((1,) * ndim, dtype=bool)
    for p in positions:
        shape = [1] * ndim
        shape[p] = 2
        mask = mask ^ np.array([False, True]).reshape(shape)
    return mask


def controlled_1q(tr: Traj, controls, const: int, q: int, u) -> Traj:
    """Apply ``u`` to ``q`` on the components where parity(controls) XOR const = 1."""
    if q not in tr.axes:
        tr = _lift(tr, q)
    nd = tr.psi.ndim
    pos = [tr.axes.index(c) for c in controls]
    mask = _parity_mask(nd, pos)
    if const:
        mask = ~mask
    pq = tr.axes.index(q)
    u = np.asarray(u, dtype=np.complex128)
    if u[0, 1] == 0 and u[1, 0] == 0:
        # diagonal: one broadcast multiply
        shape = [1] * nd
        shape[pq] = 2
        f = np.where(mask, u.diagonal().reshape(shape), 1.0 + 0j)
        return tr.with_state(tr.axes, tr.psi * f)
    out = _apply_matrix(tr.psi, pq, u)
    return tr.with_state(tr.axes, np.where(mask, out, tr.psi))


def norm2(tr: Traj) -> float:
    return float(np.vdot(tr.psi, tr.psi).real)


# ---------------------------------------------------------------------------
# compiled program
# ---------------------------------------------------------------------------

OP_GATE, OP_PAULI, OP_DRIFT, OP_IDLE, OP_MEASURE, OP_COND = range(6)
_TABLES = -1  # cache position of terminal sampling tables


@dataclass
class Op:
    kind: int
    qubits: tuple[int, ...]
    gate: GateKind | None = None
    angle: float | None = None
    slot: int = -1
    bit: int = -1
    deferred: bool = False
    pauli: str | None = None
    bits: tuple[int, ...] = ()
    gamma: float = 0.0
    instr: int = -1


@dataclass
class Program:
    num_qubits: int
    num_clbits: int
    ops: list[Op]
    slots: list
    bit_slot: dict  # clbit -> readout slot (or -1)
    measure_pos: dict  # clbit -> op position
    registers: dict
    relevant: np.ndarray = field(repr=False)  # (ops, slots) bool
    always: np.ndarray = field(repr=False)  # ops that may split without any error code
    prefix_ids: tuple = field(default=(), repr=False)  # prefix_ids[j] fingerprints ops[:j]

    @property
    def size(self):
        return len(self.ops)


def compile_program(scheduled: ScheduledCircuit, model: NoiseModel | None = None) -> Program:
    circ = scheduled.circuit
    n = circ.num_qubits
    if n > MAX_QUBITS:
        raise SimulationError(f"circuit width {n} exceeds the {MAX_QUBITS}-qubit limit")
    model = model or NoiseModel.ideal(n)
    slots = build_slots(model, scheduled)
    slot_at: dict[tuple[str, int, int], int] = {}
    for s in slots:
        slot_at[(s.kind, s.instr, s.qubits[0] if s.kind == IDLE else -1)] = s.index
    closing = windows_closing(scheduled)
    order = scheduled.order()
    last_use = {}
    for pos, i in enumerate(order):
        ins = circ.instructions[i]
        if ins.kind is not GateKind.BARRIER:
            for q in ins.qubits:
                last_use[q] = pos

    ops: list[Op] = []
    bit_slot, measure_pos = {}, {}
    for pos, i in enumerate(order):
        ins = circ.instructions[i]
        for w in closing.get(i, ()):
            ang = model.drift_angle(w.qubit, w.duration)
            if ang != 0.0:
                ops.append(Op(OP_DRIFT, (w.qubit,), angle=ang, instr=i))
            s = slot_at.get((IDLE, i, w.qubit), -1)
            if s >= 0:
                ops.append(Op(OP_IDLE, (w.qubit,), slot=s, gamma=slots[s].p, instr=i))
        k = ins.kind
        if k is GateKind.BARRIER:
            continue
        if k is GateKind.MEASURE:
            s = slot_at.get((READOUT, i, -1), -1)
            b = ins.clbits[0]
            bit_slot[b] = s
            measure_pos[b] = len(ops)
            deferred = last_use[ins.qubits[0]] == pos
            ops.append(Op(OP_MEASURE, ins.qubits, slot=s, bit=b, deferred=deferred, instr=i))
            continue
        s = slot_at.get((GATE, i, -1), -1)
        if k is GateKind.COND_PAULI:
            ops.append(Op(OP_COND, ins.qubits, slot=s, pauli=ins.pauli, bits=ins.clbits, instr=i))
            continue
        ops.append(Op(OP_GATE, ins.qubits, gate=k, angle=ins.angle, instr=i))
        if s >= 0:
            ops.append(Op(OP_PAULI, ins.qubits, slot=s, instr=i))

    missing = [b for b in range(circ.num_clbits) if b not in measure_pos]
    if missing:
        raise SimulationError(f"classical bits {missing} are never written")

    relevant = np.zeros((len(ops), len(slots)), dtype=bool)
    always = np.zeros(len(ops), dtype=bool)
    for j, op in enumerate(ops):
        if op.slot >= 0 and op.kind != OP_MEASURE:
            relevant[j, op.slot] = True
        if op.kind == OP_COND:
            for b in op.bits:
                if bit_slot[b] >= 0:
                    relevant[j, bit_slot[b]] = True
        if op.kind == OP_MEASURE and not op.deferred:
            always[j] = True
    return Program(
        n, circ.num_clbits, ops, slots, bit_slot, measure_pos, dict(circ.registers), relevant, always,
        _prefix_ids(n, ops),
    )


def _prefix_ids(n, ops) -> tuple:
    """Digest chain over the state-relevant fields of each op.

    Two programs with equal ``prefix_ids[j]`` reach identical states at
    position j for identical event histories, so they can share cache entries.
    """
    h = hashlib.blake2b(repr(("width", n)).encode(), digest_size=16)
    out = [h.digest()]
    for op in ops:
        sig = (op.kind, op.qubits, op.gate and op.gate.value, op.angle, op.bit, op.deferred, op.pauli, op.bits, op.gamma)
        h.update(repr(sig).encode())
        out.append(h.copy().digest())
    return tuple(out)


# ---------------------------------------------------------------------------
# trajectory cache
# ---------------------------------------------------------------------------


class TrajectoryCache:
    """Thread-safe LRU store of group states keyed by (program prefix, history, op position).

    The history is the tuple of non-default events seen so far, so a key
    identifies one branch of the trajectory tree; the stored value is the state
    just before that op position (or the terminal sampling tables). The prefix
    fingerprint lets circuits that share their first ops share entries.
    """

    def __init__(self, max_bytes: int = 256 * 2**20):
        self.max_bytes = int(max_bytes)
        self._data: OrderedDict = OrderedDict()
        self._index: dict = {}
        self._bytes = 0
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def __len__(self):
        return len(self._data)

    @property
    def nbytes(self):
        return self._bytes

    def _size(self, value):
        if isinstance(value, Traj):
            return value.nbytes
        return sum(a.nbytes for a in value) + 64

    def put(self, pid, hist, pos, value):
        size = self._size(value)
        if size > self.max_bytes:
            return
        key = (pid, hist, pos)
        with self._lock:
            if key in self._data:
                self._data.move_to_end(key)
                return
            self._data[key] = value
            self._index.setdefault(hist, set()).add((pos, pid))
            self._bytes += size
            while self._bytes > self.max_bytes:
                (d, h, p), old = self._data.popitem(last=False)
                self._bytes -= self._size(old)
                s = self._index[h]
                s.discard((p, d))
                if not s:
                    del self._index[h]

    def get(self, pid, hist, pos):
        with self._lock:
            v = self._data.get((pid, hist, pos))
            if v is not None:
                self._data.move_to_end((pid, hist, pos))
                self.hits += 1
            else:
                self.misses += 1
            return v

    def furthest(self, prefix_ids, hist, lo, hi):
        """Cached state with the largest position p, lo < p <= hi, matching ``prefix_ids[p]``."""
        with self._lock:
            s = self._index.get(hist)
            if not s:
                return None
            best = max((p for p, d in s if lo < p <= hi and prefix_ids[p] == d), default=None)
            if best is None:
                return None
            key = (prefix_ids[best], hist, best)
            self._data.move_to_end(key)
            self.hits += 1
            return best, self._data[key]


@dataclass
class RunStats:
    propagations: int = 0
    ops_applied: int = 0
    groups: int = 0
    terminal_tables: int = 0

    def add(self, other: "RunStats"):
        self.propagations += other.propagations
        self.ops_applied += other.ops_applied
        self.groups += other.groups
        self.terminal_tables += other.terminal_tables


# ---------------------------------------------------------------------------
# walker
# ---------------------------------------------------------------------------


class _Walker:
    def __init__(self, prog: Program, seed: int, shots: np.ndarray, codes: np.ndarray, cache, stats):
        self.prog = prog
        self.seed = int(seed)
        self.shots = shots
        self.codes = codes
        self.cache = cache
        self.stats = stats
        self.bits = np.zeros((len(shots), prog.num_clbits), dtype=np.uint8)

    # -- deterministic application ---------------------------------------
    def apply_default(self, tr: Traj, j: int) -> Traj:
        op = self.prog.ops[j]
        k = op.kind
        if k == OP_GATE:
            return apply_gate(tr, op.gate, op.qubits, op.angle)
        if k == OP_DRIFT:
            return apply_rz(tr, op.qubits[0], op.angle)
        if k == OP_PAULI:
            return tr
        if k == OP_IDLE:
            return damp(tr, op.qubits[0], op.gamma, False)
        if k == OP_MEASURE:
            return self._measure_deferred(tr, op, j)
        if k == OP_COND:
            return self._cond(tr, op, self._cond_default(tr, op))
        raise SimulationError(f"op {j} cannot be applied without a branch decision")

    def _measure_deferred(self, tr, op, j):
        q = op.qubits[0]
        if q not in tr.axes:
            known = tr.known + ((op.bit, tr.basis[q]),)
            return Traj(tr.axes, tr.psi, tr.basis, known, tr.pending)
        return Traj(tr.axes, tr.psi, tr.basis, tr.known, tr.pending + ((j, op.bit, q),))

    # -- effects ------------------------------------------------------------
    def _pending_qubit(self, tr, bit):
        for _, b, q in tr.pending:
            if b == bit:
                return q
        return None

    def _cond_default(self, tr, op):
        live, const = [], 0
        for i, b in enumerate(op.bits):
            if self._pending_qubit(tr, b) is not None:
                live.append(i)
            else:
                const ^= tr.known_value(b)
        mask = 0
        for i in live:
            mask |= 1 << i
        return (mask << 6) | (const << 5)

    def _cond_effects(self, tr, op, members):
        """Per-member effect key: live-bit mask << 6 | constant << 5 | error code."""
        m = len(members)
        nb = len(op.bits)
        mask = np.zeros(m, dtype=np.int64)
        const = np.zeros(m, dtype=np.int64)
        for i, b in enumerate(op.bits):
            s = self.prog.bit_slot[b]
            r = self.codes[members, s].astype(np.int64) if s >= 0 else np.zeros(m, dtype=np.int64)
            f0, f1 = r & 1, (r >> 1) & 1
            if self._pending_qubit(tr, b) is not None:
                # recorded = v ^ flag(v): identity, negation, or a constant
                live = f0 == f1
                mask |= live.astype(np.int64) << i
                const ^= f0
            else:
                v = tr.known_value(b)
                const ^= v ^ (f1 if v else f0)
        err = self.codes[members, op.slot].astype(np.int64) if op.slot >= 0 else np.zeros(m, dtype=np.int64)
        if nb > 56:
            raise SimulationError(f"conditional on {nb} classical bits exceeds the 56-bit packing limit")
        return (mask << 6) | (const << 5) | err

    def _cond(self, tr, op, effect):
        err = effect & 31
        const = (effect >> 5) & 1
        mask = effect >> 6
        q = op.qubits[0]
        u = _X if op.pauli == "X" else _Z
        if err:
            u = _matmul2(_PAULI_MATS[err], u)
        controls = [self._pending_qubit(tr, b) for i, b in enumerate(op.bits) if mask >> i & 1]
        if not controls:
            if not const:
                return tr
            tr = apply_pauli(tr, q, 1 if op.pauli == "X" else 3)
            return apply_pauli(tr, q, err)
        return controlled_1q(tr, controls, const, q, u)

    def effects(self, tr: Traj, j: int, members: np.ndarray):
        """(effect per member, default effect) for a potential split op."""
        op = self.prog.ops[j]
        k = op.kind
        if k == OP_PAULI:
            c = self.codes[members, op.slot].astype(np.int64)
            if len(op.qubits) == 1:
                return self._reduce_1q(tr, op.qubits[0], c), 0
            a, b = self._reduce_1q(tr, op.qubits[0], c // 4), self._reduce_1q(tr, op.qubits[1], c % 4)
            return a * 4 + b, 0
        if k == OP_IDLE:
            q = op.qubits[0]
            c = self.codes[members, op.slot].astype(np.int64)
            cand = (c & 1).astype(bool)
            deph = ((c >> 1) & 1).astype(bool)
            if q not in tr.axes:
                return (cand & (tr.basis[q] == 1)).astype(np.int64), 0
            jump = np.zeros(len(members), dtype=bool)
            if cand.any():
                p1 = population1(tr, q)
                u = uniforms(self.seed, self.shots[members[cand]], BRANCH, j)
                jump[cand] = u < p1
            zeff = deph & ~jump
            return jump.astype(np.int64) | (zeff.astype(np.int64) << 1), 0
        if k == OP_MEASURE:
            q = op.qubits[0]
            if q not in tr.axes:
                return np.full(len(members), tr.basis[q], dtype=np.int64), tr.basis[q]
            p1 = population1(tr, q)
            u = uniforms(self.seed, self.shots[members], BRANCH, j)
            return (u < p1).astype(np.int64), -1
        if k == OP_COND:
            return self._cond_effects(tr, op, members), self._cond_default(tr, op)
        raise SimulationError(f"op {j} has no branch decision")

    @staticmethod
    def _reduce_1q(tr, q, c):
        if q in tr.axes:
            return c
        # on a basis qubit Z is a phase and Y acts as X
        return np.where(c == 3, 0, np.where(c == 2, 1, c))

    def apply_effect(self, tr: Traj, j: int, e: int) -> Traj:
        op = self.prog.ops[j]
        k = op.kind
        if k == OP_PAULI:
            if len(op.qubits) == 1:
                return apply_pauli(tr, op.qubits[0], e)
            tr = apply_pauli(tr, op.qubits[0], e // 4)
            return apply_pauli(tr, op.qubits[1], e % 4)
        if k == OP_IDLE:
            q = op.qubits[0]
            tr = damp(tr, q, op.gamma, bool(e & 1))
            return apply_pauli(tr, q, 3) if e & 2 else tr
        if k == OP_MEASURE:
            q = op.qubits[0]
            if q in tr.axes:
                tr, prob = project(tr, q, e)
                if prob == 0.0:
                    raise SimulationError("sampled a zero-probability outcome")
            return Traj(tr.axes, tr.psi, tr.basis, tr.known + ((op.bit, int(e)),), tr.pending)
        if k == OP_COND:
            return self._cond(tr, op, int(e))
        raise SimulationError(f"op {j} has no branch decision")

    # -- walking ----------------------------------------------------------
    def _potential(self, members):
        nz = self.codes[members].any(axis=0)
        if self.prog.relevant.shape[1]:
            pot = self.prog.always | self.prog.relevant[:, nz].any(axis=1)
        else:
            pot = self.prog.always.copy()
        return np.flatnonzero(pot)

    def _check_norm(self, tr):
        nrm = norm2(tr)
        if abs(nrm - 1.0) > _NORM_TOL:
            raise SimulationError(f"state norm drifted to {nrm!r}")

    def run(self, members: np.ndarray | None = None):
        prog = self.prog
        end = prog.size
        if members is None:
            members = np.arange(len(self.shots))
        stack = [(Traj.zero(prog.num_qubits), members, 0, ())]
        while stack:
            tr, mem, i, hist = stack.pop()
            self.stats.groups += 1
            pot = self._potential(mem)
            while True:
                nxt = pot[np.searchsorted(pot, i)] if len(pot) and pot[-1] >= i else end
                nxt = int(nxt)
                if self.cache is not None and i < nxt:
                    hit = self.cache.furthest(prog.prefix_ids, hist, i, nxt)
                    if hit is not None:
                        i, tr = hit
                if i < nxt:
                    for jj in range(i, nxt):
                        tr = self.apply_default(tr, jj)
                    self.stats.propagations += 1
                    self.stats.ops_applied += nxt - i
                    self._check_norm(tr)
                    if self.cache is not None:
                        self.cache.put(prog.prefix_ids[nxt], hist, nxt, tr)
                    i = nxt
                if i == end:
                    self._terminal(tr, mem, hist)
                    break
                eff, default = self.effects(tr, i, mem)
                uniq = np.unique(eff)
                if len(uniq) == 1:
                    e = int(uniq[0])
                    tr = self.apply_effect(tr, i, e)
                    if e != default:
                        hist = hist + ((i, e),)
                    i += 1
                    continue
                for e in uniq[::-1]:
                    e = int(e)
                    sub = mem[eff == e]
                    h2 = hist if e == default else hist + ((i, e),)
                    stack.append((self.apply_effect(tr, i, e), sub, i + 1, h2))
                break

    # -- terminal sampling ----------------------------------------------
    def _pending_in_axis_order(self, tr: Traj):
        where = {q: (j, b) for j, b, q in tr.pending}
        return [(where[q][0], where[q][1], q) for q in tr.axes if q in where]

    def _tables(self, tr: Traj):
        pending = self._pending_in_axis_order(tr)
        if not pending:
            return (np.ones(1),)
        prob = tr.psi.real ** 2 + tr.psi.imag ** 2
        rest = tuple(p for p, q in enumerate(tr.axes) if q not in {q for _, _, q in pending})
        if rest:
            prob = prob.sum(axis=rest)
        tables = [prob.reshape(-1)]
        for _ in range(len(pending)):
            t = tables[-1]
            tables.append(t[0::2] + t[1::2])
        return tuple(tables[::-1])  # tables[k]: marginal of the first k pending axes

    def _terminal(self, tr: Traj, mem: np.ndarray, hist):
        tables = None
        if self.cache is not None:
            tables = self.cache.get(self.prog.prefix_ids[-1], hist, _TABLES)
        if tables is None:
            tables = self._tables(tr)
            self.stats.terminal_tables += 1
            if self.cache is not None:
                self.cache.put(self.prog.prefix_ids[-1], hist, _TABLES, tables)
        for b, v in tr.known:
            self.bits[mem, b] = v
        pending = self._pending_in_axis_order(tr)
        if not pending:
            return
        counters = np.array([j for j, _, _ in pending], dtype=np.uint64)
        u = uniforms(self.seed, self.shots[mem][:, None], BRANCH, counters[None, :])
        idx = np.zeros(len(mem), dtype=np.int64)
        for k, (_, b, _) in enumerate(pending):
            num = tables[k + 1][2 * idx + 1]
            den = tables[k][idx]
            bit = u[:, k] * den < num
            idx = 2 * idx + bit
            self.bits[mem, b] = bit

    def readout(self):
        """Apply readout flags to the recorded bits of every shot."""
        for b, s in self.prog.bit_slot.items():
            if s < 0:
                continue
            r = self.codes[:, s]
            t = self.bits[:, b]
            flag = np.where(t == 0, r & 1, (r >> 1) & 1).astype(np.uint8)
            self.bits[:, b] = t ^ flag


# ---------------------------------------------------------------------------
# results
# ---------------------------------------------------------------------------


@dataclass
class Counts:
    """Bitstring histogram. Bitstrings list the registers in declaration order,
    each register's bits in index order (leftmost character = first bit)."""

    counts: dict
    registers: dict
    shots: int = 0

    def __post_init__(self):
        self.counts = {k: int(v) for k, v in sorted(self.counts.items())}
        self.registers = {str(k): int(v) for k, v in dict(self.registers).items()}
        total = sum(self.counts.values())
        if self.shots == 0:
            self.shots = total
        if total != self.shots:
            raise ValueError(f"counts sum to {total}, expected {self.shots}")
        width = sum(self.registers.values())
        for k in self.counts:
            if len(k) != width:
                raise ValueError(f"bitstring {k!r} does not match register width {width}")

    def __eq__(self, other):
        if not isinstance(other, Counts):
            return NotImplemented
        return self.counts == other.counts and self.registers == other.registers and self.shots == other.shots

    @property
    def width(self) -> int:
        return sum(self.registers.values())

    def offset(self, register: str) -> int:
        off = 0
        for name, size in self.registers.items():
            if name == register:
                return off
            off += size
        raise KeyError(register)

    def position(self, register: str, index: int = 0) -> int:
        if not 0 <= index < self.registers[register]:
            raise IndexError(f"{register}[{index}] out of range")
        return self.offset(register) + index

    def items(self):
        return self.counts.items()

    def to_dict(self) -> dict:
        return {
            "counts": dict(self.counts),
            "metadata": {
                "registers": [{"name": k, "size": v} for k, v in self.registers.items()],
                "bit_order": "registers in declaration order, bits in index order, leftmost first",
                "shots": self.shots,
            },
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, d) -> "Counts":
        regs = {r["name"]: r["size"] for r in d["metadata"]["registers"]}
        return cls(dict(d["counts"]), regs, d["metadata"].get("shots", 0))

    @classmethod
    def from_json(cls, text: str) -> "Counts":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class ShotRecord:
    bits: dict  # register -> tuple of bits

    def bitstring(self) -> str:
        return "".join("".join(str(b) for b in v) for v in self.bits.values())


def _output_order(registers: dict) -> list[int]:
    # global bit indices are already laid out register by register
    return list(range(sum(registers.values())))


def counts_from_bits(bits: np.ndarray, registers: dict) -> Counts:
    n = bits.shape[1]
    if n == 0:
        return Counts({"": bits.shape[0]}, registers, bits.shape[0])
    weights = (1 << np.arange(n - 1, -1, -1, dtype=np.int64))
    keys = bits.astype(np.int64) @ weights
    uniq, cnt = np.unique(keys, return_counts=True)
    counts = {format(int(k), f"0{n}b"): int(c) for k, c in zip(uniq, cnt)}
    return Counts(counts, registers, int(bits.shape[0]))


# ---------------------------------------------------------------------------
# public entry points
# ---------------------------------------------------------------------------


def _ensure_scheduled(circuit_or_scheduled, model):
    if isinstance(circuit_or_scheduled, ScheduledCircuit):
        return circuit_or_scheduled
    durations = model.durations if model is not None else None
    return schedule_asap(circuit_or_scheduled, durations)


def simulate_bits(
    scheduled,
    model: NoiseModel | None,
    shots,
    seed: int,
    cache: "TrajectoryCache | bool | None" = True,
    program: Program | None = None,
    stats: RunStats | None = None,
) -> np.ndarray:
    """Recorded bits (len(shots) x num_clbits) for the given global shot indices."""
    scheduled = _ensure_scheduled(scheduled, model)
    prog = program or compile_program(scheduled, model)
    shots = np.asarray(shots, dtype=np.int64).reshape(-1)
    stats = stats if stats is not None else RunStats()
    codes = sample_codes(prog.slots, seed, shots)
    if cache is True:
        cache = TrajectoryCache()
    elif cache is False:
        cache = None
    walker = _Walker(prog, seed, shots.astype(np.uint64), codes, cache, stats)
    if cache is not None:
        walker.run()
    else:
        for m in range(len(shots)):
            walker.run(np.array([m]))
    walker.readout()
    return walker.bits


def run_shot(scheduled, model: NoiseModel | None, rng) -> ShotRecord:
    """One shot using the random stream ``rng`` (a :class:`~chshforge.rng.ShotStream`)."""
    scheduled = _ensure_scheduled(scheduled, model)
    bits = simulate_bits(scheduled, model, [rng.shot], rng.seed, cache=None)[0]
    circ = scheduled.circuit
    return ShotRecord({name: tuple(int(bits[b]) for b in circ.register_bits(name)) for name in circ.registers})


def run_shots(
    scheduled,
    model: NoiseModel | None,
    n_shots: int,
    seed: int,
    workers: int = 1,
    cache: "TrajectoryCache | bool | None" = True,
    stats: RunStats | None = None,
) -> Counts:
    """Counts of ``n_shots`` shots with per-shot streams derived from (seed, shot index).

    ``cache=True`` uses a fresh :class:`TrajectoryCache` shared by the workers,
    a cache instance is used as given, and ``False``/``None`` walks every shot
    on its own. Results are bit-identical in all cases.
    """
    if n_shots < 1:
        raise ValueError("n_shots must be >= 1")
    scheduled = _ensure_scheduled(scheduled, model)
    prog = compile_program(scheduled, model)
    if cache is True:
        cache = TrajectoryCache()
    stats = stats if stats is not None else RunStats()
    workers = max(1, int(workers))
    bounds = np.linspace(0, n_shots, workers + 1).astype(int)
    chunks = [np.arange(lo, hi) for lo, hi in zip(bounds, bounds[1:]) if hi > lo]

    def job(sh):
        st = RunStats()
        return simulate_bits(scheduled, model, sh, seed, cache, prog, st), st

    if len(chunks) == 1:
        parts = [job(chunks[0])]
    else:
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            parts = list(pool.map(job, chunks))
    for _, st in parts:
        stats.add(st)
    bits = np.concatenate([p for p, _ in parts], axis=0)
    return counts_from_bits(bits, scheduled.circuit.registers)


def expectation(counts, a=("a", 0), b=("b", 0)) -> float:
    """Mean of (-1)^(a xor b) over a :class:`Counts` or quasi-distribution."""
    items = list(counts.items())
    if isinstance(counts, Counts):
        total = counts.shots
        pa, pb = counts.position(*a), counts.position(*b)
    else:
        total = sum(v for _, v in items)
        pa, pb = counts.position(*a), counts.position(*b)
    if not items or total == 0:
        raise ValueError("expectation of empty counts")
    acc = 0.0
    for key, v in items:
        acc += v if key[pa] == key[pb] else -v
    return acc / total


# ---------------------------------------------------------------------------
# noiseless statevector access (oracles, debugging)
# ---------------------------------------------------------------------------


def _initial_traj(n, initial):
    if initial is None:
        return Traj.zero(n)
    if isinstance(initial, dict):
        tr = Traj.zero(n)
        for q, vec in sorted(initial.items()):
            vec = np.asarray(vec, dtype=np.complex128)
            vec = vec / np.linalg.norm(vec)
            tr = _lift(tr, q, vec)
        return tr
    vec = np.asarray(initial, dtype=np.complex128).reshape((2,) * n)
    vec = vec / np.linalg.norm(vec)
    return Traj(tuple(range(n)), vec, (0,) * n)


def final_state(circuit: Circuit, initial=None, forced: dict | None = None) -> tuple[np.ndarray, float]:
    """Noiseless evolution in list order with measurement outcomes forced.

    ``initial`` is a full statevector or {qubit: 2-vector} (others |0>).
    ``forced`` maps every measured classical bit to its outcome; feedforward
    reads those values. Returns (statevector, branch probability).
    """
    forced = dict(forced or {})
    tr = _initial_traj(circuit.num_qubits, initial)
    prob = 1.0
    values = {}
    for ins in circuit:
        k = ins.kind
        if k is GateKind.BARRIER:
            continue
        if k is GateKind.MEASURE:
            b = ins.clbits[0]
            if b not in forced:
                raise SimulationError(f"no forced outcome for classical bit {b}")
            tr, p = project(tr, ins.qubits[0], forced[b])
            prob *= p
            values[b] = forced[b]
            if p == 0.0:
                return np.zeros(2**circuit.num_qubits, dtype=np.complex128), 0.0
        elif k is GateKind.COND_PAULI:
            par = 0
            for b in ins.clbits:
                par ^= values[b]
            if par:
                tr = apply_pauli(tr, ins.qubits[0], 1 if ins.pauli == "X" else 3)
        else:
            tr = apply_gate(tr, k, ins.qubits, ins.angle)
    return tr.dense(), prob


def statevector(circuit: Circuit, initial=None) -> np.ndarray:
    """Noiseless final state of a measurement-free circuit (global phase dropped)."""
    if circuit.count(GateKind.MEASURE):
        raise SimulationError("statevector() needs a circuit without measurements; use final_state()")
    return final_state(circuit, initial)[0]


def deferred_state(circuit: Circuit, initial=None) -> tuple[np.ndarray, dict]:
    """Noiseless final state with every measurement deferred.

    Measured qubits stay in the state and feedforward acts as a
    parity-controlled Pauli, so slicing the result at given values of the
    measured qubits yields that branch's post-feedforward state (unnormalized,
    squared norm = branch probability). Returns (statevector, {bit: qubit}).
    """
    scheduled = schedule_asap(circuit)
    prog = compile_program(scheduled, None)
    walker = _Walker(prog, 0, np.zeros(1, dtype=np.uint64), np.zeros((1, 0), dtype=np.uint8), None, RunStats())
    tr = _initial_traj(circuit.num_qubits, initial)
    for j, op in enumerate(prog.ops):
        if op.kind == OP_MEASURE and not op.deferred:
            raise SimulationError("deferred_state() needs every measured qubit to stay idle afterwards")
        tr = walker.apply_default(tr, j)
    return tr.dense(), {b: circuit.measured_qubit(b) for b in range(circuit.num_clbits)}
