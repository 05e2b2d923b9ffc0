"""Minimal circuit representation with mid-circuit measurement and parity-conditioned Paulis.

Qubits are integer indices ``0..num_qubits-1``. Classical bits live in named
registers; each register occupies a contiguous block of global bit indices in
declaration order, so ``circuit.clbit("x", 1)`` is an ordinary integer.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable


class CircuitError(ValueError):
    """Raised when an instruction violates the circuit invariants."""


class GateKind(str, Enum):
    H = "H"
    X = "X"
    Z = "Z"
    RY = "RY"
    CX = "CX"
    SWAP = "SWAP"
    MEASURE = "MEASURE"
    COND_PAULI = "COND_PAULI"
    BARRIER = "BARRIER"


_ARITY = {
    GateKind.H: 1,
    GateKind.X: 1,
    GateKind.Z: 1,
    GateKind.RY: 1,
    GateKind.CX: 2,
    GateKind.SWAP: 2,
    GateKind.MEASURE: 1,
    GateKind.COND_PAULI: 1,
}

TWO_QUBIT_KINDS = frozenset({GateKind.CX, GateKind.SWAP})
ONE_QUBIT_KINDS = frozenset({GateKind.H, GateKind.X, GateKind.Z, GateKind.RY})


@dataclass(frozen=True)
class Instruction:
    """One circuit operation.

    ``clbits`` is the written bit for MEASURE and the parity set for COND_PAULI.
    """

    kind: GateKind
    qubits: tuple[int, ...]
    clbits: tuple[int, ...] = ()
    angle: float | None = None
    pauli: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", GateKind(self.kind))
        object.__setattr__(self, "qubits", tuple(int(q) for q in self.qubits))
        object.__setattr__(self, "clbits", tuple(int(c) for c in self.clbits))
        if self.angle is not None:
            object.__setattr__(self, "angle", float(self.angle))

    @property
    def is_two_qubit(self) -> bool:
        return self.kind in TWO_QUBIT_KINDS

    def to_dict(self) -> dict:
        d = {"kind": self.kind.value, "qubits": list(self.qubits), "clbits": list(self.clbits)}
        if self.angle is not None:
            d["angle"] = self.angle
        if self.kind is GateKind.COND_PAULI:
            d["condition"] = {"pauli": self.pauli, "parity_of": list(self.clbits)}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Instruction":
        pauli = None
        if "condition" in d:
            pauli = d["condition"]["pauli"]
        return cls(GateKind(d["kind"]), tuple(d["qubits"]), tuple(d.get("clbits", ())), d.get("angle"), pauli)


@dataclass
class Circuit:
    """Ordered instruction list over ``num_qubits`` qubits and named classical registers.

    Build circuits through :meth:`append` (or the gate helpers, which call it);
    every invariant is checked there. Downstream code treats a built circuit as
    immutable and transformations return new circuits.
    """

    num_qubits: int
    registers: dict[str, int] = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.num_qubits < 1:
            raise CircuitError("circuit needs at least one qubit")
        self.registers = {str(k): int(v) for k, v in dict(self.registers).items()}
        for name, size in self.registers.items():
            if size < 0:
                raise CircuitError(f"register {name!r} has negative size")
        self._offsets: dict[str, int] = {}
        off = 0
        for name, size in self.registers.items():
            self._offsets[name] = off
            off += size
        self.num_clbits = off
        self._instructions: list[Instruction] = []
        self._written: set[int] = set()

    # -- queries ---------------------------------------------------------
    @property
    def instructions(self) -> tuple[Instruction, ...]:
        return tuple(self._instructions)

    def __len__(self) -> int:
        return len(self._instructions)

    def __iter__(self):
        return iter(self._instructions)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Circuit):
            return NotImplemented
        return (
            self.num_qubits == other.num_qubits
            and list(self.registers.items()) == list(other.registers.items())
            and self._instructions == other._instructions
            and self.metadata == other.metadata
        )

    def clbit(self, register: str, index: int) -> int:
        size = self.registers[register]
        if not 0 <= index < size:
            raise CircuitError(f"bit {index} out of range for register {register!r} of size {size}")
        return self._offsets[register] + index

    def register_bits(self, register: str) -> tuple[int, ...]:
        off = self._offsets[register]
        return tuple(range(off, off + self.registers[register]))

    def bit_label(self, clbit: int) -> tuple[str, int]:
        for name, size in self.registers.items():
            off = self._offsets[name]
            if off <= clbit < off + size:
                return name, clbit - off
        raise CircuitError(f"classical bit {clbit} out of range")

    def count(self, kind: GateKind | str) -> int:
        kind = GateKind(kind)
        return sum(1 for ins in self._instructions if ins.kind is kind)

    def measured_qubit(self, clbit: int) -> int | None:
        for ins in self._instructions:
            if ins.kind is GateKind.MEASURE and ins.clbits[0] == clbit:
                return ins.qubits[0]
        return None

    # -- mutation --------------------------------------------------------
    def append(self, instruction: Instruction) -> "Circuit":
        ins = instruction
        arity = _ARITY.get(ins.kind)
        if ins.kind is GateKind.BARRIER:
            if not ins.qubits:
                raise CircuitError("barrier needs at least one qubit")
        elif len(ins.qubits) != arity:
            raise CircuitError(f"{ins.kind.value} acts on {arity} qubit(s), got {len(ins.qubits)}")
        if len(set(ins.qubits)) != len(ins.qubits):
            raise CircuitError(f"duplicate qubit in {ins.kind.value} {ins.qubits}")
        for q in ins.qubits:
            if not 0 <= q < self.num_qubits:
                raise CircuitError(f"qubit index {q} out of range for width {self.num_qubits}")
        for c in ins.clbits:
            if not 0 <= c < self.num_clbits:
                raise CircuitError(f"classical bit {c} out of range for width {self.num_clbits}")

        if ins.kind is GateKind.RY:
            if ins.angle is None or not math.isfinite(ins.angle):
                raise CircuitError("RY angle must be a finite number")
        elif ins.angle is not None:
            raise CircuitError(f"{ins.kind.value} takes no angle")

        if ins.kind is GateKind.MEASURE:
            if len(ins.clbits) != 1:
                raise CircuitError("MEASURE writes exactly one classical bit")
            if ins.clbits[0] in self._written:
                raise CircuitError(f"classical bit {ins.clbits[0]} already written")
        elif ins.kind is GateKind.COND_PAULI:
            if ins.pauli not in ("X", "Z"):
                raise CircuitError(f"conditional Pauli must be X or Z, got {ins.pauli!r}")
            if not ins.clbits:
                raise CircuitError("conditional Pauli needs a non-empty condition set")
            if len(set(ins.clbits)) != len(ins.clbits):
                raise CircuitError("duplicate bit in condition set")
            missing = [c for c in ins.clbits if c not in self._written]
            if missing:
                raise CircuitError(f"condition reads unwritten classical bit(s) {missing}")
        else:
            if ins.clbits:
                raise CircuitError(f"{ins.kind.value} takes no classical bits")
            if ins.pauli is not None:
                raise CircuitError(f"{ins.kind.value} takes no pauli")

        self._instructions.append(ins)
        if ins.kind is GateKind.MEASURE:
            self._written.add(ins.clbits[0])
        return self

    def extend(self, instructions: Iterable[Instruction]) -> "Circuit":
        for ins in instructions:
            self.append(ins)
        return self

    # gate helpers
    def h(self, q):
        return self.append(Instruction(GateKind.H, (q,)))

    def x(self, q):
        return self.append(Instruction(GateKind.X, (q,)))

    def z(self, q):
        return self.append(Instruction(GateKind.Z, (q,)))

    def ry(self, angle, q):
        return self.append(Instruction(GateKind.RY, (q,), angle=angle))

    def cx(self, control, target):
        return self.append(Instruction(GateKind.CX, (control, target)))

    def swap(self, a, b):
        return self.append(Instruction(GateKind.SWAP, (a, b)))

    def measure(self, q, register: str, index: int = 0):
        return self.append(Instruction(GateKind.MEASURE, (q,), (self.clbit(register, index),)))

    def cond_pauli(self, pauli: str, q, bits: Iterable[int]):
        return self.append(Instruction(GateKind.COND_PAULI, (q,), tuple(bits), pauli=pauli))

    def barrier(self, *qubits):
        qubits = qubits or tuple(range(self.num_qubits))
        return self.append(Instruction(GateKind.BARRIER, tuple(qubits)))

    def copy_empty(self) -> "Circuit":
        return Circuit(self.num_qubits, dict(self.registers), dict(self.metadata))

    def copy(self) -> "Circuit":
        return self.copy_empty().extend(self._instructions)

    # -- serialization ---------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "num_qubits": self.num_qubits,
            "registers": [{"name": k, "size": v} for k, v in self.registers.items()],
            "instructions": [ins.to_dict() for ins in self._instructions],
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Circuit":
        regs = {r["name"]: r["size"] for r in d.get("registers", [])}
        circ = cls(d["num_qubits"], regs, dict(d.get("metadata", {})))
        return circ.extend(Instruction.from_dict(i) for i in d["instructions"])

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_json(cls, text: str) -> "Circuit":
        return cls.from_dict(json.loads(text))


def decompose_swaps(circuit: Circuit) -> Circuit:
    """Replace every SWAP(a, b) by CX(a, b) CX(b, a) CX(a, b)."""
    out = circuit.copy_empty()
    for ins in circuit:
        if ins.kind is GateKind.SWAP:
            a, b = ins.qubits
            out.cx(a, b).cx(b, a).cx(a, b)
        else:
            out.append(ins)
    return out


def two_qubit_depth(circuit: Circuit) -> int:
    """Greedy layering of two-qubit gates by qubit availability.

    One-qubit gates, measurements, conditionals and barriers neither add layers
    nor create dependencies. A SWAP counts as a single layer.
    """
    level = [0] * circuit.num_qubits
    depth = 0
    for ins in circuit:
        if ins.kind in TWO_QUBIT_KINDS:
            layer = max(level[q] for q in ins.qubits) + 1
            for q in ins.qubits:
                level[q] = layer
            depth = max(depth, layer)
    return depth


def two_qubit_count(circuit: Circuit) -> int:
    return sum(1 for ins in circuit if ins.kind in TWO_QUBIT_KINDS)
