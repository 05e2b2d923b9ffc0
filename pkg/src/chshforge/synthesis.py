"""Long-range CNOT realizations over a linear chain and the CHSH circuits built on them.

Circuits act on logical qubits ``0..n-1`` in chain order: qubit 0 is the
control, qubit n-1 the target and 1..n-2 the ancillas a1..ak. The physical
chain, when known, is recorded in ``metadata["chain"]``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

from .circuit import Circuit, CircuitError
from .topology import QubitChain


class CnotStrategy(str, Enum):
    UNITARY = "unitary"
    DYNAMIC = "dynamic"
    POSTPROCESSED = "postprocessed"

    @classmethod
    def parse(cls, value) -> "CnotStrategy":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "").replace("_", "")
        key = _ALIASES.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown CNOT strategy {value!r}; choose from {[m.value for m in cls]}") from None


_ALIASES = {"post": "postprocessed", "swap": "unitary", "dyn": "dynamic"}


STRATEGIES = (CnotStrategy.UNITARY, CnotStrategy.DYNAMIC, CnotStrategy.POSTPROCESSED)


def _chain_qubits(chain) -> tuple[int, ...]:
    if isinstance(chain, QubitChain):
        return chain.qubits
    if isinstance(chain, int):
        return tuple(range(chain))
    return tuple(chain)


def register_sizes(n: int) -> tuple[int, int]:
    """(|z|, |x|) for a chain of n qubits: floor and ceil of (n-2)/2."""
    k = max(n - 2, 0)
    return k // 2, (k + 1) // 2


@dataclass(frozen=True)
class DynamicLayout:
    """Layer assignment of the measurement-based CNOT over k = n-2 ancillas."""

    n: int
    layer1: tuple[tuple[int, int], ...]  # CX (control, target) pairs
    layer1_h: tuple[int, ...]  # ancillas put in |+> before layer 1
    layer2: tuple[tuple[int, int], ...]
    x_ancillas: tuple[int, ...]  # measured in the X basis, drive Z on the control
    z_ancillas: tuple[int, ...]  # measured in the Z basis, drive X on the target


def dynamic_layout(n: int) -> DynamicLayout:
    if n < 3:
        raise CircuitError("the measurement-based CNOT needs at least 3 qubits")
    k = n - 2
    anc = list(range(1, n - 1))  # anc[i] is a_{i+1}
    t = n - 1
    if k % 2:
        # c -> a1 copy plus Bell pairs (a2,a3), (a4,a5), ...; then a1-a2, a3-a4, ..., ak-t
        pairs = [(anc[i], anc[i + 1]) for i in range(1, k - 1, 2)]
        layer1 = [(0, anc[0])] + pairs
        layer2 = [(anc[i], anc[i + 1]) for i in range(0, k - 1, 2)] + [(anc[-1], t)]
        x_anc = anc[0::2]
        z_anc = anc[1::2]
    else:
        # Bell pairs (a1,a2), (a3,a4), ...; then c-a1, a2-a3, ..., ak-t
        pairs = [(anc[i], anc[i + 1]) for i in range(0, k, 2)]
        layer1 = pairs
        layer2 = [(0, anc[0])] + [(anc[i], anc[i + 1]) for i in range(1, k - 1, 2)] + [(anc[-1], t)]
        z_anc = anc[0::2]
        x_anc = anc[1::2]
    return DynamicLayout(
        n,
        tuple(layer1),
        tuple(a for a, _ in pairs),
        tuple(layer2),
        tuple(x_anc),
        tuple(z_anc),
    )


def _new_circuit(n, registers, chain, strategy):
    meta = {"strategy": strategy.value, "length": n}
    if chain is not None:
        meta["chain"] = list(chain)
    return Circuit(n, registers, meta)


def _append_unitary_cnot(circ: Circuit, n: int) -> None:
    if n == 2:
        circ.cx(0, 1)
        return
    for i in range(n - 2):
        circ.swap(i, i + 1)
    circ.cx(n - 2, n - 1)
    for i in reversed(range(n - 2)):
        circ.swap(i, i + 1)


def _append_dynamic_gates(circ: Circuit, lay: DynamicLayout) -> None:
    for a in lay.layer1_h:
        circ.h(a)
    for c, t in lay.layer1:
        circ.cx(c, t)
    for c, t in lay.layer2:
        circ.cx(c, t)
    for a in lay.x_ancillas:
        circ.h(a)


def _measure_ancillas(circ: Circuit, lay: DynamicLayout) -> None:
    for i, a in enumerate(lay.z_ancillas):
        circ.measure(a, "z", i)
    for i, a in enumerate(lay.x_ancillas):
        circ.measure(a, "x", i)


def _append_feedforward(circ: Circuit, lay: DynamicLayout) -> None:
    if lay.x_ancillas:
        circ.cond_pauli("Z", 0, circ.register_bits("x"))
    if lay.z_ancillas:
        circ.cond_pauli("X", lay.n - 1, circ.register_bits("z"))


def synth_unitary_cnot(chain) -> Circuit:
    """SWAP the control next to the target, CX, and SWAP it back."""
    qubits = _chain_qubits(chain)
    n = len(qubits)
    if n < 2:
        raise CircuitError("a CNOT needs a chain of at least 2 qubits")
    circ = _new_circuit(n, {}, qubits, CnotStrategy.UNITARY)
    _append_unitary_cnot(circ, n)
    return circ


def synth_dynamic_cnot(chain) -> Circuit:
    """Constant-depth CNOT: Bell pairs, one entangling layer, ancilla measurement, feedforward."""
    qubits = _chain_qubits(chain)
    n = len(qubits)
    lay = dynamic_layout(n)
    m, l = register_sizes(n)
    circ = _new_circuit(n, {"z": m, "x": l}, qubits, CnotStrategy.DYNAMIC)
    _append_dynamic_gates(circ, lay)
    _measure_ancillas(circ, lay)
    _append_feedforward(circ, lay)
    return circ


def synth_postprocessed_cnot(chain) -> Circuit:
    """Same gates as the dynamic CNOT with no feedforward; ancillas are read out
    at the very end, and only shots with even z and x parity realize the CNOT."""
    qubits = _chain_qubits(chain)
    n = len(qubits)
    lay = dynamic_layout(n)
    m, l = register_sizes(n)
    circ = _new_circuit(n, {"z": m, "x": l}, qubits, CnotStrategy.POSTPROCESSED)
    _append_dynamic_gates(circ, lay)
    circ.barrier()
    _measure_ancillas(circ, lay)
    return circ


SYNTHESIZERS = {
    CnotStrategy.UNITARY: synth_unitary_cnot,
    CnotStrategy.DYNAMIC: synth_dynamic_cnot,
    CnotStrategy.POSTPROCESSED: synth_postprocessed_cnot,
}


@dataclass(frozen=True)
class ChshCircuitSpec:
    chain: object  # QubitChain, sequence of physical qubits, or a length
    phi: float
    basis: tuple[str, str]
    strategy: CnotStrategy

    def __post_init__(self):
        object.__setattr__(self, "strategy", CnotStrategy.parse(self.strategy))
        basis = tuple(str(b).upper() for b in self.basis)
        if len(basis) != 2 or any(b not in ("Z", "X") for b in basis):
            raise CircuitError(f"basis must be a pair over {{Z, X}}, got {self.basis!r}")
        object.__setattr__(self, "basis", basis)
        if len(_chain_qubits(self.chain)) < 2:
            raise CircuitError("CHSH needs a chain of at least 2 qubits")
        if not math.isfinite(self.phi):
            raise CircuitError("phi must be finite")

    @property
    def length(self) -> int:
        return len(_chain_qubits(self.chain))


def build_chsh_circuit(spec: ChshCircuitSpec) -> Circuit:
    """Bell pair across the chain, RY(phi) on the control, then measure in ``spec.basis``.

    Registers a and b hold the control and target outcomes; z and x hold the
    ancilla outcomes of the measurement-based strategies (empty for UNITARY).
    """
    qubits = _chain_qubits(spec.chain)
    n = len(qubits)
    st = spec.strategy
    m, l = (0, 0) if st is CnotStrategy.UNITARY else register_sizes(n)
    circ = _new_circuit(n, {"a": 1, "b": 1, "z": m, "x": l}, qubits, st)
    circ.metadata.update({"phi": spec.phi, "basis": "".join(spec.basis)})
    t = n - 1
    circ.h(0)
    lay = None
    if n == 2 or st is CnotStrategy.UNITARY:
        _append_unitary_cnot(circ, n)
    else:
        lay = dynamic_layout(n)
        _append_dynamic_gates(circ, lay)
        if st is CnotStrategy.DYNAMIC:
            _measure_ancillas(circ, lay)
            _append_feedforward(circ, lay)
    circ.ry(spec.phi, 0)
    # the barrier precedes the basis rotations so they sit right before readout;
    # otherwise ASAP would rotate an early-finishing target and leave it idling in the Z frame
    if st is CnotStrategy.POSTPROCESSED:
        circ.barrier()
    else:
        circ.barrier(0, t)
    if spec.basis[0] == "X":
        circ.h(0)
    if spec.basis[1] == "X":
        circ.h(t)
    if st is CnotStrategy.POSTPROCESSED:
        circ.barrier()  # one joint measurement layer with the ancillas
    circ.measure(0, "a", 0)
    circ.measure(t, "b", 0)
    if st is CnotStrategy.POSTPROCESSED and lay is not None:
        _measure_ancillas(circ, lay)
    return circ
