"""Independent reference computations for the tests.

A deliberately naive dense simulator that walks Circuit instructions with
plain tensordot calls. It shares no code with the package kernel, so
agreement between the two is a real check.
"""
from __future__ import annotations

import itertools
import math

import numpy as np

from chshforge.circuit import GateKind

H = np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)
I2 = np.eye(2, dtype=complex)
PAULI = {"I": I2, "X": X, "Y": Y, "Z": Z}


def ry(theta):
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    return np.array([[c, -s], [s, c]], dtype=complex)


def apply_1q(psi, q, u):
    return np.moveaxis(np.tensordot(u, psi, axes=([1], [q])), 0, q)


def apply_cx(psi, c, t):
    out = psi.copy()
    sl1 = [slice(None)] * psi.ndim
    sl1[c] = 1
    sub = psi[tuple(sl1)]
    tt = t if t < c else t - 1
    out[tuple(sl1)] = np.flip(sub, axis=tt)
    return out


def apply_parity_pauli(psi, q, pauli, controls):
    """Pauli on ``q`` in every component where the control qubits have odd parity."""
    out = psi.copy()
    u = PAULI[pauli]
    for vals in itertools.product((0, 1), repeat=len(controls)):
        if sum(vals) % 2 == 0:
            continue
        sl = [slice(None)] * psi.ndim
        for c, v in zip(controls, vals):
            sl[c] = v
        sub = psi[tuple(sl)]
        qq = q - sum(1 for c in controls if c < q)
        out[tuple(sl)] = apply_1q(sub, qq, u)
    return out


def product_state(vectors):
    psi = np.array(1.0 + 0j)
    for v in vectors:
        psi = np.multiply.outer(psi, np.asarray(v, dtype=complex))
    return psi


def deferred_run(circuit, psi):
    """Evolve ``psi`` (shape (2,)*n) with measurements deferred.

    Each MEASURE leaves its qubit in place and records bit -> qubit; a
    conditional Pauli becomes a parity-controlled Pauli on the recorded
    qubits. Valid because measured qubits are never acted on again.
    """
    bit_qubit = {}
    for ins in circuit:
        k = ins.kind
        if k is GateKind.BARRIER:
            continue
        if k is GateKind.MEASURE:
            bit_qubit[ins.clbits[0]] = ins.qubits[0]
        elif k is GateKind.COND_PAULI:
            psi = apply_parity_pauli(psi, ins.qubits[0], ins.pauli, [bit_qubit[b] for b in ins.clbits])
        elif k is GateKind.CX:
            psi = apply_cx(psi, *ins.qubits)
        elif k is GateKind.SWAP:
            a, b = ins.qubits
            psi = apply_cx(apply_cx(apply_cx(psi, a, b), b, a), a, b)
        elif k is GateKind.RY:
            psi = apply_1q(psi, ins.qubits[0], ry(ins.angle))
        else:
            psi = apply_1q(psi, ins.qubits[0], {GateKind.H: H, GateKind.X: X, GateKind.Z: Z}[k])
    return psi, bit_qubit


def branch_states(circuit, control_vec, target_vec):
    """Rows = measurement branches, columns = (control, target) amplitudes after feedforward."""
    n = circuit.num_qubits
    vecs = [control_vec] + [[1, 0]] * (n - 2) + [target_vec]
    psi, _ = deferred_run(circuit, product_state(vecs))
    psi = np.moveaxis(psi, [0, n - 1], [n - 2, n - 1])
    return psi.reshape(-1, 4)


CNOT = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex)

TOMO = {
    "0": np.array([1, 0], dtype=complex),
    "1": np.array([0, 1], dtype=complex),
    "+": np.array([1, 1], dtype=complex) / math.sqrt(2),
    "+i": np.array([1, 1j], dtype=complex) / math.sqrt(2),
}


def chsh_ideal(phi):
    """Ideal (ZZ, ZX, XZ, XX) for H, CX, RY(phi) on the control."""
    return np.array([math.cos(phi), -math.sin(phi), math.sin(phi), math.cos(phi)])


def parity_retention(n):
    """Exact kept fraction of the post-selection filter by enumerating every ancilla outcome."""
    from chshforge.synthesis import synth_postprocessed_cnot

    circ = synth_postprocessed_cnot(n)
    psi, bit_qubit = deferred_run(circ, product_state([[1, 1]] + [[1, 0]] * (n - 1)))
    psi = psi / np.linalg.norm(psi)
    prob = np.abs(psi) ** 2
    regs = circ.registers
    zq = [bit_qubit[b] for b in circ.register_bits("z")] if regs["z"] else []
    xq = [bit_qubit[b] for b in circ.register_bits("x")] if regs["x"] else []
    kept = 0.0
    for idx in itertools.product((0, 1), repeat=n):
        if sum(idx[q] for q in zq) % 2 == 0 and sum(idx[q] for q in xq) % 2 == 0:
            kept += prob[idx]
    return kept
