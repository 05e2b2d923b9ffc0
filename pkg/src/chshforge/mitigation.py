"""Tensored readout-error mitigation over the observed-bitstring subspace.

Each measured qubit gets a 2x2 column-stochastic confusion matrix fitted from
two calibration circuits (all zeros, all ones). Raw counts are corrected by
solving the confusion system restricted to the observed bitstrings (optionally
widened by a Hamming halo) with a preconditioned Krylov solver. Matrix
elements are products of per-qubit entries and only pairs within a Hamming
distance cutoff are generated, so nothing of size 2^n is ever built.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import LinearOperator, gmres

from .circuit import Circuit

DEFAULT_DISTANCE = 3
DEFAULT_MAX_ITER = 1000
RESIDUAL_TOL = 1e-8


class MitigationError(ValueError):
    pass


@dataclass(frozen=True)
class ConfusionSet:
    """``matrices[q][i][j]`` = P(read i | prepared j) for each measured qubit q."""

    matrices: dict

    def __post_init__(self):
        mats = {}
        for q, m in dict(self.matrices).items():
            a = np.array(m, dtype=float)
            if a.shape != (2, 2):
                raise MitigationError(f"confusion matrix of qubit {q} must be 2x2")
            if np.any(a < 0) or not np.allclose(a.sum(axis=0), 1.0, atol=1e-9):
                raise MitigationError(f"confusion matrix of qubit {q} is not column-stochastic")
            if a[0, 0] < 0.5 or a[1, 1] < 0.5:
                raise MitigationError(f"confusion matrix of qubit {q} has a diagonal entry below 0.5")
            a.setflags(write=False)
            mats[int(q)] = a
        object.__setattr__(self, "matrices", mats)

    @classmethod
    def identity(cls, qubits) -> "ConfusionSet":
        return cls({q: np.eye(2) for q in qubits})

    @classmethod
    def symmetric(cls, qubits, p: float) -> "ConfusionSet":
        return cls.from_flips({q: (p, p) for q in qubits})

    @classmethod
    def from_flips(cls, flips: dict) -> "ConfusionSet":
        """``flips[q] = (p10, p01)``: P(read 1 | 0) and P(read 0 | 1)."""
        return cls({q: [[1 - p10, p01], [p10, 1 - p01]] for q, (p10, p01) in flips.items()})

    @property
    def qubits(self) -> tuple[int, ...]:
        return tuple(sorted(self.matrices))

    def __getitem__(self, q) -> np.ndarray:
        return self.matrices[int(q)]

    def __contains__(self, q) -> bool:
        return int(q) in self.matrices

    def is_identity(self, qubits=None) -> bool:
        qs = self.qubits if qubits is None else qubits
        return all(np.array_equal(self[q], np.eye(2)) for q in qs)

    def to_dict(self) -> dict:
        return {str(q): self.matrices[q].tolist() for q in self.qubits}

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, d: dict) -> "ConfusionSet":
        return cls({int(q): m for q, m in d.items()})

    @classmethod
    def from_json(cls, text: str) -> "ConfusionSet":
        return cls.from_dict(json.loads(text))


@dataclass
class QuasiDistribution:
    """Bitstring -> real weight (weights may be negative)."""

    probs: dict
    registers: dict = field(default_factory=dict)
    shots: int = 0
    iterations: int = 0
    residual: float = 0.0

    def __post_init__(self):
        self.probs = {k: float(v) for k, v in sorted(self.probs.items())}

    def items(self):
        return self.probs.items()

    def __getitem__(self, key) -> float:
        return self.probs.get(key, 0.0)

    def __len__(self) -> int:
        return len(self.probs)

    @property
    def total(self) -> float:
        return math.fsum(self.probs.values())

    @property
    def overhead(self) -> float:
        return math.fsum(abs(v) for v in self.probs.values())

    def position(self, register: str, index: int = 0) -> int:
        off = 0
        for name, size in self.registers.items():
            if name == register:
                if not 0 <= index < size:
                    raise IndexError(f"{register}[{index}] out of range")
                return off + index
            off += size
        raise KeyError(register)


# ---------------------------------------------------------------------------
# calibration
# ---------------------------------------------------------------------------


def calibration_circuits(qubits) -> list[Circuit]:
    """All-zeros and all-ones preparations, each measured into register ``c``.

    Circuits act on logical qubits ``0..k-1``; ``metadata["qubits"]`` records
    the labels they stand for.
    """
    qubits = list(qubits)
    if not qubits:
        raise MitigationError("calibration needs at least one qubit")
    k = len(qubits)
    out = []
    for state in (0, 1):
        c = Circuit(k, {"c": k}, {"calibration": state, "qubits": qubits})
        if state:
            for i in range(k):
                c.x(i)
        c.barrier()
        for i in range(k):
            c.measure(i, "c", i)
        out.append(c)
    return out


def _count_items(counts):
    items = counts.items() if hasattr(counts, "items") else counts
    return [(str(k), int(v)) for k, v in items]


def fit_confusion(calibration_counts, qubits=None) -> ConfusionSet:
    """Per-qubit flip frequencies from the two calibration runs.

    ``calibration_counts`` is ``[counts_all0, counts_all1]`` (or a dict with
    keys 0 and 1); bit i of each bitstring belongs to ``qubits[i]``.
    """
    if isinstance(calibration_counts, dict):
        if not {0, 1} <= set(calibration_counts):
            raise MitigationError("calibration counts must cover both the all-0 and all-1 circuits")
        runs = [calibration_counts[0], calibration_counts[1]]
    else:
        runs = list(calibration_counts)
        if len(runs) != 2:
            raise MitigationError(f"expected counts from 2 calibration circuits, got {len(runs)}")
    items = [_count_items(r) for r in runs]
    widths = {len(k) for it in items for k, _ in it}
    if len(widths) != 1:
        raise MitigationError("calibration bitstrings have inconsistent widths")
    k = widths.pop()
    qubits = list(range(k)) if qubits is None else list(qubits)
    if len(qubits) != k:
        raise MitigationError(f"{len(qubits)} qubit labels for {k}-bit calibration strings")
    flips = np.zeros((2, k))
    for prep, it in enumerate(items):
        total = sum(v for _, v in it)
        if total <= 0:
            raise MitigationError("calibration run has zero shots")
        wrong = str(1 - prep)
        for key, v in it:
            for i, ch in enumerate(key):
                if ch == wrong:
                    flips[prep, i] += v
        flips[prep] /= total
    return ConfusionSet.from_flips({q: (flips[0, i], flips[1, i]) for i, q in enumerate(qubits)})


# ---------------------------------------------------------------------------
# restricted solve
# ---------------------------------------------------------------------------


def _to_ints(keys, width):
    if width > 62:
        raise MitigationError("bitstrings wider than 62 bits are not supported")
    return np.array([int(k, 2) if width else 0 for k in keys], dtype=np.int64)


def _flip_masks(width, distance):
    masks = []
    for d in range(1, distance + 1):
        for combo in itertools.combinations(range(width), d):
            m = 0
            for i in combo:
                m |= 1 << (width - 1 - i)
            masks.append(m)
    return np.array(masks, dtype=np.int64)


def _with_halo(states, width, halo):
    if halo <= 0:
        return states
    masks = _flip_masks(width, halo)
    grown = (states[:, None] ^ masks[None, :]).reshape(-1)
    return np.unique(np.concatenate([states, grown]))


def _element(a_stack, width, rows, cols):
    """Product over qubits of A_q[row bit][col bit] for each (row, col) pair."""
    val = np.ones(len(rows))
    for i in range(width):
        sh = width - 1 - i
        rb = (rows >> sh) & 1
        cb = (cols >> sh) & 1
        val *= a_stack[i][rb, cb]
    return val


def restricted_matrix(states: np.ndarray, a_stack, width: int, distance: int | None = DEFAULT_DISTANCE):
    """Sparse confusion matrix over ``states`` (sorted ints), columns renormalized to 1.

    Only pairs within Hamming ``distance`` are kept (all pairs when None).
    """
    n = len(states)
    if distance is None or distance >= width:
        rows = np.repeat(np.arange(n), n)
        cols = np.tile(np.arange(n), n)
    else:
        masks = np.concatenate([[0], _flip_masks(width, distance)])
        nb = states[:, None] ^ masks[None, :]
        pos = np.searchsorted(states, nb)
        pos_c = np.minimum(pos, n - 1)
        hit = states[pos_c] == nb
        cols = np.repeat(np.arange(n), len(masks))[hit.reshape(-1)]
        rows = pos_c.reshape(-1)[hit.reshape(-1)]
    vals = _element(a_stack, width, states[rows], states[cols])
    mat = sparse.csc_matrix((vals, (rows, cols)), shape=(n, n))
    colsum = np.asarray(mat.sum(axis=0)).reshape(-1)
    return (mat @ sparse.diags(1.0 / colsum)).tocsc()


def _subspace(raw_counts, confusion, qubits, halo):
    items = _count_items(raw_counts)
    if not items:
        raise MitigationError("cannot mitigate empty counts")
    widths = {len(k) for k, _ in items}
    if len(widths) != 1:
        raise MitigationError("raw bitstrings have inconsistent widths")
    width = widths.pop()
    qubits = list(range(width)) if qubits is None else list(qubits)
    if len(qubits) != width:
        raise MitigationError(f"{len(qubits)} qubit labels for {width}-bit strings")
    missing = [q for q in qubits if q not in confusion]
    if missing:
        raise MitigationError(f"no confusion matrix for qubit(s) {missing}")
    total = sum(v for _, v in items)
    if total <= 0:
        raise MitigationError("raw counts have zero shots")
    obs = _to_ints([k for k, _ in items], width)
    p_obs = np.array([v for _, v in items], dtype=float) / total
    states = _with_halo(np.unique(obs), width, halo)
    p = np.zeros(len(states))
    np.add.at(p, np.searchsorted(states, obs), p_obs)
    a_stack = [np.asarray(confusion[q]) for q in qubits]
    return states, p, a_stack, width, total


def mitigate(
    raw_counts,
    confusion: ConfusionSet,
    qubits=None,
    *,
    distance: int | None = DEFAULT_DISTANCE,
    halo: int = 0,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = RESIDUAL_TOL,
    registers=None,
) -> QuasiDistribution:
    """Solve A_S x = p_raw on the observed subspace S and return x.

    ``qubits[i]`` labels bit i of every bitstring (defaults to ``range(width)``).
    Raises :class:`MitigationError` when the solver does not reach an L2
    residual below ``tol`` within ``max_iter`` iterations.
    """
    states, p, a_stack, width, total = _subspace(raw_counts, confusion, qubits, halo)
    if registers is None:
        registers = dict(getattr(raw_counts, "registers", {}) or {"bits": width})
    mat = restricted_matrix(states, a_stack, width, distance)
    diag = mat.diagonal()
    if np.any(diag <= 0):
        raise MitigationError("confusion system has a non-positive diagonal")
    precond = LinearOperator(mat.shape, matvec=lambda v: v / diag, dtype=float)
    iters = [0]

    def _count(_):
        iters[0] += 1

    x, info = gmres(
        mat, p, x0=p / diag, rtol=0.01 * tol, atol=0.0, restart=min(len(p), 50),
        maxiter=max_iter, M=precond, callback=_count, callback_type="pr_norm",
    )
    res = float(np.linalg.norm(mat @ x - p))
    if info != 0 or not res < tol:
        raise MitigationError(
            f"mitigation solver did not converge (info={info}, residual={res:.3e}); "
            "the confusion matrices may be ill-conditioned"
        )
    fmt = f"0{width}b"
    probs = {format(int(s), fmt) if width else "": float(v) for s, v in zip(states, x)}
    return QuasiDistribution(probs, registers, total, iters[0], res)


def mitigate_dense(raw_counts, confusion: ConfusionSet, qubits=None, *, distance=DEFAULT_DISTANCE, halo: int = 0) -> dict:
    """Direct dense solve of the same restricted system (reference for small subspaces)."""
    states, p, a_stack, width, _ = _subspace(raw_counts, confusion, qubits, halo)
    if len(states) > 4096:
        raise MitigationError("dense reference limited to 4096 states")
    mat = restricted_matrix(states, a_stack, width, distance).toarray()
    x = np.linalg.solve(mat, p)
    fmt = f"0{width}b"
    return {format(int(s), fmt) if width else "": float(v) for s, v in zip(states, x)}


def parity_expectations(raw_counts, confusion: ConfusionSet, groups, qubits=None) -> list[float]:
    """Mitigated <prod_{i in g} Z_i> for each bit-position group g, over the full tensored inverse.

    Under a tensored confusion model the full-space inverse factorizes: the
    mitigated value of a product observable is the raw average of per-bit
    weights A_q^{-T} (1, -1). No subspace restriction is involved, so sparse
    samples over wide registers are corrected exactly in expectation.
    """
    items = _count_items(raw_counts)
    if not items:
        raise MitigationError("cannot mitigate empty counts")
    width = len(items[0][0])
    qubits = list(range(width)) if qubits is None else list(qubits)
    if len(qubits) != width:
        raise MitigationError(f"{len(qubits)} qubit labels for {width}-bit strings")
    missing = [q for q in qubits if q not in confusion]
    if missing:
        raise MitigationError(f"no confusion matrix for qubit(s) {missing}")
    w = np.array([v for _, v in items], dtype=float)
    if w.sum() <= 0:
        raise MitigationError("raw counts have zero shots")
    w /= w.sum()
    bits = np.frombuffer("".join(k for k, _ in items).encode(), dtype=np.uint8).reshape(len(items), width) - ord("0")
    g = np.array([np.linalg.solve(np.asarray(confusion[q]).T, [1.0, -1.0]) for q in qubits])  # (width, 2)
    vals = g[np.arange(width)[None, :], bits]
    out = []
    for grp in groups:
        grp = list(grp)
        prod = np.prod(vals[:, grp], axis=1) if grp else np.ones(len(items))
        out.append(float(w @ prod))
    return out


def marginal(counts, positions) -> dict:
    """Counts (or weights) summed onto the given bit positions, in that order."""
    out: dict = {}
    for key, v in counts.items():
        k = "".join(key[p] for p in positions)
        out[k] = out.get(k, 0) + v
    return out
