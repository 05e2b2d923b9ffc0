"""Counter-based random streams keyed by (seed, shot, stream, counter).

Every random number a shot consumes is a pure function of its coordinates, so
results do not depend on how shots are batched, cached or split across
workers. numpy's bit generators cannot be indexed per shot in a vectorized way,
hence the small SplitMix64-style mixer below.
"""
from __future__ import annotations

import numpy as np

PATTERN = 1
BRANCH = 2

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30, _S27, _S31 = np.uint64(30), np.uint64(27), np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / (1 << 53)


def _mix(x: np.ndarray) -> np.ndarray:
    x = x ^ (x >> _S30)
    x = x * _M1
    x = x ^ (x >> _S27)
    x = x * _M2
    return x ^ (x >> _S31)


def _mix_int(x: int) -> int:
    x &= _MASK
    x ^= x >> 30
    x = (x * 0xBF58476D1CE4E5B9) & _MASK
    x ^= x >> 27
    x = (x * 0x94D049BB133111EB) & _MASK
    return x ^ (x >> 31)


def derive_seed(*keys: int) -> int:
    """Fold integer keys into a 63-bit seed (order-sensitive)."""
    h = _GOLDEN
    for k in keys:
        h = _mix_int(h ^ (int(k) & _MASK))
        h = _mix_int(h + _GOLDEN)
    return h >> 1


def uniforms(seed: int, shots, stream: int, counters) -> np.ndarray:
    """Uniform doubles in [0, 1) for broadcastable ``shots`` x ``counters`` arrays."""
    shots = np.asarray(shots, dtype=np.uint64)
    counters = np.asarray(counters, dtype=np.uint64)
    base = np.uint64(_mix_int(_mix_int(int(seed) ^ _GOLDEN) ^ (stream * _GOLDEN)))
    with np.errstate(over="ignore"):
        h = _mix(base ^ _mix(shots + np.uint64(_GOLDEN)))
        h = _mix(h ^ _mix(counters * np.uint64(2) + np.uint64(1)))
    return (h >> _S11).astype(np.float64) * _INV53


class ShotStream:
    """The random stream of one shot; a thin view over :func:`uniforms`."""

    __slots__ = ("seed", "shot")

    def __init__(self, seed: int, shot: int):
        self.seed = int(seed)
        self.shot = int(shot)

    def uniform(self, stream: int, counter: int) -> float:
        return float(uniforms(self.seed, self.shot, stream, counter))

    def __repr__(self):
        return f"ShotStream(seed={self.seed}, shot={self.shot})"
