"""Deterministic counter-based random number generation.

The generator is a splitmix-style counter RNG: draw ``i`` of stream
``(seed, stream)`` is ``mix64(base + i * GAMMA)`` where ``base`` is derived
from the seed and stream id.  Because outputs depend only on (seed, stream,
counter), the sequence is reproducible and whole blocks can be produced
vectorized with numpy uint64 arithmetic (which wraps mod 2^64, as required).

Bit-equality is guaranteed within this implementation only; the constants
below are the usual splitmix64 ones (Steele et al. finalizer).
"""

from __future__ import annotations

import math

import numpy as np

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15  # golden-ratio increment
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_STREAM_SALT = 0xD1B54A32D192ED03


def _mix64(z: int) -> int:
    """Scalar splitmix64 finalizer on python ints."""
    z &= _MASK
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK
    return z ^ (z >> 31)


def _mix64_array(z: np.ndarray) -> np.ndarray:
    z = z ^ (z >> np.uint64(30))
    z = z * np.uint64(_MIX1)
    z = z ^ (z >> np.uint64(27))
    z = z * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


class Rng:
    """Splittable deterministic RNG.

    Same (seed, stream, call sequence) always produces the same outputs.
    Independent streams (different ``stream`` ids) are decorrelated by
    mixing the stream id into the base state.
    """

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed)
        self.stream = int(stream)
        self._base = _mix64(_mix64(self.seed) ^ _mix64((self.stream * _STREAM_SALT + 1) & _MASK))
        self._counter = 0

    def child(self, stream: int) -> "Rng":
        """Derive an independent stream; children of distinct ids never collide
        with each other or with the parent's own draw sequence."""
        return Rng(self._base, stream=stream + 1)

    def u64(self, n: int) -> np.ndarray:
        """Next n raw 64-bit draws as a uint64 array."""
        idx = np.arange(self._counter, self._counter + n, dtype=np.uint64)
        self._counter += n
        return _mix64_array(np.uint64(self._base) + idx * np.uint64(_GAMMA))

    def uniform(self, shape=None) -> np.ndarray | float:
        """Float64 samples in [0, 1) with 53-bit resolution."""
        if shape is None:
            return float(self.u64(1)[0] >> np.uint64(11)) * 2.0**-53
        n = int(np.prod(shape))
        out = (self.u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return out.reshape(shape)

    def normal(self, shape=None, scale: float = 1.0) -> np.ndarray | float:
        """Standard normal samples via Box-Muller."""
        scalar = shape is None
        n = 1 if scalar else int(np.prod(shape))
        m = (n + 1) // 2
        # u1 in (0,1] so log is finite
        u1 = 1.0 - (self.u64(m) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        u2 = (self.u64(m) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        r = np.sqrt(-2.0 * np.log(u1))
        out = np.concatenate([r * np.cos(2.0 * math.pi * u2), r * np.sin(2.0 * math.pi * u2)])[:n]
        out = out * scale
        return float(out[0]) if scalar else out.reshape(shape)

    def permutation(self, n: int) -> np.ndarray:
        """Uniform random permutation of range(n)."""
        # argsort of 64-bit keys; collision probability is ~n^2/2^64
        return np.argsort(self.u64(n), kind="stable")

    def choice(self, n: int, size: int) -> np.ndarray:
        """size independent uniform draws from range(n), with replacement."""
        if n <= 0:
            raise ValueError("choice from empty range")
        idx = (self.uniform((size,)) * n).astype(np.int64)
        return np.minimum(idx, n - 1)

    def randint(self, n: int) -> int:
        return int(self.choice(n, 1)[0])


def gumbel(rng: Rng, shape) -> np.ndarray:
    """Standard Gumbel noise g = -log(-log(u)), u clamped away from {0, 1}."""
    u = np.clip(rng.uniform(shape), 1e-12, 1.0 - 1e-12)
    return -np.log(-np.log(u))
