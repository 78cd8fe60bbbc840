"""Counter-based SplitMix64 generator.

Every draw is a pure function of ``(seed, counter)``, so a stream can be
replayed on any platform and numpy version. Sub-streams for independent
purposes (initialisation, batching, noise, attacks) are derived with
:meth:`Rng.child`, which hashes the parent seed with an integer key.
"""

from __future__ import annotations

import numpy as np

ALGORITHM = "splitmix64-counter/box-muller"

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


def _mix(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def _mix_int(value: int) -> int:
    return int(_mix(np.array([value & _MASK64], dtype=np.uint64))[0])


class Rng:
    """Deterministic random source with an explicit draw counter."""

    algorithm = ALGORITHM

    def __init__(self, seed: int):
        if seed < 0:
            raise ValueError("seed must be non-negative")
        self.seed = int(seed) & _MASK64
        self.counter = 0

    def __repr__(self):
        return f"Rng(seed={self.seed}, counter={self.counter})"

    def child(self, *keys: int) -> "Rng":
        """Independent stream keyed by ``keys``; does not advance this one."""
        s = self.seed
        for k in keys:
            s = _mix_int(s ^ _mix_int((int(k) * 0x9E3779B97F4A7C15 + 0x632BE59BD9B4E019) & _MASK64))
        return Rng(s)

    def next_u64(self, n: int) -> np.ndarray:
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            z = np.uint64(self.seed) + idx * _GOLDEN
        return _mix(z)

    def uniform(self, shape, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        """Uniform doubles in ``[low, high)`` with 53 bits of resolution."""
        n = int(np.prod(shape, dtype=np.int64))
        u = (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)
        return (low + (high - low) * u).reshape(shape)

    def normal(self, shape) -> np.ndarray:
        """Standard normal samples via the Box-Muller transform."""
        n = int(np.prod(shape, dtype=np.int64))
        m = (n + 1) // 2
        u = self.uniform((2 * m,))
        u1 = 1.0 - u[0::2]  # (0, 1], keeps log finite
        u2 = u[1::2]
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        z = np.empty(2 * m)
        z[0::2] = r * np.cos(theta)
        z[1::2] = r * np.sin(theta)
        return z[:n].reshape(shape)

    def signs(self, shape) -> np.ndarray:
        n = int(np.prod(shape, dtype=np.int64))
        top = (self.next_u64(n) >> np.uint64(63)).astype(np.float64)
        return (2.0 * top - 1.0).reshape(shape)

    def permutation(self, n: int) -> np.ndarray:
        keys = self.next_u64(n)
        return np.argsort(keys, kind="stable")

    def integers(self, high, size=None) -> np.ndarray:
        """Integers in ``[0, high)``; ``high`` may be an array for per-entry bounds."""
        high = np.asarray(high)
        shape = high.shape if size is None else size
        u = self.uniform(shape)
        return np.minimum((u * high).astype(np.int64), high - 1)
