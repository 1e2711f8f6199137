"""Seedable 64-bit PRNG shared by the simulator and the jitter sampler.

The generator is SplitMix64 used in counter mode: the k-th output (k >= 1) is
``mix(seed + k * 0x9E3779B97F4A7C15)`` with the standard SplitMix64 finalizer.
Doubles are ``(u64 >> 11) * 2**-53`` in [0, 1).  Gaussians use the basic
Box-Muller transform on consecutive uniform pairs ``(u1, u2)``:
``z0 = sqrt(-2 ln(1 - u1)) cos(2 pi u2)``, ``z1 = ... sin(2 pi u2)``, emitted in
the order z0, z1.  Everything above is plain integer arithmetic, so the same
streams can be reproduced in any language.
"""

from __future__ import annotations

import numpy as np

MASK64 = 0xFFFFFFFFFFFFFFFF
GAMMA = 0x9E3779B97F4A7C15
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def mix64(value: int) -> int:
    """Scalar SplitMix64 finalizer, used for seed derivation."""
    return int(_mix(np.array([value & MASK64], dtype=np.uint64))[0])


class SplitMix64:
    """Counter-mode SplitMix64 with vectorized draws.

    The generator state is ``(seed, counter)``; two generators with equal
    state produce identical streams regardless of how draws are batched.
    """

    def __init__(self, seed: int, counter: int = 0):
        self.seed = int(seed) & MASK64
        self.counter = int(counter)

    @property
    def state(self) -> tuple[int, int]:
        return self.seed, self.counter

    def copy(self) -> "SplitMix64":
        return SplitMix64(self.seed, self.counter)

    def spawn(self, key: int) -> "SplitMix64":
        """Independent child stream; does not advance this generator."""
        return SplitMix64(mix64(self.seed ^ mix64((int(key) + 1) * GAMMA)))

    def next_u64(self, n: int) -> np.ndarray:
        ks = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            z = np.uint64(self.seed) + ks * np.uint64(GAMMA)
        return _mix(z)

    def random(self, size=None):
        n = 1 if size is None else int(np.prod(size))
        u = (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)
        return float(u[0]) if size is None else u.reshape(size)

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None):
        u = self.random(size)
        return low + (high - low) * u

    def integers(self, low: int, high: int, size: int | None = None):
        """Integers in [low, high)."""
        u = self.random(size)
        if size is None:
            return low + min(int(u * (high - low)), high - low - 1)
        return low + np.minimum((u * (high - low)).astype(np.int64), high - low - 1)

    def normal(self, loc: float = 0.0, scale: float = 1.0, size=None):
        n = 1 if size is None else int(np.prod(size))
        pairs = (n + 1) // 2
        u = self.random(2 * pairs)
        u1, u2 = u[0::2], u[1::2]
        r = np.sqrt(-2.0 * np.log1p(-u1))
        z = np.empty(2 * pairs)
        z[0::2] = r * np.cos(2.0 * np.pi * u2)
        z[1::2] = r * np.sin(2.0 * np.pi * u2)
        z = loc + scale * z[:n]
        return float(z[0]) if size is None else z.reshape(size)

    def permutation(self, n: int) -> np.ndarray:
        keys = self.next_u64(n)
        return np.argsort(keys, kind="stable")

    def bernoulli(self, p: float, size: int | None = None):
        u = self.random(size)
        return (u < p) if size is not None else bool(u < p)
