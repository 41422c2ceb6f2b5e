"""splitmix64 pseudo-random generator.

Every randomized step in the toolkit (initialization, shuffling, balancing,
augmentation) draws from this generator so that a seed pins the whole run.
Output ``i`` of a stream seeded with ``s`` is ``mix(s + (i + 1) * GAMMA)``,
which lets bulk draws be vectorized without changing the sequence.
"""

from __future__ import annotations

import math

import numpy as np

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB


def mix64(z: int) -> int:
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def _mix64_array(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


class Rng:
    """Stateful splitmix64 stream.

    Draw accounting: ``next_u64``, ``uniform`` and ``bernoulli`` consume one
    draw each; ``normals(n)`` consumes ``2 * ceil(n / 2)`` draws (Box-Muller
    pairs); ``shuffle`` of ``n`` items consumes ``n - 1`` draws.
    """

    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GAMMA) & MASK64
        return mix64(self.state)

    def u64s(self, n: int) -> np.ndarray:
        """The next ``n`` outputs as a uint64 array (same values as ``n`` scalar calls)."""
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + steps * np.uint64(GAMMA)
            out = _mix64_array(z)
        self.state = (self.state + n * GAMMA) & MASK64
        return out

    def uniform(self) -> float:
        """Float in [0, 1) from the top 53 bits of one draw."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniforms(self, n: int) -> np.ndarray:
        return (self.u64s(n) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))

    def bernoulli(self, p: float) -> bool:
        return self.uniform() < p

    def normals(self, n: int) -> np.ndarray:
        """Standard normal samples via Box-Muller on consecutive draw pairs."""
        pairs = (n + 1) // 2
        u = self.uniforms(2 * pairs).reshape(pairs, 2)
        radius = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
        theta = 2.0 * math.pi * u[:, 1]
        z = np.stack([radius * np.cos(theta), radius * np.sin(theta)], axis=1)
        return z.reshape(-1)[:n]

    def shuffle(self, items: list) -> list:
        """Fisher-Yates, descending index, ``j = draw % (i + 1)``. Returns a new list."""
        out = list(items)
        for i in range(len(out) - 1, 0, -1):
            j = self.next_u64() % (i + 1)
            out[i], out[j] = out[j], out[i]
        return out


def derive_seed(seed: int, index: int) -> int:
    """Independent per-record seed: first splitmix64 output of ``seed ^ index``."""
    return Rng(seed ^ index).next_u64()
