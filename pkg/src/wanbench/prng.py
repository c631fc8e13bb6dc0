"""SplitMix64, the portable seeded generator behind every pseudo-random pattern.

The stream for seed ``s`` is ``mix(s + k * GOLDEN)`` for ``k = 1, 2, ...``
(all arithmetic mod 2**64), so element ``k`` can be computed without
generating the ones before it.  Reference values for seed 1234567 are
6457827717110365317, 3203168211198807973, 9817491932198370423.
"""

from __future__ import annotations

import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
MASK64 = (1 << 64) - 1


def splitmix64(seed: int, n: int, offset: int = 0) -> np.ndarray:
    """Return ``n`` consecutive uint64 outputs, skipping the first ``offset``."""
    k = np.arange(offset + 1, offset + n + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = np.uint64(seed & MASK64) + k * GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
        z = z ^ (z >> np.uint64(31))
    return z


def uniform(seed: int, n: int, offset: int = 0) -> np.ndarray:
    """Doubles in [0, 1) built from the top 53 bits of each output."""
    return (splitmix64(seed, n, offset) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))


def signs(seed: int, n: int, offset: int = 0) -> np.ndarray:
    """A +/-1 sequence: +1 where the top output bit is clear."""
    top = splitmix64(seed, n, offset) >> np.uint64(63)
    return np.where(top == 0, 1.0, -1.0)


def normal(seed: int, n: int) -> np.ndarray:
    """Standard normal samples via the Box-Muller transform."""
    m = (n + 1) // 2
    u = uniform(seed, 2 * m)
    u1 = 1.0 - u[0::2]  # (0, 1]
    u2 = u[1::2]
    r = np.sqrt(-2.0 * np.log(u1))
    z = np.concatenate([r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)])
    return z[:n]
