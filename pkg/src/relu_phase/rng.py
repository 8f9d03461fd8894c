"""Seeded randomness.

Normals are produced by Box-Muller from 53-bit uniforms drawn off a PCG64
stream, so a (seed, count) pair maps to the same bits on every platform.
Run seeds inside a sweep come from a splitmix64-style mixing hash of the
run coordinates.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def mix_seed(*parts: int) -> int:
    """Fold integers into one 64-bit seed; order matters, negatives allowed."""
    h = 0x6A09E667F3BCC908
    for p in parts:
        h = splitmix64(h ^ (int(p) & MASK64))
    return h


def uniform53(seed: int, count: int) -> np.ndarray:
    """`count` doubles in [0, 1) with 53 random mantissa bits each."""
    gen = np.random.Generator(np.random.PCG64(seed & MASK64))
    return gen.random(count)


def standard_normal(seed: int, count: int) -> np.ndarray:
    """Box-Muller normals: uniforms are consumed in (u1, u2) pairs."""
    pairs = (count + 1) // 2
    u = uniform53(seed, 2 * pairs)
    u1, u2 = u[0::2], u[1::2]
    r = np.sqrt(-2.0 * np.log1p(-u1))  # 1 - u1 in (0, 1]
    theta = 2.0 * np.pi * u2
    z = np.empty(2 * pairs)
    z[0::2] = r * np.cos(theta)
    z[1::2] = r * np.sin(theta)
    return z[:count]
