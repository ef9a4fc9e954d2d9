"""Deterministic seed derivation.

Every stochastic task (one model, one point's neighborhood, one Monte Carlo
trial) gets its own generator whose seed is derived from the base seed and the
task's indices with the splitmix64 finalizer. Results therefore do not depend
on evaluation order or thread count.
"""
from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    """One splitmix64 step: advance by the golden gamma and apply the finalizer."""
    z = (x + GOLDEN_GAMMA) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(base: int, *indices: int) -> int:
    """Mix ``base`` with a path of non-negative indices into a 64-bit seed."""
    s = splitmix64(int(base) & MASK64)
    for i in indices:
        s = splitmix64(s ^ (int(i) & MASK64))
    return s


def rng_for(base: int, *indices: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(base, *indices)))
