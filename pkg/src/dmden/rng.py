"""Seeded random streams.

Every stochastic routine takes a caller-owned ``numpy.random.Generator``.
Independent streams (per grid point, per shard, per worker) are derived from
a master seed with :func:`derive_seed`, which XORs the stream index into the
master seed and passes the result through the splitmix64 finalizer.  Derived
streams depend only on ``(master, index)``, never on evaluation order.
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return x ^ (x >> 31)


def derive_seed(master: int, index: int) -> int:
    """64-bit seed for stream ``index`` of ``master``."""
    return splitmix64((int(master) ^ int(index)) & _MASK)


def make_rng(master: int, index: int | None = None) -> np.random.Generator:
    """Generator for the master seed, or for one of its derived streams."""
    if index is None:
        return np.random.default_rng(int(master) & _MASK)
    return np.random.default_rng(derive_seed(master, index))
