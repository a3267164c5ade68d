"""Keyed seed derivation.

Every random stream in the toolkit is derived from a master seed plus a stable
string/int key path, e.g. ``derive_seed(master, "sweep", "w8_n0.2_s1", "init")``.
Adding a new randomized feature with a fresh key never perturbs existing
streams, and scheduling order cannot affect results.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(master: int, *keys: str | int | float) -> int:
    """Return a 64-bit seed from a master seed and a key path."""
    h = hashlib.sha256()
    h.update(str(int(master)).encode())
    for k in keys:
        h.update(b"|")
        h.update(str(k).encode())
    return int.from_bytes(h.digest()[:8], "little")


def rng_for(master: int, *keys: str | int | float) -> np.random.Generator:
    """Generator seeded by `derive_seed(master, *keys)`."""
    return np.random.default_rng(derive_seed(master, *keys))
