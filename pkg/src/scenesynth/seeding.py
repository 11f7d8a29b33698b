"""Deterministic seed derivation and 64-bit hashing helpers.

Every random decision in the pipeline draws from a generator seeded
through :func:`derive_seed`, so scene outputs depend only on the master
seed and the scene/stage identifiers, never on execution order or
parallelism.
"""

from __future__ import annotations

import hashlib

import numpy as np

_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_MASK = (1 << 64) - 1


def splitmix64(x: int) -> int:
    """One splitmix64 step: increment by the golden gamma, then finalize."""
    x = (x + _GOLDEN) & _MASK
    x ^= x >> 30
    x = (x * _MIX1) & _MASK
    x ^= x >> 27
    x = (x * _MIX2) & _MASK
    x ^= x >> 31
    return x


def derive_seed(master: int, *parts: int | str) -> int:
    """Derive an independent 64-bit seed from a master seed and context parts.

    String parts are hashed through SHA-256 so stage names can be used
    directly. The same (master, parts) tuple always yields the same seed.
    """
    h = splitmix64(master & _MASK)
    for part in parts:
        if isinstance(part, str):
            part = int.from_bytes(hashlib.sha256(part.encode("utf-8")).digest()[:8], "little")
        h = splitmix64(h ^ (int(part) & _MASK))
    return h


def rng_for(master: int, *parts: int | str) -> np.random.Generator:
    """Generator seeded from the derived seed for (master, *parts)."""
    return np.random.default_rng(derive_seed(master, *parts))


def splitmix64_array(x: np.ndarray) -> np.ndarray:
    """Vectorized splitmix64 over a uint64 array (input is not modified)."""
    x = x.astype(np.uint64, copy=True)
    x += np.uint64(_GOLDEN)
    x ^= x >> np.uint64(30)
    x *= np.uint64(_MIX1)
    x ^= x >> np.uint64(27)
    x *= np.uint64(_MIX2)
    x ^= x >> np.uint64(31)
    return x


def hash_chain_array(seed: int, *columns: np.ndarray) -> np.ndarray:
    """Chain-hash equal-length integer columns into one uint64 per row.

    Used to pick deterministic per-voxel winners: the result depends only
    on the seed and the column values, not on array ordering.
    """
    h = np.full(columns[0].shape, splitmix64(seed & _MASK), dtype=np.uint64)
    for col in columns:
        h = splitmix64_array(h ^ col.astype(np.int64).view(np.uint64))
    return h
