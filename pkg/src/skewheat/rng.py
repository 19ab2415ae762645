"""Seed derivation tree.

Every random stream is a pure function of the master seed and a key path,
``SeedSequence(master, spawn_key=keys)``. Task keys are small integers or
names (hashed with CRC32), so results do not depend on how tasks are
scheduled across workers.
"""

from __future__ import annotations

import zlib

import numpy as np

U64_MAX = (1 << 64) - 1


def check_seed(seed) -> int:
    if isinstance(seed, bool) or not isinstance(seed, (int, np.integer)):
        raise ValueError(f"seed must be an integer, got {seed!r}")
    seed = int(seed)
    if not 0 <= seed <= U64_MAX:
        raise ValueError(f"seed must be a u64, got {seed}")
    return seed


def _key(k) -> int:
    if isinstance(k, str):
        return zlib.crc32(k.encode())
    k = int(k)
    if k < 0:
        raise ValueError("spawn keys must be non-negative")
    return k


def seed_sequence(seed: int, *keys) -> np.random.SeedSequence:
    return np.random.SeedSequence(check_seed(seed), spawn_key=tuple(_key(k) for k in keys))


def derive(seed: int, *keys) -> np.random.Generator:
    """Generator for the node ``keys`` under master ``seed``."""
    return np.random.Generator(np.random.PCG64(seed_sequence(seed, *keys)))


def split(rng: np.random.Generator, n: int) -> list[np.random.Generator]:
    """Independent child generators."""
    return rng.spawn(n)


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)
