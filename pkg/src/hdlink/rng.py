"""Seed derivation.

Every random stream is derived from one master seed mixed with a component
name, so adding a new consumer never shifts the numbers another one sees.
"""

from __future__ import annotations

import hashlib

import numpy as np


def name_key(name: str) -> int:
    return int.from_bytes(hashlib.sha256(name.encode("utf-8")).digest()[:8], "little")


def derive_seed(master: int, *names: str | int) -> np.random.SeedSequence:
    """SeedSequence for the stream identified by ``names`` under ``master``."""
    entropy = [int(master) & 0xFFFFFFFFFFFFFFFF]
    for n in names:
        entropy.append(name_key(n) if isinstance(n, str) else int(n))
    return np.random.SeedSequence(entropy)


def derive_rng(master: int, *names: str | int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, *names))


def as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def spawn(seed, n: int) -> list[np.random.Generator]:
    """``n`` independent child generators, reproducible from ``seed``."""
    if isinstance(seed, np.random.Generator):
        ss = np.random.SeedSequence(seed.integers(0, 2**63, size=4).tolist())
    elif isinstance(seed, np.random.SeedSequence):
        ss = seed
    else:
        ss = np.random.SeedSequence(seed)
    return [np.random.default_rng(s) for s in ss.spawn(n)]
