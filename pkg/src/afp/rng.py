"""Seeded, splittable random streams.

Every stochastic component draws from its own PCG64 generator derived from
(root seed, purpose path), so corpora, batching, and evaluation stay
independently reproducible no matter how the other streams are consumed.
"""

import zlib

import numpy as np


def _key(part) -> int:
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError(f"stream path ints must be >= 0, got {part}")
        return int(part)
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    raise TypeError(f"stream path parts must be int or str, got {type(part)!r}")


def stream(seed: int, *path) -> np.random.Generator:
    """Independent generator for (seed, *path); same arguments, same stream."""
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_key(p) for p in path))
    return np.random.Generator(np.random.PCG64(seq))
