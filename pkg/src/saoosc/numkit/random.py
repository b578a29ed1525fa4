"""Named, splittable random streams on the counter-based Philox generator.

A stream is identified by ``(seed, *path)``; the same identity always yields
the same sequence, and distinct paths give statistically independent streams.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFF
    return zlib.crc32(str(part).encode("utf-8"))


def stream(seed: int, *path) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_key(p) for p in path))
    return np.random.Generator(np.random.Philox(ss))


def split(rng: np.random.Generator, n: int) -> list[np.random.Generator]:
    """Derive ``n`` child generators from ``rng`` (consumes no draws from it)."""
    return list(rng.spawn(n))
