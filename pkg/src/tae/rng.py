"""Seeded, splittable random streams.

Every stream is addressed by a root 64-bit seed plus a path of labels, so
any component can derive its own generator without threading state through
the pipeline. The underlying bit generator is counter-based (Philox).
"""

from __future__ import annotations

import zlib

import numpy as np


def _key(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFF
    return zlib.crc32(str(part).encode())


def stream(seed: int, *path) -> np.random.Generator:
    seq = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=tuple(_key(p) for p in path))
    return np.random.Generator(np.random.Philox(seq))
