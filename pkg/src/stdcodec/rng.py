"""Named, counter-based random streams.

Every random draw in the package comes from ``stream(seed, *names)``: a
Philox generator keyed by the run seed and a spawn key derived from the
names, so independent consumers never share or reorder draws.
"""
import zlib

import numpy as np


def _key(name) -> int:
    if isinstance(name, (int, np.integer)):
        return int(name)
    return zlib.crc32(str(name).encode("utf-8"))


def stream(seed: int, *names) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_key(n) for n in names))
    return np.random.Generator(np.random.Philox(ss))
