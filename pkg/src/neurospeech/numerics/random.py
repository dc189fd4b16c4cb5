"""Named, splittable random streams on top of numpy's counter-based Philox.

A stream is identified by ``(seed, *path)``; the same path always yields the
same bits, independent of how many other streams were drawn before it.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFF
    return zlib.crc32(str(part).encode("utf-8"))


def stream(seed: int, *path) -> np.random.Generator:
    """Return the generator for the stream named by ``path`` under ``seed``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_key(p) for p in path))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, *path) -> int:
    """A plain integer seed for the stream ``path`` (for sub-components that take ints)."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_key(p) for p in path))
    return int(ss.generate_state(1, dtype=np.uint32)[0])
