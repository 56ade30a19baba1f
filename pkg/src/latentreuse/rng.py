"""Seeded random streams.

Every sampler takes an explicit integer seed.  Sub-streams are addressed by
a tuple of integers or names, so one root seed reproduces a whole run and
parallel callers can draw from disjoint streams.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key(part) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    return int(part)


def make_rng(seed: int, *stream) -> np.random.Generator:
    """Philox generator for ``seed`` and the sub-stream path ``stream``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_key(p) for p in stream))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, *stream) -> int:
    """A 63-bit child seed, for handing to code that wants a plain integer."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_key(p) for p in stream))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
