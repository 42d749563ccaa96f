"""Seeded random streams.

Every random draw in the package comes from a Philox (counter-based,
64-bit) generator keyed by the run seed plus a stream name and optional
integer indices, so results never depend on call order or thread count.
"""
from __future__ import annotations

import zlib

import numpy as np


def substream(seed: int, name: str, *indices: int) -> np.random.Generator:
    """Independent generator for ``(seed, name, *indices)``."""
    tag = zlib.crc32(name.encode("utf-8"))
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(tag, *map(int, indices)))
    return np.random.Generator(np.random.Philox(ss))
