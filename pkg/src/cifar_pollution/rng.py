"""Deterministic keyed random substreams.

Every random draw in the pipeline comes from a generator derived from
``(master_seed, purpose tag, *indices)``, so results do not depend on
iteration order or on how work is split between workers.
"""

from __future__ import annotations

import zlib

import numpy as np


def _tag_key(tag: str) -> int:
    return zlib.crc32(tag.encode("utf-8"))


def substream(master_seed: int, tag: str, *indices: int) -> np.random.Generator:
    """Return an independent generator for ``(master_seed, tag, *indices)``."""
    if master_seed < 0 or any(i < 0 for i in indices):
        raise ValueError("seeds and indices must be non-negative")
    entropy = [int(master_seed), _tag_key(tag), *(int(i) for i in indices)]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
