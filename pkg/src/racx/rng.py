"""Seedable random number generation.

All stochastic operations in the package take an explicit numpy Generator.
PCG64 gives the reproducible-across-platforms contract we need: the same
seed yields the same stream on any machine running the same numpy major
line.
"""

from __future__ import annotations

import hashlib

import numpy as np


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def _key(part: int | str) -> int:
    if isinstance(part, str):
        digest = hashlib.sha256(part.encode("utf-8")).digest()
        return int.from_bytes(digest[:8], "little")
    return part


def derive_rng(seed: int, *stream: int | str) -> np.random.Generator:
    """Independent generator for a named or indexed substream."""
    entropy = (seed, *(_key(p) for p in stream))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
