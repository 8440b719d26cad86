"""Named random sub-streams derived from a single pipeline seed."""

import zlib

import numpy as np


def stream_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def named_rng(seed: int, name: str) -> np.random.Generator:
    """Independent generator for ``name``; same (seed, name) gives same stream."""
    sequence = np.random.SeedSequence(entropy=int(seed), spawn_key=(stream_key(name),))
    return np.random.default_rng(sequence)
