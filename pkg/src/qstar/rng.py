"""Named RNG streams split off a single master seed.

Every stochastic operation in the package takes an explicit generator.
Streams are derived counter-style via numpy's SeedSequence spawn keys, so a
given (master seed, path) always yields the same bit stream, independently of
any other stream.
"""

import zlib

import numpy as np


def _encode(part) -> int:
    if isinstance(part, (bool, float)):
        raise TypeError(f"stream path parts must be int or str, got {part!r}")
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError(f"stream path ints must be nonnegative, got {part}")
        return int(part)
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    raise TypeError(f"stream path parts must be int or str, got {part!r}")


def stream(master_seed: int, *path) -> np.random.Generator:
    """Generator for the sub-stream named by ``path`` under ``master_seed``."""
    key = tuple(_encode(p) for p in path)
    return np.random.default_rng(np.random.SeedSequence(int(master_seed), spawn_key=key))
