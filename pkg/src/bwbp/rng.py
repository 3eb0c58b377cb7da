"""Counter-based random streams keyed by (seed, tag, replicate, ...).

Every replicate gets its own Philox stream derived from the run seed, so batch
results do not depend on how replicates are scheduled across workers.
"""

from __future__ import annotations

import secrets
import zlib

import numpy as np


def tag_key(tag: str) -> int:
    return zlib.crc32(tag.encode())


def stream(seed: int, tag: str, *keys: int) -> np.random.Generator:
    ss = np.random.SeedSequence([int(seed) & (2**64 - 1), tag_key(tag), *map(int, keys)])
    return np.random.Generator(np.random.Philox(ss))


def fresh_seed() -> int:
    return secrets.randbits(63)
