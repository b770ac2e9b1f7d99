"""Master-seed fan-out.

A run has one master seed. Every consumer derives its own 64-bit seed from a
path of labels, e.g. ``derive_seed(master, "scenario", "train", 7)`` for the
scenario of training task 7. Labels are hashed with CRC32 into the
SeedSequence spawn key, so changing the seed of one stage never perturbs the
streams of the others.
"""

import zlib

import numpy as np


def _key(part: str | int) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFF
    return zlib.crc32(str(part).encode("utf-8"))


def derive_seed(master: int, *path: str | int) -> int:
    ss = np.random.SeedSequence(int(master), spawn_key=tuple(_key(p) for p in path))
    lo, hi = ss.generate_state(2, dtype=np.uint32)
    return int(lo) | (int(hi) << 32)


def make_rng(seed: int, *path: str | int) -> np.random.Generator:
    if path:
        seed = derive_seed(seed, *path)
    return np.random.default_rng(np.random.SeedSequence(int(seed)))
