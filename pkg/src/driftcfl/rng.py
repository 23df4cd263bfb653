"""Labeled random streams derived from one root seed.

Every consumer asks for ``stream(seed, "selection", round, cluster)`` and the
like, so draws in one subsystem never shift another's, and a run resumed
from a checkpoint sees exactly the streams it would have seen.
"""

from __future__ import annotations

import zlib

import numpy as np


def label_key(label: str) -> int:
    return zlib.crc32(label.encode("utf-8"))


def stream(seed: int, label: str, *keys: int) -> np.random.Generator:
    spawn_key = (label_key(label),) + tuple(int(k) & 0xFFFFFFFF for k in keys)
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=spawn_key))


def substream_seed(seed: int, label: str, *keys: int) -> int:
    return int(stream(seed, label, *keys).integers(0, 2 ** 31 - 1))
