"""Named sub-seeds so each component draws from its own stream."""
from __future__ import annotations

import hashlib

import numpy as np


def sub_seed(seed: int, name: str) -> int:
    digest = hashlib.sha256(f"{seed}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def generator(seed: int, name: str, *extra: int) -> np.random.Generator:
    return np.random.default_rng([sub_seed(seed, name), *extra])
