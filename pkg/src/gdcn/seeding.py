"""Labeled sub-seeds so a single user seed drives every random stream."""

import hashlib

import numpy as np


def derive_seed(seed: int, *labels) -> int:
    text = ":".join([str(int(seed))] + [str(x) for x in labels])
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "little")


def rng_for(seed: int, *labels) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(derive_seed(seed, *labels)))
