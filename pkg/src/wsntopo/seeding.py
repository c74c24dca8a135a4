"""Derive independent sub-seeds from one top-level seed.

A sub-seed is the first 8 bytes of ``sha256("<seed>/<part>/<part>...")``
read as a little-endian unsigned integer, so every component (network
init, episodes of iteration 3, evaluation of iteration 7, ...) gets its
own reproducible stream without sharing generator state.
"""
import hashlib

import numpy as np


def derive_seed(seed, *parts) -> int:
    text = "/".join(str(p) for p in (seed, *parts))
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "little")


def derive_rng(seed, *parts) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *parts))
