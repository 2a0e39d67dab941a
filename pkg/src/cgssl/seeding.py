"""Deterministic seed derivation.

All randomness in the package funnels through a single master seed; every
stage, step and sample derives its own seed from it by hashing a tag path.
This keeps independent random streams decoupled: adding a consumer never
shifts anyone else's draws.
"""

import hashlib

import numpy as np


def derive_seed(master: int, *tags) -> int:
    """Derive a 32-bit seed from a master seed and a tag path."""
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(master)).encode())
    for tag in tags:
        h.update(b"/")
        h.update(str(tag).encode())
    return int.from_bytes(h.digest()[:4], "little")


def rng_for(master: int, *tags) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, *tags))
