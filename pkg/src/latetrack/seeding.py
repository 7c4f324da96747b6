"""Deterministic seed derivation.

Every command takes one master seed; every consumer of randomness gets a
child seed derived from the master plus a fixed string key. Children are
independent of evaluation order, so parallel fan-out over sequences
cannot change results.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(master: int, *keys: object) -> int:
    """Derive a 63-bit child seed from a master seed and a key path."""
    text = str(int(master)) + "".join("/" + str(k) for k in keys)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def rng_for(master: int, *keys: object) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, *keys))
