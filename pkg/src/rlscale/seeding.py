"""Deterministic seed derivation."""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(*keys: int) -> int:
    """Mix integer keys into a single 63-bit seed.

    Uses numpy's SeedSequence hashing, so the mapping is stable across
    numpy versions and independent of call order.
    """
    entropy = [int(k) & 0xFFFFFFFFFFFFFFFF for k in keys]
    state = np.random.SeedSequence(entropy).generate_state(2, dtype=np.uint32)
    return int(state[0]) << 31 ^ int(state[1])


def hash_seed(*parts: object) -> int:
    """Seed from arbitrary printable parts, e.g. ``hash_seed(base, "tau", 5, 0)``.

    The parts are joined with ``|`` and hashed with SHA-256; the first eight
    bytes (big-endian, top bit cleared) form the seed.
    """
    text = "|".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") & 0x7FFFFFFFFFFFFFFF
