from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(seed: int, *keys: object) -> int:
    """Stable 63-bit seed from a base seed and any printable keys."""
    h = hashlib.sha256(repr((int(seed),) + tuple(str(k) for k in keys)).encode())
    return int.from_bytes(h.digest()[:8], "little") >> 1


def derive_rng(seed: int, *keys: object) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *keys))
