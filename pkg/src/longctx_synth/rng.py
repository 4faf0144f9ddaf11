"""Seed derivation so that every stochastic step owns an independent stream."""

from __future__ import annotations

import hashlib
import random


def derive_seed(*parts: object) -> int:
    """Hash arbitrary parts into a 64-bit seed, independent of PYTHONHASHSEED."""
    joined = "\x1f".join(str(p) for p in parts)
    return int.from_bytes(hashlib.sha256(joined.encode("utf-8")).digest()[:8], "big")


def substream(*parts: object) -> random.Random:
    return random.Random(derive_seed(*parts))
