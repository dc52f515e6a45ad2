"""Deterministic seed fan-out.

A single master seed is expanded into independent per-component seeds by
hashing the master seed together with a path of string/int parts, so every
stochastic piece of the pipeline (splits, weight init, trial sampling,
mock embeddings) is reproducible in isolation.
"""

from __future__ import annotations

import hashlib


def derive_seed(*parts: object) -> int:
    """Hash a sequence of parts into a 64-bit unsigned seed."""
    joined = "\x1f".join(str(p) for p in parts)
    digest = hashlib.sha256(joined.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")
