"""Stable seed derivation.

Every random decision in the pipeline flows from one master seed through
``derive_seed``, so replicates, render jobs and training stages can run in
parallel or out of order and still reproduce bit-for-bit. The mix is a
SHA-256 over a canonical encoding of the parts, which keeps it independent
of Python's randomized ``hash()`` and of RNG library internals.
"""

from __future__ import annotations

import hashlib

_SEED_SPACE = 2**63  # fits in a signed 64-bit int everywhere


def derive_seed(*parts: int | str) -> int:
    """Mix integers and strings into a reproducible seed in [0, 2**63)."""
    h = hashlib.sha256()
    for part in parts:
        if isinstance(part, bool) or not isinstance(part, (int, str)):
            raise TypeError(f"seed parts must be int or str, got {type(part).__name__}")
        if isinstance(part, int):
            h.update(b"i")
            h.update(str(part).encode("ascii"))
        else:
            h.update(b"s")
            h.update(part.encode("utf-8"))
        h.update(b"\x00")
    return int.from_bytes(h.digest()[:8], "big") % _SEED_SPACE


def stable_label_hash(label: str) -> int:
    """Deterministic 64-bit hash of a class label (independent of PYTHONHASHSEED)."""
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")
