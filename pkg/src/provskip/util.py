"""Small shared helpers."""

from __future__ import annotations

import hashlib


def derive_seed(root_seed: int, *labels) -> int:
    """Deterministic 63-bit child seed from a root seed and a label path.

    Uses sha256 so the derivation is stable across platforms and Python
    versions (the builtin hash() is salted per process).
    """
    h = hashlib.sha256()
    h.update(str(int(root_seed)).encode())
    for label in labels:
        h.update(b"\x00")
        h.update(str(label).encode())
    return int.from_bytes(h.digest()[:8], "big") >> 1
