"""Deterministic seed derivation.

Every random stream in the package is keyed by (root seed, label, index)
through SHA-256, so stages can run in any order or resume mid-run without
sharing generator state, and two runs with the same root seed are
bit-identical.
"""

from __future__ import annotations

import hashlib


def derive_seed(root: int, label: str, index: int = 0) -> int:
    payload = f"{root}:{label}:{index}".encode()
    digest = hashlib.sha256(payload).digest()
    return int.from_bytes(digest[:8], "little")
