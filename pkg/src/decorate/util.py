"""Fingerprints and counter-based seeded randomness.

Sampling determinism rests on ``stable_u01``: a uniform value derived only
from (seed, key parts), independent of call order, Python hash seed, and
platform. All config/artifact fingerprints are sha256 hex digests of
canonical JSON or raw bytes.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any

_U64_DENOM = float(2**64)


def stable_u01(seed: int, *parts: str) -> float:
    """Deterministic uniform in the open interval (0, 1) keyed by seed and parts."""
    h = hashlib.blake2b(digest_size=8)
    h.update(str(seed).encode("utf-8"))
    for part in parts:
        h.update(b"\x1f")
        h.update(part.encode("utf-8"))
    x = int.from_bytes(h.digest(), "big")
    return (x + 0.5) / _U64_DENOM


def derive_seed(seed: int, label: str) -> int:
    """Independent integer sub-seed for a named pipeline stage."""
    h = hashlib.blake2b(f"{seed}|{label}".encode("utf-8"), digest_size=8)
    return int.from_bytes(h.digest(), "big")


def fingerprint_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def fingerprint_json(obj: Any) -> str:
    """Fingerprint of the canonical (sorted-key, compact) JSON encoding."""
    canon = json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return fingerprint_bytes(canon.encode("utf-8"))


def fingerprint_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
