"""Canonical JSON serialization and artifact hashing.

Artifacts are hashed over their canonical byte form so that provenance
chains (problem -> compiled program -> solution -> benchmark row) are stable
across runs and platforms.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path


def canonical_dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def sha256_of(obj) -> str:
    return hashlib.sha256(canonical_dumps(obj).encode("utf-8")).hexdigest()


def sha256_of_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def write_json(path: str | Path, obj) -> str:
    """Write canonical JSON plus trailing newline; returns the content hash."""
    text = canonical_dumps(obj)
    Path(path).write_text(text + "\n", encoding="utf-8")
    return sha256_of_bytes(text.encode("utf-8"))


def read_json(path: str | Path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def file_hash(path: str | Path) -> str:
    """Hash of a JSON artifact's canonical content (newline-insensitive)."""
    text = Path(path).read_text(encoding="utf-8").strip()
    return sha256_of_bytes(text.encode("utf-8"))
