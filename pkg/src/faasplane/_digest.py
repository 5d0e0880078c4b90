"""Digest and canonical-encoding helpers shared by every module."""
from __future__ import annotations

import hashlib
import json
from typing import Any

ZERO_HASH = bytes(32)


def sha256(*parts: bytes) -> bytes:
    h = hashlib.sha256()
    for p in parts:
        h.update(p)
    return h.digest()


def address_of(name: str) -> bytes:
    """Deterministic 32-byte address for a human-readable account name."""
    return sha256(b"account:", name.encode())


def _canonicalize(obj: Any) -> Any:
    # bool is an int subclass; keep it a JSON boolean
    if isinstance(obj, bool) or obj is None:
        return obj
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, (bytes, bytearray)):
        return bytes(obj).hex()
    if isinstance(obj, dict):
        return {str(k): _canonicalize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_canonicalize(v) for v in obj]
    if isinstance(obj, str):
        return obj
    raise TypeError(f"cannot canonicalize {type(obj).__name__}")


def canonical_json(obj: Any) -> bytes:
    """Sorted keys, no whitespace, integers rendered as decimal strings."""
    return json.dumps(_canonicalize(obj), sort_keys=True, separators=(",", ":")).encode()
