"""Canonical JSON serialization and content digests.

Everything traceability-related keys off these helpers: equal logical
content must produce equal bytes, so keys are sorted, separators are
fixed, and no whitespace or timestamps ever enter the serialization.
"""

from __future__ import annotations

import hashlib
import json


def canonical_json(obj: object) -> str:
    """Render ``obj`` as canonical JSON (sorted keys, no whitespace)."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def digest_json(obj: object) -> str:
    """256-bit hex digest of the canonical serialization of ``obj``."""
    return sha256_hex(canonical_json(obj).encode("utf-8"))


def pretty_json(obj: object) -> str:
    """Stable human-readable rendering (sorted keys, trailing newline)."""
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n"
