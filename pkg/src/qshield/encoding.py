"""Canonical JSON encoding shared by hashing, signing and audit paths.

One rule everywhere: keys sorted lexicographically, no insignificant
whitespace, UTF-8 bytes.  Two structurally equal values always produce
identical bytes, which is what the trust-proof digests rely on.
"""

from __future__ import annotations

import json
from typing import Any


def canonical_json(obj: Any) -> bytes:
    return json.dumps(
        obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False
    ).encode("utf-8")


def sorted_deep(obj: Any) -> Any:
    """Rebuild nested containers with sorted keys, for order-insensitive
    comparison and for records whose top-level field order is fixed but
    whose nested parameters must still serialize canonically."""
    if isinstance(obj, dict):
        return {k: sorted_deep(obj[k]) for k in sorted(obj)}
    if isinstance(obj, (list, tuple)):
        return [sorted_deep(v) for v in obj]
    return obj


def from_json(data: bytes | str) -> Any:
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    return json.loads(data)
