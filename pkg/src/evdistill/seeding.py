"""One master seed, many labeled sub-streams.

Hash-based so the expansion is stable across platforms and Python versions
(unlike the builtin ``hash``).
"""

from __future__ import annotations

import hashlib


def seed_stream(master: int, label: str) -> int:
    """Derive a 63-bit seed for a named random stream."""
    digest = hashlib.sha256(f"{master}:{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & 0x7FFF_FFFF_FFFF_FFFF
