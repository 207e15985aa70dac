"""State digests for determinism checks.

A run is summarised by hashing the final heap cells together with the
application-visible commit label sequence.  Two runs agree iff their digests
agree, so divergence checks reduce to string comparison.
"""
from __future__ import annotations

from typing import Iterable, Sequence

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a64(data: bytes, h: int = _FNV_OFFSET) -> int:
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & _MASK64
    return h


def state_digest(cells: Sequence[int], labels: Iterable[str]) -> str:
    """Hex digest of final cell values followed by the commit label sequence.

    Cells are folded in as 64-bit little-endian words (values are masked, so
    negative intermediates hash consistently); labels are newline-joined and
    UTF-8 encoded.
    """
    buf = bytearray()
    for v in cells:
        buf += (v & _MASK64).to_bytes(8, "little")
    buf += "\n".join(labels).encode("utf-8")
    return f"{fnv1a64(bytes(buf)):016x}"
