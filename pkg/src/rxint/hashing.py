"""Bit-exact XXH64 used for image-section integrity hashing.

Pure-Python port of the 64-bit xxHash algorithm. The detector hashes whole
executable regions with seed 0, so the hot path is the one-shot function over
a few KiB of section bytes; the stripe loop is written with local bindings
and bulk unpacking to keep that tolerable in CPython.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

_PRIME1 = 0x9E3779B185EBCA87
_PRIME2 = 0xC2B2AE3D27D4EB4F
_PRIME3 = 0x165667B19E3779F9
_PRIME4 = 0x85EBCA77C2B2AE63
_PRIME5 = 0x27D4EB2F165667C5

_MASK = 0xFFFFFFFFFFFFFFFF

_U64X4 = struct.Struct("<4Q")
_U64 = struct.Struct("<Q")
_U32 = struct.Struct("<I")


@dataclass(frozen=True)
class Digest64:
    """A 64-bit digest value; total function of (input bytes, seed)."""

    value: int

    def __index__(self) -> int:
        return self.value

    def __format__(self, spec: str) -> str:
        return format(self.value, spec)


def xxh64(data: bytes, seed: int = 0) -> Digest64:
    """Hash *data* with XXH64 and return the 64-bit digest."""
    return Digest64(xxh64_int(data, seed))


def xxh64_int(data: bytes, seed: int = 0) -> int:
    """XXH64 returning a plain int, for callers that index or compare a lot."""
    length = len(data)
    p1, p2, p3, p4, p5, mask = _PRIME1, _PRIME2, _PRIME3, _PRIME4, _PRIME5, _MASK
    n = 0

    if length >= 32:
        v1 = (seed + p1 + p2) & mask
        v2 = (seed + p2) & mask
        v3 = seed & mask
        v4 = (seed - p1) & mask
        unpack = _U64X4.unpack_from
        limit = length - 31
        while n < limit:
            l1, l2, l3, l4 = unpack(data, n)
            v1 = (v1 + l1 * p2) & mask
            v1 = (((v1 << 31) | (v1 >> 33)) * p1) & mask
            v2 = (v2 + l2 * p2) & mask
            v2 = (((v2 << 31) | (v2 >> 33)) * p1) & mask
            v3 = (v3 + l3 * p2) & mask
            v3 = (((v3 << 31) | (v3 >> 33)) * p1) & mask
            v4 = (v4 + l4 * p2) & mask
            v4 = (((v4 << 31) | (v4 >> 33)) * p1) & mask
            n += 32
        h = (
            ((v1 << 1) | (v1 >> 63))
            + ((v2 << 7) | (v2 >> 57))
            + ((v3 << 12) | (v3 >> 52))
            + ((v4 << 18) | (v4 >> 46))
        ) & mask
        for v in (v1, v2, v3, v4):
            k = (v * p2) & mask
            k = (((k << 31) | (k >> 33)) * p1) & mask
            h = (((h ^ k) * p1) + p4) & mask
    else:
        h = (seed + p5) & mask

    h = (h + length) & mask

    while n + 8 <= length:
        k = (_U64.unpack_from(data, n)[0] * p2) & mask
        k = (((k << 31) | (k >> 33)) * p1) & mask
        h ^= k
        h = ((((h << 27) | (h >> 37)) * p1) + p4) & mask
        n += 8
    if n + 4 <= length:
        h ^= (_U32.unpack_from(data, n)[0] * p1) & mask
        h = ((((h << 23) | (h >> 41)) * p2) + p3) & mask
        n += 4
    while n < length:
        h ^= (data[n] * p5) & mask
        h = (((h << 11) | (h >> 53)) * p1) & mask
        n += 1

    h ^= h >> 33
    h = (h * p2) & mask
    h ^= h >> 29
    h = (h * p3) & mask
    h ^= h >> 32
    return h
