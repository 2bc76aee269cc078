"""SipHash-2-4 keyed hash.

Self-contained implementation used to derive rotating identifiers.
Matches the reference test vectors (key 000102..0f over 64 incremental
messages); see tests/test_siphash.py.
"""

import struct

_U64 = 0xFFFFFFFFFFFFFFFF
_KEY_WORDS = struct.Struct("<QQ")
_WORD = struct.Struct("<Q")


def siphash24(key: bytes, data: bytes) -> int:
    """Hash ``data`` under a 16-byte ``key``; returns a 64-bit integer."""
    if len(key) != 16:
        raise ValueError("siphash key must be 16 bytes")
    k0, k1 = _KEY_WORDS.unpack(key)
    v0 = k0 ^ 0x736F6D6570736575
    v1 = k1 ^ 0x646F72616E646F6D
    v2 = k0 ^ 0x6C7967656E657261
    v3 = k1 ^ 0x7465646279746573

    n = len(data)
    end = n - (n % 8)
    for off in range(0, end, 8):
        m = _WORD.unpack_from(data, off)[0]
        v3 ^= m
        # two SipRounds per message word
        for _ in (0, 1):
            v0 = (v0 + v1) & _U64
            v1 = ((v1 << 13) | (v1 >> 51)) & _U64
            v1 ^= v0
            v0 = ((v0 << 32) | (v0 >> 32)) & _U64
            v2 = (v2 + v3) & _U64
            v3 = ((v3 << 16) | (v3 >> 48)) & _U64
            v3 ^= v2
            v0 = (v0 + v3) & _U64
            v3 = ((v3 << 21) | (v3 >> 43)) & _U64
            v3 ^= v0
            v2 = (v2 + v1) & _U64
            v1 = ((v1 << 17) | (v1 >> 47)) & _U64
            v1 ^= v2
            v2 = ((v2 << 32) | (v2 >> 32)) & _U64
        v0 ^= m

    # final block: remaining bytes plus total length in the top byte
    tail = data[end:]
    b = (n & 0xFF) << 56
    for i, byte in enumerate(tail):
        b |= byte << (8 * i)
    v3 ^= b
    for _ in (0, 1):
        v0 = (v0 + v1) & _U64
        v1 = ((v1 << 13) | (v1 >> 51)) & _U64
        v1 ^= v0
        v0 = ((v0 << 32) | (v0 >> 32)) & _U64
        v2 = (v2 + v3) & _U64
        v3 = ((v3 << 16) | (v3 >> 48)) & _U64
        v3 ^= v2
        v0 = (v0 + v3) & _U64
        v3 = ((v3 << 21) | (v3 >> 43)) & _U64
        v3 ^= v0
        v2 = (v2 + v1) & _U64
        v1 = ((v1 << 17) | (v1 >> 47)) & _U64
        v1 ^= v2
        v2 = ((v2 << 32) | (v2 >> 32)) & _U64
    v0 ^= b

    v2 ^= 0xFF
    for _ in range(4):
        v0 = (v0 + v1) & _U64
        v1 = ((v1 << 13) | (v1 >> 51)) & _U64
        v1 ^= v0
        v0 = ((v0 << 32) | (v0 >> 32)) & _U64
        v2 = (v2 + v3) & _U64
        v3 = ((v3 << 16) | (v3 >> 48)) & _U64
        v3 ^= v2
        v0 = (v0 + v3) & _U64
        v3 = ((v3 << 21) | (v3 >> 43)) & _U64
        v3 ^= v0
        v2 = (v2 + v1) & _U64
        v1 = ((v1 << 17) | (v1 >> 47)) & _U64
        v1 ^= v2
        v2 = ((v2 << 32) | (v2 >> 32)) & _U64

    return v0 ^ v1 ^ v2 ^ v3


def siphash24_digest(key: bytes, data: bytes) -> bytes:
    """Little-endian 8-byte digest, as in the reference implementation."""
    return _WORD.pack(siphash24(key, data))
