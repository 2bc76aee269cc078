"""AES-128 block cipher core.

Table-driven implementation (encrypt and decrypt direction) used by the
header-encryption tunnel scheme and the full-frame AEAD baseline, where
the per-block work itself is the quantity under measurement.  Verified
against the FIPS-197 known-answer vectors in tests/test_aes.py.
"""

import struct

BLOCK_SIZE = 16

_WORDS = struct.Struct(">IIII")
_M32 = 0xFFFFFFFF


def _build_sbox() -> tuple[int, ...]:
    sbox = [0] * 256
    p = q = 1
    while True:
        p = (p ^ (p << 1) ^ (0x1B if p & 0x80 else 0)) & 0xFF
        q = (q ^ (q << 1)) & 0xFF
        q = (q ^ (q << 2)) & 0xFF
        q = (q ^ (q << 4)) & 0xFF
        if q & 0x80:
            q ^= 0x09
        rot = lambda x, n: ((x << n) | (x >> (8 - n))) & 0xFF
        sbox[p] = q ^ rot(q, 1) ^ rot(q, 2) ^ rot(q, 3) ^ rot(q, 4) ^ 0x63
        if p == 1:
            break
    sbox[0] = 0x63
    return tuple(sbox)


_SBOX = _build_sbox()
_INV_SBOX = tuple(_SBOX.index(i) for i in range(256))


def _xtime(a: int) -> int:
    a <<= 1
    return (a ^ 0x1B) & 0xFF if a & 0x100 else a


def _gf_mul(a: int, b: int) -> int:
    out = 0
    while b:
        if b & 1:
            out ^= a
        a = _xtime(a)
        b >>= 1
    return out


def _build_tables():
    te0, te1, te2, te3 = [], [], [], []
    td0, td1, td2, td3 = [], [], [], []
    for x in range(256):
        s = _SBOX[x]
        s2 = _xtime(s)
        s3 = s2 ^ s
        w = (s2 << 24) | (s << 16) | (s << 8) | s3
        te0.append(w)
        te1.append(((w >> 8) | (w << 24)) & _M32)
        te2.append(((w >> 16) | (w << 16)) & _M32)
        te3.append(((w >> 24) | (w << 8)) & _M32)
        si = _INV_SBOX[x]
        w = (
            (_gf_mul(si, 0x0E) << 24)
            | (_gf_mul(si, 0x09) << 16)
            | (_gf_mul(si, 0x0D) << 8)
            | _gf_mul(si, 0x0B)
        )
        td0.append(w)
        td1.append(((w >> 8) | (w << 24)) & _M32)
        td2.append(((w >> 16) | (w << 16)) & _M32)
        td3.append(((w >> 24) | (w << 8)) & _M32)
    return (
        tuple(te0), tuple(te1), tuple(te2), tuple(te3),
        tuple(td0), tuple(td1), tuple(td2), tuple(td3),
    )


_TE0, _TE1, _TE2, _TE3, _TD0, _TD1, _TD2, _TD3 = _build_tables()

_RCON = (0x01, 0x02, 0x04, 0x08, 0x10, 0x20, 0x40, 0x80, 0x1B, 0x36)


def _expand_key(key: bytes) -> list[int]:
    w = list(struct.unpack(">IIII", key))
    for i in range(4, 44):
        t = w[i - 1]
        if i % 4 == 0:
            t = ((t << 8) | (t >> 24)) & _M32
            t = (
                (_SBOX[t >> 24] << 24)
                | (_SBOX[(t >> 16) & 0xFF] << 16)
                | (_SBOX[(t >> 8) & 0xFF] << 8)
                | _SBOX[t & 0xFF]
            )
            t ^= _RCON[i // 4 - 1] << 24
        w.append(w[i - 4] ^ t)
    return w


class Aes128:
    """One expanded AES-128 key; encrypts/decrypts single 16-byte blocks."""

    __slots__ = ("_ek", "_dk")

    def __init__(self, key: bytes):
        if len(key) != BLOCK_SIZE:
            raise ValueError("AES-128 key must be 16 bytes")
        ek = _expand_key(key)
        # decryption key schedule: reversed rounds, inner keys passed
        # through InvMixColumns so Td tables can be used directly
        dk = [0] * 44
        for r in range(11):
            dk[4 * r : 4 * r + 4] = ek[4 * (10 - r) : 4 * (10 - r) + 4]
        for i in range(4, 40):
            w = dk[i]
            dk[i] = (
                _TD0[_SBOX[w >> 24]]
                ^ _TD1[_SBOX[(w >> 16) & 0xFF]]
                ^ _TD2[_SBOX[(w >> 8) & 0xFF]]
                ^ _TD3[_SBOX[w & 0xFF]]
            )
        self._ek = ek
        self._dk = dk

    def encrypt_block(self, block: bytes) -> bytes:
        te0, te1, te2, te3 = _TE0, _TE1, _TE2, _TE3
        rk = self._ek
        s0, s1, s2, s3 = _WORDS.unpack(block)
        s0 ^= rk[0]
        s1 ^= rk[1]
        s2 ^= rk[2]
        s3 ^= rk[3]
        i = 4
        for _ in range(9):
            t0 = te0[s0 >> 24] ^ te1[(s1 >> 16) & 0xFF] ^ te2[(s2 >> 8) & 0xFF] ^ te3[s3 & 0xFF] ^ rk[i]
            t1 = te0[s1 >> 24] ^ te1[(s2 >> 16) & 0xFF] ^ te2[(s3 >> 8) & 0xFF] ^ te3[s0 & 0xFF] ^ rk[i + 1]
            t2 = te0[s2 >> 24] ^ te1[(s3 >> 16) & 0xFF] ^ te2[(s0 >> 8) & 0xFF] ^ te3[s1 & 0xFF] ^ rk[i + 2]
            t3 = te0[s3 >> 24] ^ te1[(s0 >> 16) & 0xFF] ^ te2[(s1 >> 8) & 0xFF] ^ te3[s2 & 0xFF] ^ rk[i + 3]
            s0, s1, s2, s3 = t0, t1, t2, t3
            i += 4
        sb = _SBOX
        o0 = ((sb[s0 >> 24] << 24) | (sb[(s1 >> 16) & 0xFF] << 16) | (sb[(s2 >> 8) & 0xFF] << 8) | sb[s3 & 0xFF]) ^ rk[40]
        o1 = ((sb[s1 >> 24] << 24) | (sb[(s2 >> 16) & 0xFF] << 16) | (sb[(s3 >> 8) & 0xFF] << 8) | sb[s0 & 0xFF]) ^ rk[41]
        o2 = ((sb[s2 >> 24] << 24) | (sb[(s3 >> 16) & 0xFF] << 16) | (sb[(s0 >> 8) & 0xFF] << 8) | sb[s1 & 0xFF]) ^ rk[42]
        o3 = ((sb[s3 >> 24] << 24) | (sb[(s0 >> 16) & 0xFF] << 16) | (sb[(s1 >> 8) & 0xFF] << 8) | sb[s2 & 0xFF]) ^ rk[43]
        return _WORDS.pack(o0, o1, o2, o3)

    def decrypt_block(self, block: bytes) -> bytes:
        td0, td1, td2, td3 = _TD0, _TD1, _TD2, _TD3
        rk = self._dk
        s0, s1, s2, s3 = _WORDS.unpack(block)
        s0 ^= rk[0]
        s1 ^= rk[1]
        s2 ^= rk[2]
        s3 ^= rk[3]
        i = 4
        for _ in range(9):
            t0 = td0[s0 >> 24] ^ td1[(s3 >> 16) & 0xFF] ^ td2[(s2 >> 8) & 0xFF] ^ td3[s1 & 0xFF] ^ rk[i]
            t1 = td0[s1 >> 24] ^ td1[(s0 >> 16) & 0xFF] ^ td2[(s3 >> 8) & 0xFF] ^ td3[s2 & 0xFF] ^ rk[i + 1]
            t2 = td0[s2 >> 24] ^ td1[(s1 >> 16) & 0xFF] ^ td2[(s0 >> 8) & 0xFF] ^ td3[s3 & 0xFF] ^ rk[i + 2]
            t3 = td0[s3 >> 24] ^ td1[(s2 >> 16) & 0xFF] ^ td2[(s1 >> 8) & 0xFF] ^ td3[s0 & 0xFF] ^ rk[i + 3]
            s0, s1, s2, s3 = t0, t1, t2, t3
            i += 4
        isb = _INV_SBOX
        o0 = ((isb[s0 >> 24] << 24) | (isb[(s3 >> 16) & 0xFF] << 16) | (isb[(s2 >> 8) & 0xFF] << 8) | isb[s1 & 0xFF]) ^ rk[40]
        o1 = ((isb[s1 >> 24] << 24) | (isb[(s0 >> 16) & 0xFF] << 16) | (isb[(s3 >> 8) & 0xFF] << 8) | isb[s2 & 0xFF]) ^ rk[41]
        o2 = ((isb[s2 >> 24] << 24) | (isb[(s1 >> 16) & 0xFF] << 16) | (isb[(s0 >> 8) & 0xFF] << 8) | isb[s3 & 0xFF]) ^ rk[42]
        o3 = ((isb[s3 >> 24] << 24) | (isb[(s2 >> 16) & 0xFF] << 16) | (isb[(s1 >> 8) & 0xFF] << 8) | isb[s0 & 0xFF]) ^ rk[43]
        return _WORDS.pack(o0, o1, o2, o3)
