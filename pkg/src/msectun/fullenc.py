"""Full-frame re-encryption baseline scheme.

Benchmark stand-in for tunneling MACsec frames through a conventional
VPN: the entire frame is sealed with AES-CCM (RFC 3610, L=2, 16-byte
tag) built on the same block cipher core as the header-encryption
scheme, so per-frame block counts are directly comparable.  Wire body:

    nonce(13) ciphertext(frame length) tag(16)
"""

from __future__ import annotations

import hashlib
import struct
from typing import Optional

from .aes import Aes128
from .flow import DecodeResult

NONCE_LEN = 13  # 15 - L with L = 2
TAG_LEN = 16
OVERHEAD = NONCE_LEN + TAG_LEN

REASON_AUTH_FAIL = "auth_fail"
REASON_MALFORMED = "malformed"


def _mac_blocks(cipher: Aes128, nonce: bytes, data: bytes, aad: bytes, tag_len: int):
    """CBC-MAC pass over the CCM B-blocks; returns (mac_state, block_ops)."""
    flags = (64 if aad else 0) | (((tag_len - 2) // 2) << 3) | 1  # L' = L-1 = 1
    b0 = bytes([flags]) + nonce + struct.pack(">H", len(data))
    x = cipher.encrypt_block(b0)
    ops = 1
    if aad:
        blocks = struct.pack(">H", len(aad)) + aad
        blocks += b"\x00" * (-len(blocks) % 16)
    else:
        blocks = b""
    blocks += data + b"\x00" * (-len(data) % 16)
    for off in range(0, len(blocks), 16):
        chunk = int.from_bytes(blocks[off : off + 16], "big")
        x = cipher.encrypt_block((int.from_bytes(x, "big") ^ chunk).to_bytes(16, "big"))
        ops += 1
    return x, ops


def _ctr_stream(cipher: Aes128, nonce: bytes, nbytes: int):
    """CCM counter keystream starting at block 1; returns (bytes, ops)."""
    out = bytearray()
    ops = 0
    counter = 1
    while len(out) < nbytes:
        block = cipher.encrypt_block(b"\x01" + nonce + struct.pack(">H", counter))
        out += block
        counter += 1
        ops += 1
    return bytes(out[:nbytes]), ops


def ccm_encrypt(
    cipher: Aes128, nonce: bytes, plaintext: bytes, aad: bytes = b"", tag_len: int = TAG_LEN
) -> tuple[bytes, int]:
    """Seal; returns (ciphertext || tag, block operations used)."""
    if len(nonce) != NONCE_LEN:
        raise ValueError("CCM nonce must be 13 bytes")
    mac, ops = _mac_blocks(cipher, nonce, plaintext, aad, tag_len)
    s0 = cipher.encrypt_block(b"\x01" + nonce + b"\x00\x00")
    stream, ctr_ops = _ctr_stream(cipher, nonce, len(plaintext))
    ct = bytes(p ^ s for p, s in zip(plaintext, stream))
    tag = bytes(m ^ s for m, s in zip(mac[:tag_len], s0))
    return ct + tag, ops + ctr_ops + 1


def ccm_decrypt(
    cipher: Aes128, nonce: bytes, sealed: bytes, aad: bytes = b"", tag_len: int = TAG_LEN
) -> tuple[Optional[bytes], int]:
    """Open; returns (plaintext or None on auth failure, block ops)."""
    if len(nonce) != NONCE_LEN or len(sealed) < tag_len:
        return None, 0
    ct, tag = sealed[:-tag_len], sealed[-tag_len:]
    s0 = cipher.encrypt_block(b"\x01" + nonce + b"\x00\x00")
    stream, ctr_ops = _ctr_stream(cipher, nonce, len(ct))
    plaintext = bytes(c ^ s for c, s in zip(ct, stream))
    mac, mac_ops = _mac_blocks(cipher, nonce, plaintext, aad, tag_len)
    expect = bytes(m ^ s for m, s in zip(mac[:tag_len], s0))
    if expect != tag:
        return None, ctr_ops + mac_ops + 1
    return plaintext, ctr_ops + mac_ops + 1


class FullEncTunnel:
    """Whole-frame AEAD encode/decode with per-direction keys."""

    def __init__(self, key: bytes, own_id: str):
        self.cipher = Aes128(key)
        self._nonce_prefix = hashlib.sha256(own_id.encode()).digest()[:5]
        self._counter = 0
        self.block_ops_uplink = 0
        self.block_ops_downlink = 0

    def encode(self, raw_frame: bytes) -> bytes:
        self._counter += 1
        nonce = self._nonce_prefix + struct.pack(">Q", self._counter)
        sealed, ops = ccm_encrypt(self.cipher, nonce, raw_frame)
        self.block_ops_uplink += ops
        return nonce + sealed

    def decode(self, body: bytes) -> DecodeResult:
        if len(body) < NONCE_LEN + TAG_LEN:
            return DecodeResult(reason=REASON_MALFORMED)
        plaintext, ops = ccm_decrypt(self.cipher, body[:NONCE_LEN], body[NONCE_LEN:])
        self.block_ops_downlink += ops
        if plaintext is None:
            return DecodeResult(reason=REASON_AUTH_FAIL)
        return DecodeResult(frame=plaintext)
