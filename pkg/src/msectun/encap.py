"""Unprotected carrier header for tunnel datagrams (VXLAN-like).

8 bytes prepended to every scheme body travelling over UDP:

    magic(2) version/scheme(1) reserved(5)

The version and scheme tag share one byte, high nibble version.
The NAIVE scheme carries raw MACsec frames and serves as the
unprotected baseline.
"""

import enum
import struct

MAGIC = 0xA5EC
VERSION = 1
HEADER_LEN = 8
DEFAULT_TUNNEL_PORT = 4790

# IP(20) + UDP(8) + this header
DEFAULT_MTU = 1500
OVERHEAD_BEFORE_BODY = 28 + HEADER_LEN


class EncapScheme(enum.IntEnum):
    NAIVE = 0
    IDF = 1
    ENC = 2
    FULLENC = 3


class EncapError(ValueError):
    pass


class TooLarge(EncapError):
    """Body would not fit the path MTU; no fragmentation support."""


class BadMagic(EncapError):
    pass


class BadVersion(EncapError):
    pass


class UnknownScheme(EncapError):
    pass


class BadReserved(EncapError):
    """Reserved padding bytes must be zero."""


def max_body(mtu: int = DEFAULT_MTU) -> int:
    return mtu - OVERHEAD_BEFORE_BODY


def encap(body: bytes, scheme: EncapScheme, mtu: int = DEFAULT_MTU) -> bytes:
    if len(body) > max_body(mtu):
        raise TooLarge(f"{len(body)} > {max_body(mtu)}")
    return struct.pack(">HB5x", MAGIC, (VERSION << 4) | int(scheme)) + body


def decap(payload: bytes) -> tuple[EncapScheme, bytes]:
    if len(payload) < HEADER_LEN:
        raise BadMagic("truncated header")
    magic, vs = struct.unpack_from(">HB", payload)
    if magic != MAGIC:
        raise BadMagic(f"0x{magic:04x}")
    if vs >> 4 != VERSION:
        raise BadVersion(f"{vs >> 4}")
    try:
        scheme = EncapScheme(vs & 0x0F)
    except ValueError:
        raise UnknownScheme(f"{vs & 0x0F}") from None
    if payload[3:HEADER_LEN] != b"\x00" * 5:
        raise BadReserved("nonzero padding")
    return scheme, payload[HEADER_LEN:]
