"""Flow state: keys, the three lookup tables, and replay windows.

A flow is unidirectional traffic from one MACsec device to another,
keyed by (SCI, AN, destination MAC).  The uplink table is keyed by
(SCI, AN) and holds one unicast and one broadcast base identifier per
security association; the downlink flow table is keyed by base
identifier; the identifier table is keyed by rotating identifier.
No operation looks anything up by any other key.
"""

from __future__ import annotations

import enum
import secrets
import struct
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional

from .frame import MacsecFrame, Sci, is_broadcast

PN_MAX = 0xFFFFFFFF
DEFAULT_WINDOW = 64
DEFAULT_FLOW_TIMEOUT_US = 60_000_000


class BindMismatch(ValueError):
    """Attempt to bind flows that do not share an SA."""


@dataclass(frozen=True)
class FlowKey:
    sci: Sci
    an: int
    dst: bytes


def classify(frame: MacsecFrame) -> FlowKey:
    """Project a parsed frame onto its flow key."""
    tag = frame.sectag
    return FlowKey(sci=tag.sci, an=tag.tci.an, dst=frame.dst)


def new_bidf(rng=None) -> bytes:
    """Fresh 128-bit base identifier; never reused across flows."""
    if rng is None:
        return secrets.token_bytes(16)
    return rng.getrandbits(128).to_bytes(16, "big")


class WindowStatus(enum.Enum):
    ACCEPT = "accept"
    REPLAY = "replay"
    OUT_OF_WINDOW = "out_of_window"


@dataclass
class WindowResult:
    status: WindowStatus
    entered: list[int] = field(default_factory=list)
    evicted: list[int] = field(default_factory=list)


class ReplayWindow:
    """Sliding acceptance window over packet numbers.

    Tracks the pending (not yet seen) PNs a receiver will still accept;
    there are always ``size`` of them except near the PN ceiling.  The
    covered range [floor, top] additionally remembers already-consumed
    PNs so replays inside the range can be told apart from stale or
    far-future traffic.  Accepting a PN slides the floor to
    ``pn - size + 1`` and tops the range up, so an in-order loss burst
    shorter than the window size never causes a rejection.
    """

    __slots__ = ("size", "floor", "top", "_seen", "_pending")

    def __init__(self, start_pn: int, size: int):
        if size < 1:
            raise ValueError("window size must be >= 1")
        if not 1 <= start_pn <= PN_MAX:
            raise ValueError("start PN out of range")
        self.size = size
        self.floor = start_pn
        self.top = min(start_pn + size - 1, PN_MAX)
        self._seen = 0
        self._pending = self.top - self.floor + 1

    def accept(self, pn: int) -> WindowResult:
        if pn < self.floor or pn > self.top:
            return WindowResult(WindowStatus.OUT_OF_WINDOW)
        bit = 1 << (pn - self.floor)
        if self._seen & bit:
            return WindowResult(WindowStatus.REPLAY)
        self._seen |= bit
        self._pending -= 1

        evicted: list[int] = []
        new_floor = max(self.floor, pn - self.size + 1)
        if new_floor > self.floor:
            shift = new_floor - self.floor
            for p in range(self.floor, new_floor):
                if not (self._seen >> (p - self.floor)) & 1:
                    self._pending -= 1
                evicted.append(p)
            self._seen >>= shift
            self.floor = new_floor

        entered: list[int] = []
        short = self.size - self._pending
        nxt = self.top + 1
        while short > 0 and nxt <= PN_MAX:
            entered.append(nxt)
            nxt += 1
            short -= 1
        if entered:
            self.top = entered[-1]
            self._pending += len(entered)
        return WindowResult(WindowStatus.ACCEPT, entered, evicted)

    def is_seen(self, pn: int) -> bool:
        if pn < self.floor or pn > self.top:
            return False
        return bool(self._seen & (1 << (pn - self.floor)))

    def lowest_unseen(self) -> int:
        """The next expected PN: lowest covered PN not yet consumed."""
        seen = self._seen
        p = self.floor
        while seen & 1:
            seen >>= 1
            p += 1
        return p

    def pending_pns(self) -> list[int]:
        return [p for p in range(self.floor, self.top + 1) if not self.is_seen(p)]

    def pn_states(self) -> Iterator[tuple[int, bool]]:
        for p in range(self.floor, self.top + 1):
            yield p, self.is_seen(p)


@dataclass
class UplinkFlowEntry:
    """Per-SA uplink state, keyed by (SCI, AN) in the uplink table."""

    sci: Sci
    an: int
    unicast_bidf: bytes
    broadcast_bidf: bytes
    timeout: int
    remote_gateways: set[str] = field(default_factory=set)
    # operational extras, not part of the table contract
    unicast_dst: Optional[bytes] = None
    announced_unicast: bool = False
    announced_broadcast: bool = False

    def bidf_for_dst(self, dst: bytes) -> bytes:
        return self.broadcast_bidf if is_broadcast(dst) else self.unicast_bidf


@dataclass
class HeaderData:
    """Everything needed to rebuild the sensitive fields of a flow."""

    dst: bytes
    src: bytes
    sci: Sci
    an: int

    def key(self) -> FlowKey:
        return FlowKey(sci=self.sci, an=self.an, dst=self.dst)

    def pack(self) -> bytes:
        return self.dst + self.src + self.sci.pack() + bytes([self.an])

    @classmethod
    def unpack(cls, data: bytes) -> "HeaderData":
        return cls(
            dst=bytes(data[0:6]),
            src=bytes(data[6:12]),
            sci=Sci.unpack(data[12:20]),
            an=data[20],
        )


@dataclass
class DownlinkFlowEntry:
    bidf: bytes
    header: HeaderData
    window: Optional[ReplayWindow] = None
    bound: Optional["DownlinkFlowEntry"] = None
    origin: str = ""
    last_seen: int = 0
    # identifier-scheme bookkeeping: pn -> ridf for the entries this
    # flow currently owns in the identifier table
    ids: dict[int, int] = field(default_factory=dict)

    @property
    def next_expected_pn(self) -> int:
        return self.window.lowest_unseen() if self.window else 0


@dataclass
class DecodeResult:
    """Outcome of a downlink scheme decode: a frame or a drop reason."""

    frame: Optional[bytes] = None
    reason: Optional[str] = None
    flow: Optional[DownlinkFlowEntry] = None

    @property
    def ok(self) -> bool:
        return self.frame is not None


@dataclass
class IdentifierEntry:
    ridf: int
    pn: int
    flow: DownlinkFlowEntry
    seen: bool = False


def window_init(
    entry: DownlinkFlowEntry,
    start_pn: int,
    window_size: int,
    ridf_for_pn: Optional[Callable[[int], int]] = None,
) -> list[IdentifierEntry]:
    """Set up the entry's window and precalculate its identifier entries.

    Without a derivation callback (the encryption scheme needs none) the
    window is initialized and no entries are returned.
    """
    entry.window = ReplayWindow(start_pn, window_size)
    if ridf_for_pn is None:
        return []
    return [
        IdentifierEntry(ridf=ridf_for_pn(pn), pn=pn, flow=entry)
        for pn in entry.window.pending_pns()
    ]


def window_accept(entry: DownlinkFlowEntry, pn: int) -> WindowResult:
    if entry.window is None:
        raise ValueError("window not initialized")
    return entry.window.accept(pn)


def bind(a: DownlinkFlowEntry, b: DownlinkFlowEntry) -> ReplayWindow:
    """Couple a unicast/broadcast flow pair so PN state stays shared.

    When the two windows overlap, the one with the lower floor becomes
    the shared window (it covers the other's start without orphaning
    in-flight frames below the later announcement's PN); disjoint
    windows mean the older flow is stale and the newer one wins.  The
    caller rebuilds identifier entries from the survivor's state.
    """
    if a.header.sci != b.header.sci or a.header.an != b.header.an:
        raise BindMismatch("flows do not share SCI and AN")
    casts = {is_broadcast(a.header.dst), is_broadcast(b.header.dst)}
    if casts != {True, False}:
        raise BindMismatch("need one unicast and one broadcast flow")
    if a.window is None or b.window is None:
        raise BindMismatch("both flows must have initialized windows")
    lo, hi = (a.window, b.window) if a.window.floor <= b.window.floor else (b.window, a.window)
    shared = lo if lo.top >= hi.floor else hi
    a.window = shared
    b.window = shared
    a.bound = b
    b.bound = a
    return shared


def unbind(entry: DownlinkFlowEntry) -> None:
    partner = entry.bound
    if partner is not None:
        partner.bound = None
    entry.bound = None


class UplinkTable:
    """Uplink flow entries keyed by (SCI, AN)."""

    def __init__(self):
        self._entries: dict[tuple[Sci, int], UplinkFlowEntry] = {}

    def get(self, sci: Sci, an: int) -> Optional[UplinkFlowEntry]:
        return self._entries.get((sci, an))

    def put(self, entry: UplinkFlowEntry) -> None:
        self._entries[(entry.sci, entry.an)] = entry

    def remove(self, sci: Sci, an: int) -> Optional[UplinkFlowEntry]:
        return self._entries.pop((sci, an), None)

    def expire(self, now: int) -> list[UplinkFlowEntry]:
        """Drop entries whose timeout passed; caller cascades notices."""
        dead = [e for e in self._entries.values() if e.timeout < now]
        for e in dead:
            del self._entries[(e.sci, e.an)]
        return dead

    def __len__(self) -> int:
        return len(self._entries)

    def entries(self) -> list[UplinkFlowEntry]:
        return list(self._entries.values())


def pack_bidf(bidf: bytes) -> str:
    return bidf.hex()


def ridf_bytes(ridf: int) -> bytes:
    return struct.pack(">Q", ridf)
