"""Identifier-based tunnel scheme.

Uplink replaces the sensitive header fields of a MACsec frame with a
64-bit rotating identifier; downlink restores them from table state.
Wire body layout (inside the carrier payload), big-endian:

    ridf(8) tci_flags(1) sl(1) secure_data(var) icv(16)

which is 18 bytes shorter than the original frame.  The tci byte
carries the non-sensitive flags with the AN bits cleared; destination,
source, EtherType, PN, SCI and AN never appear on the wire.
"""

from __future__ import annotations

import struct
from typing import Optional

from .frame import ETHERTYPE_MACSEC, ICV_LEN, MacsecFrame, is_broadcast
from .flow import (
    DEFAULT_WINDOW,
    DecodeResult,
    DownlinkFlowEntry,
    HeaderData,
    IdentifierEntry,
    Sci,
    UplinkFlowEntry,
    WindowStatus,
    bind,
    unbind,
    window_init,
)
from .siphash import siphash24

WIRE_SHRINK = 18  # header bytes removed minus the 8-byte identifier
MIN_BODY = 8 + 2 + 2 + ICV_LEN

REASON_UNKNOWN_IDENTIFIER = "unknown_identifier"
REASON_REPLAY = "replay"
REASON_OUT_OF_WINDOW = "out_of_window"
REASON_MALFORMED = "malformed"


class UnregisteredFlow(LookupError):
    """Frame arrived for a flow discovery has not registered yet."""


def derive_ridf(bidf: bytes, pn: int) -> int:
    """Rotating identifier for one packet number of a flow.

    SipHash-2-4 over the 16-byte base identifier.  The hash key is the
    32-bit PN repeated four times big-endian, which keeps the stated
    roles (bidf hashed, PN keying) while meeting the 128-bit key size
    of the primitive.  Interoperating implementations must match this
    construction exactly.
    """
    return siphash24(struct.pack(">IIII", pn, pn, pn, pn), bidf)


def uplink_encode(frame: MacsecFrame, entry: Optional[UplinkFlowEntry]) -> bytes:
    """Swap sensitive headers for the rotating identifier.

    Payload and ICV are copied untouched; the caller picks up the
    per-destination-class base identifier from the uplink entry.
    """
    if entry is None:
        raise UnregisteredFlow("flow must be announced before encoding")
    tag = frame.sectag
    bidf = entry.bidf_for_dst(frame.dst)
    ridf = derive_ridf(bidf, tag.pn)
    return (
        struct.pack(">QBB", ridf, tag.tci.flags_byte(), tag.sl)
        + frame.secure_data
        + frame.icv
    )


class IdfDownlink:
    """Downlink flow and identifier tables plus the decode path.

    Single-writer: one gateway pipeline owns the instance.  The
    identifier table always holds every PN covered by each flow's
    window, consumed ones flagged seen so replays stay classifiable
    until they slide out of the covered range.
    """

    def __init__(self, window_size: int = DEFAULT_WINDOW):
        self.window_size = window_size
        self.flows: dict[bytes, DownlinkFlowEntry] = {}
        self.ids: dict[int, IdentifierEntry] = {}
        self._by_sa: dict[tuple[Sci, int], set[bytes]] = {}
        self.hash_calls = 0
        self.ridf_collisions = 0
        self.bind_flows = True
        # test hook: reconstruct the PN by counting instead of from the
        # identifier entry, reproducing the failure mode that rotating
        # identifiers and flow binding exist to prevent
        self.naive_pn_reconstruction = False

    # -- table maintenance -------------------------------------------------

    def _insert_id(self, flow: DownlinkFlowEntry, pn: int, seen: bool) -> None:
        ridf = derive_ridf(flow.bidf, pn)
        self.hash_calls += 1
        existing = self.ids.get(ridf)
        if existing is not None and (existing.flow is not flow or existing.pn != pn):
            # cross-flow collision: keep the older entry, count the event
            self.ridf_collisions += 1
            return
        self.ids[ridf] = IdentifierEntry(ridf=ridf, pn=pn, flow=flow, seen=seen)
        flow.ids[pn] = ridf

    def _drop_id(self, flow: DownlinkFlowEntry, pn: int) -> None:
        ridf = flow.ids.pop(pn, None)
        if ridf is not None:
            ent = self.ids.get(ridf)
            if ent is not None and ent.flow is flow:
                del self.ids[ridf]

    def _clear_ids(self, flow: DownlinkFlowEntry) -> None:
        for pn in list(flow.ids):
            self._drop_id(flow, pn)

    def _rebuild_ids(self, flow: DownlinkFlowEntry) -> None:
        self._clear_ids(flow)
        for pn, seen in flow.window.pn_states():
            self._insert_id(flow, pn, seen)

    # -- announcements -----------------------------------------------------

    def register(
        self, bidf: bytes, header: HeaderData, pn: int, origin: str = ""
    ) -> DownlinkFlowEntry:
        """Create (or refresh) a downlink flow from an announcement."""
        entry = self.flows.get(bidf)
        if entry is not None:
            if entry.window is not None and pn > entry.window.lowest_unseen():
                # re-announce with a newer PN: sender restarted, reset
                entry.window.__init__(pn, self.window_size)
                self._rebuild_ids(entry)
                if entry.bound is not None:
                    entry.bound.window = entry.window
                    self._rebuild_ids(entry.bound)
            return entry

        entry = DownlinkFlowEntry(bidf=bidf, header=header, origin=origin)
        window_init(entry, pn, self.window_size)
        for p in entry.window.pending_pns():
            self._insert_id(entry, p, seen=False)
        self.flows[bidf] = entry
        sa = (header.sci, header.an)
        peers = self._by_sa.setdefault(sa, set())
        if self.bind_flows:
            for other_bidf in peers:
                other = self.flows[other_bidf]
                if is_broadcast(other.header.dst) != is_broadcast(header.dst):
                    bind(entry, other)
                    self._rebuild_ids(entry)
                    self._rebuild_ids(other)
                    break
        peers.add(bidf)
        return entry

    def remove(self, bidf: bytes) -> None:
        entry = self.flows.pop(bidf, None)
        if entry is None:
            return
        self._clear_ids(entry)
        unbind(entry)
        sa = (entry.header.sci, entry.header.an)
        peers = self._by_sa.get(sa)
        if peers:
            peers.discard(bidf)
            if not peers:
                del self._by_sa[sa]

    # -- decode ------------------------------------------------------------

    def decode(self, body: bytes) -> DecodeResult:
        """Identifier lookup, window acceptance, frame reconstruction."""
        if len(body) < MIN_BODY:
            return DecodeResult(reason=REASON_MALFORMED)
        ridf, tci_flags, sl = struct.unpack_from(">QBB", body)
        ident = self.ids.get(ridf)
        if ident is None:
            return DecodeResult(reason=REASON_UNKNOWN_IDENTIFIER)
        if ident.seen:
            return DecodeResult(reason=REASON_REPLAY)
        if tci_flags & 0x03:
            # AN bits travel in the flow state, never on the wire
            return DecodeResult(reason=REASON_MALFORMED)
        flow = ident.flow
        pn = flow.window.lowest_unseen() if self.naive_pn_reconstruction else ident.pn
        res = flow.window.accept(ident.pn)
        if res.status is WindowStatus.REPLAY:
            return DecodeResult(reason=REASON_REPLAY)
        if res.status is WindowStatus.OUT_OF_WINDOW:
            return DecodeResult(reason=REASON_OUT_OF_WINDOW)
        flows = (flow,) if flow.bound is None else (flow, flow.bound)
        for fl in flows:
            mirrored = self.ids.get(fl.ids.get(ident.pn, -1))
            if mirrored is not None:
                mirrored.seen = True
            for p in res.evicted:
                self._drop_id(fl, p)
            for p in res.entered:
                self._insert_id(fl, p, seen=False)

        hdr = flow.header
        frame = (
            hdr.dst
            + hdr.src
            + struct.pack(">HBBI", ETHERTYPE_MACSEC, tci_flags | hdr.an, sl, pn)
            + hdr.sci.pack()
            + body[10:]
        )
        return DecodeResult(frame=frame, flow=flow)

    # -- test support --------------------------------------------------------

    def audit(self) -> None:
        """Assert identifier-table coherence against every flow window."""
        owned = 0
        for flow in self.flows.values():
            states = dict(flow.window.pn_states())
            assert set(flow.ids) <= set(states), "entry outside window range"
            missing = set(states) - set(flow.ids)
            # entries may be missing only through cross-flow collisions
            assert len(missing) <= self.ridf_collisions
            for pn, ridf in flow.ids.items():
                ent = self.ids[ridf]
                assert ent.flow is flow and ent.pn == pn
                assert ent.seen == states[pn], f"seen mismatch at pn {pn}"
                assert ridf == derive_ridf(flow.bidf, pn)
                owned += 1
        assert owned == len(self.ids), "orphan identifier entries"
