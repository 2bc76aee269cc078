"""Tunnel gateway engine.

Classifies LAN ingress into flows, runs discovery over the management
channel, encodes frames with the configured scheme, and reconstructs
tunnel traffic back onto the LAN.  The engine is transport-agnostic:
callers wire in callbacks for the tunnel socket, the management
channel, and the LAN attachment, and drive every handler from a single
pipeline (single-writer; no internal locking).  The data plane never
raises: every rejected input lands in a named drop counter.
"""

from __future__ import annotations

import enum
import hashlib
import logging
import random
import secrets as _secrets
import struct
from collections import Counter, deque
from dataclasses import dataclass, field
from typing import Callable, Optional

from . import encap, frame as fr, idf as idf_mod, mgmt
from .enc import EncTunnel, PairKeys
from .flow import (
    DEFAULT_FLOW_TIMEOUT_US,
    DEFAULT_WINDOW,
    HeaderData,
    UplinkFlowEntry,
    UplinkTable,
    new_bidf,
)
from .frame import BROADCAST_MAC, MacsecFrame, is_broadcast
from .fullenc import FullEncTunnel
from .idf import IdfDownlink, UnregisteredFlow

log = logging.getLogger(__name__)


class Scheme(enum.Enum):
    NAIVE = "naive"
    IDF = "idf"
    ENC = "enc"
    FULLENC = "fullenc"

    @property
    def encap_tag(self) -> encap.EncapScheme:
        return encap.EncapScheme[self.name]


@dataclass
class GatewayConfig:
    own_id: str
    peers: list[str]
    scheme: Scheme = Scheme.IDF
    window: int = DEFAULT_WINDOW
    flow_timeout_us: int = DEFAULT_FLOW_TIMEOUT_US
    queue_limit: int = 128
    mka_buffer: int = 16
    mtu: int = encap.DEFAULT_MTU
    grace_us: int = 2_000_000
    hello_interval_us: int = 5_000_000
    # shared secret per peer for the encrypting schemes; directional
    # keys are derived from it
    pair_secrets: dict[str, bytes] = field(default_factory=dict)
    bind_flows: bool = True
    peer_filter: bool = False
    expire_propagate: bool = True

    def __post_init__(self):
        if isinstance(self.scheme, str):
            self.scheme = Scheme(self.scheme)
        if not self.peers:
            raise ValueError("a gateway needs at least one peer")
        if self.own_id in self.peers:
            raise ValueError("own id listed as peer")


@dataclass
class GatewayStats:
    frames_tunneled: int = 0
    frames_reconstructed: int = 0
    datagrams_sent: int = 0
    datagrams_received: int = 0
    bytes_lan_in: int = 0
    bytes_lan_out: int = 0
    bytes_tun_in: int = 0
    bytes_tun_out: int = 0
    mka_forwarded: int = 0
    hash_calls_uplink: int = 0
    hash_calls_downlink: int = 0
    block_ops_uplink: int = 0
    block_ops_downlink: int = 0
    ridf_collisions: int = 0
    drops: Counter = field(default_factory=Counter)
    warnings: Counter = field(default_factory=Counter)

    def dropped(self) -> int:
        return sum(self.drops.values())

    def as_dict(self) -> dict:
        out = {
            k: getattr(self, k)
            for k in (
                "frames_tunneled",
                "frames_reconstructed",
                "datagrams_sent",
                "datagrams_received",
                "bytes_lan_in",
                "bytes_lan_out",
                "bytes_tun_in",
                "bytes_tun_out",
                "mka_forwarded",
                "hash_calls_uplink",
                "hash_calls_downlink",
                "block_ops_uplink",
                "block_ops_downlink",
                "ridf_collisions",
            )
        }
        for reason, n in sorted(self.drops.items()):
            out[f"drop_{reason}"] = n
        for reason, n in sorted(self.warnings.items()):
            out[f"warn_{reason}"] = n
        return out


def _directional_key(secret: bytes, sender: str) -> bytes:
    return hashlib.sha256(secret + b"|dir|" + sender.encode()).digest()[:16]


def _default_pair_secret(a: str, b: str) -> bytes:
    # lab fallback when no secret is configured; not for production use
    lo, hi = sorted((a, b))
    return hashlib.sha256(f"msectun-lab|{lo}|{hi}".encode()).digest()


@dataclass
class _PendingFlow:
    queue: deque = field(default_factory=deque)


class GatewayEngine:
    """One tunnel gateway.

    ``send_tunnel(peer_id, datagram)`` and ``send_mgmt(peer_id, data)``
    transmit toward a peer; ``send_mgmt`` returns False when the peer
    is unreachable and the message should be retried.  ``emit_lan``
    puts a reconstructed frame onto the local network.
    """

    def __init__(
        self,
        config: GatewayConfig,
        send_tunnel: Callable[[str, bytes], None],
        send_mgmt: Callable[[str, bytes], bool],
        emit_lan: Callable[[bytes], None],
        rng: Optional[random.Random] = None,
    ):
        self.config = config
        self.send_tunnel = send_tunnel
        self.send_mgmt = send_mgmt
        self.emit_lan = emit_lan
        self.rng = rng
        self.stats = GatewayStats()

        self.uplink = UplinkTable()
        # flows peers announced to us: bidf -> (header, origin, when)
        self._downlink_registry: dict[bytes, tuple[HeaderData, str, int]] = {}
        self._pending: dict[tuple, _PendingFlow] = {}
        self._mgmt_retry: deque = deque()
        self._learned_sent: set[bytes] = set()
        self._mka_buffer: dict[str, deque] = {p: deque() for p in config.peers}
        self._last_hello = 0
        self.peer_liveness: dict[str, int] = {}

        scheme = config.scheme
        self.idf_downlink: Optional[IdfDownlink] = None
        self.enc: Optional[EncTunnel] = None
        self.fullenc: Optional[FullEncTunnel] = None
        self.send_keys: dict[str, PairKeys] = {}
        self.recv_keys: dict[str, PairKeys] = {}
        self._fullenc_recv: dict[str, FullEncTunnel] = {}
        if scheme is Scheme.IDF:
            self.idf_downlink = IdfDownlink(config.window)
            self.idf_downlink.bind_flows = config.bind_flows
        elif scheme is Scheme.ENC:
            self.enc = EncTunnel(config.window)
            self.enc.bind_flows = config.bind_flows
            for peer in config.peers:
                secret = config.pair_secrets.get(peer) or _default_pair_secret(
                    config.own_id, peer
                )
                self.send_keys[peer] = PairKeys(
                    _directional_key(secret, config.own_id), config.grace_us
                )
                self.recv_keys[peer] = PairKeys(
                    _directional_key(secret, peer), config.grace_us
                )
        elif scheme is Scheme.FULLENC:
            for peer in config.peers:
                secret = config.pair_secrets.get(peer) or _default_pair_secret(
                    config.own_id, peer
                )
                if self.fullenc is None:
                    self.fullenc = FullEncTunnel(
                        _directional_key(secret, config.own_id), config.own_id
                    )
                self._fullenc_recv[peer] = FullEncTunnel(
                    _directional_key(secret, peer), peer
                )

    # -- helpers ---------------------------------------------------------

    def _rand_bytes(self, n: int) -> bytes:
        if self.rng is None:
            return _secrets.token_bytes(n)
        return self.rng.getrandbits(8 * n).to_bytes(n, "big")

    def _drop(self, reason: str) -> None:
        self.stats.drops[reason] += 1

    def _mgmt_out(self, peer: str, msg: mgmt.MgmtMessage) -> bool:
        data = mgmt.encode_message(msg)
        if self.send_mgmt(peer, data):
            return True
        self._mgmt_retry.append((peer, data))
        return False

    # -- uplink ------------------------------------------------------------

    def on_lan_frame(self, data: bytes, now: int) -> None:
        self.stats.bytes_lan_in += len(data)
        if fr.is_mka(data):
            self._forward_mka(data)
            return
        if fr.ethertype_of(data) != fr.ETHERTYPE_MACSEC:
            self._drop("not_macsec")
            return
        try:
            frame = fr.parse_macsec(data)
        except fr.FrameError:
            self._drop("parse_error")
            return
        tci = frame.sectag.tci
        if not tci.e or tci.c:
            self._drop("unsupported_shape")
            return
        if frame.sectag.pn == 0:
            self._drop("zero_pn")
            return

        sci, an = frame.sectag.sci, tci.an
        entry = self.uplink.get(sci, an)
        if entry is None:
            entry = UplinkFlowEntry(
                sci=sci,
                an=an,
                unicast_bidf=new_bidf(self.rng),
                broadcast_bidf=new_bidf(self.rng),
                timeout=now + self.config.flow_timeout_us,
            )
            self.uplink.put(entry)
            if self.config.scheme is Scheme.ENC:
                self._rekey_all_peers(now)
        entry.timeout = now + self.config.flow_timeout_us

        broadcast = is_broadcast(frame.dst)
        if not broadcast:
            if entry.unicast_dst is None:
                entry.unicast_dst = frame.dst
            elif entry.unicast_dst != frame.dst:
                # the per-SA entry tracks one unicast destination; a
                # second one rotates the base identifier to a new flow
                self.stats.warnings["unicast_dst_change"] += 1
                for peer in self.config.peers:
                    self._mgmt_out(peer, mgmt.MgmtMessage.expire(entry.unicast_bidf))
                stale = self._pending.pop((sci, an, False), None)
                if stale is not None:
                    self.stats.drops["unregistered_queue_overflow"] += len(stale.queue)
                entry.unicast_bidf = new_bidf(self.rng)
                entry.unicast_dst = frame.dst
                entry.announced_unicast = False

        announced = entry.announced_broadcast if broadcast else entry.announced_unicast
        if not announced:
            # the frame joins the discovery queue; the announcement must
            # carry the PN of the oldest queued frame so the remote
            # window covers the whole queue once it drains
            self._enqueue_pending(entry, broadcast, data)
            header = HeaderData(
                dst=BROADCAST_MAC if broadcast else frame.dst,
                src=frame.src,
                sci=sci,
                an=an,
            )
            bidf = entry.broadcast_bidf if broadcast else entry.unicast_bidf
            first_pn = self._pending_first_pn(entry, broadcast, frame.sectag.pn)
            msg = mgmt.MgmtMessage.announce(bidf, header, first_pn)
            ok = all(self._mgmt_out(peer, msg) for peer in list(self.config.peers))
            if broadcast:
                entry.announced_broadcast = ok
            else:
                entry.announced_unicast = ok
            if not ok:
                return
            self._flush_pending(entry, broadcast, now)
            self._learn_from_uplink(frame)
            return
        self._tunnel_frame(frame, data, entry, broadcast, now)

    def _pending_first_pn(self, entry: UplinkFlowEntry, broadcast: bool, fallback: int) -> int:
        pend = self._pending.get((entry.sci, entry.an, broadcast))
        if pend and pend.queue:
            return struct.unpack_from(">I", pend.queue[0], 16)[0]
        return fallback

    def _enqueue_pending(self, entry: UplinkFlowEntry, broadcast: bool, data: bytes):
        key = (entry.sci, entry.an, broadcast)
        pend = self._pending.setdefault(key, _PendingFlow())
        pend.queue.append(data)
        while len(pend.queue) > self.config.queue_limit:
            pend.queue.popleft()
            self._drop("unregistered_queue_overflow")

    def _flush_pending(self, entry: UplinkFlowEntry, broadcast: bool, now: int):
        pend = self._pending.pop((entry.sci, entry.an, broadcast), None)
        if not pend:
            return
        for raw in pend.queue:
            try:
                frame = fr.parse_macsec(raw)
            except fr.FrameError:
                continue
            self._tunnel_frame(frame, raw, entry, broadcast, now)

    def _tunnel_frame(
        self,
        frame: MacsecFrame,
        raw: bytes,
        entry: UplinkFlowEntry,
        broadcast: bool,
        now: int,
    ) -> None:
        cfg = self.config
        if broadcast or not entry.remote_gateways:
            targets = list(cfg.peers)
        else:
            targets = [p for p in entry.remote_gateways if p in cfg.peers]

        scheme = cfg.scheme
        sent_any = False
        if scheme is Scheme.IDF:
            try:
                body = idf_mod.uplink_encode(frame, entry)
            except UnregisteredFlow:
                self._drop("unregistered_flow")
                return
            self.stats.hash_calls_uplink += 1
            sent_any = self._send_body(body, targets)
        elif scheme is Scheme.NAIVE:
            sent_any = self._send_body(raw, targets)
        elif scheme is Scheme.ENC:
            if len(raw) < 48:
                self._drop("too_short_for_scheme")
                return
            for peer in targets:
                body = self.enc.encode(raw, self.send_keys[peer].current)
                sent_any |= self._send_body(body, [peer])
        else:  # FULLENC
            for peer in targets:
                body = self.fullenc.encode(raw)
                sent_any |= self._send_body(body, [peer])
        if sent_any:
            self.stats.frames_tunneled += 1
            entry.timeout = now + cfg.flow_timeout_us

    def _send_body(self, body: bytes, targets: list[str]) -> bool:
        try:
            datagram = encap.encap(body, self.config.scheme.encap_tag, self.config.mtu)
        except encap.TooLarge:
            self._drop("too_large")
            return False
        for peer in targets:
            self.send_tunnel(peer, datagram)
            self.stats.datagrams_sent += 1
            self.stats.bytes_tun_out += len(datagram)
        return bool(targets)

    def _forward_mka(self, data: bytes) -> None:
        # bounded private buffer, not the general retry queue: stale
        # key-agreement frames are better shed than replayed en masse
        wire = mgmt.encode_message(mgmt.MgmtMessage.mka(data))
        for peer in self.config.peers:
            if not self.send_mgmt(peer, wire):
                buf = self._mka_buffer[peer]
                buf.append(data)
                while len(buf) > self.config.mka_buffer:
                    buf.popleft()
                    self._drop("mka_buffer_overflow")
        self.stats.mka_forwarded += 1

    def _rekey_all_peers(self, now: int) -> None:
        """A tunneled SA changed: rotate send-direction keys everywhere."""
        for peer in self.config.peers:
            keys = self.send_keys[peer]
            new_key = self._rand_bytes(16)
            epoch = keys.current.epoch + 1
            self._mgmt_out(peer, mgmt.MgmtMessage.rekey(epoch, new_key))
            keys.rotate(new_key, epoch, now)

    def _learn_from_uplink(self, frame: MacsecFrame) -> None:
        """Reverse traffic for an announced flow: tell the announcer."""
        for bidf, (header, origin, _) in self._downlink_registry.items():
            if bidf in self._learned_sent:
                continue
            if header.dst == frame.src and header.src == frame.dst:
                self._learned_sent.add(bidf)
                self._mgmt_out(origin, mgmt.MgmtMessage.learned(bidf))

    # -- downlink ------------------------------------------------------------

    def on_tunnel_datagram(self, data: bytes, from_peer: str, now: int) -> None:
        self.stats.datagrams_received += 1
        self.stats.bytes_tun_in += len(data)
        if self.config.peer_filter and from_peer not in self.config.peers:
            self._drop("peer_filtered")
            return
        try:
            scheme_tag, body = encap.decap(data)
        except encap.EncapError:
            self._drop("decap_error")
            return
        if scheme_tag is not self.config.scheme.encap_tag:
            self._drop("scheme_mismatch")
            return

        scheme = self.config.scheme
        if scheme is Scheme.NAIVE:
            if len(body) < fr.MIN_FRAME_LEN:
                self._drop("malformed")
                return
            result_frame = body
            flow = None
        elif scheme is Scheme.IDF:
            res = self.idf_downlink.decode(body)
            if not res.ok:
                self._drop(res.reason)
                return
            result_frame, flow = res.frame, res.flow
        elif scheme is Scheme.ENC:
            keys = self.recv_keys.get(from_peer)
            if keys is None:
                self._drop("unknown_peer")
                return
            res = self.enc.decode(body, keys, now)
            if not res.ok:
                self._drop(res.reason)
                return
            result_frame, flow = res.frame, res.flow
        else:  # FULLENC
            recv = self._fullenc_recv.get(from_peer)
            if recv is None:
                self._drop("unknown_peer")
                return
            res = recv.decode(body)
            if not res.ok:
                self._drop(res.reason)
                return
            result_frame, flow = res.frame, res.flow

        if flow is not None:
            flow.last_seen = now
        self.stats.frames_reconstructed += 1
        self.stats.bytes_lan_out += len(result_frame)
        self.emit_lan(result_frame)

    # -- management ------------------------------------------------------------

    def on_mgmt_bytes(self, data: bytes, from_peer: str, now: int) -> None:
        try:
            msg = mgmt.decode_message(data)
        except mgmt.MgmtError:
            self._drop("mgmt_malformed")
            return
        self.on_mgmt_message(msg, from_peer, now)

    def on_mgmt_message(self, msg: mgmt.MgmtMessage, from_peer: str, now: int) -> None:
        kind = msg.kind
        if kind is mgmt.MgmtKind.FLOW_ANNOUNCE:
            self._handle_announce(msg, from_peer, now)
        elif kind is mgmt.MgmtKind.FLOW_LEARNED:
            self._handle_learned(msg.bidf, from_peer)
        elif kind is mgmt.MgmtKind.FLOW_EXPIRE:
            self._remove_downlink(msg.bidf)
        elif kind is mgmt.MgmtKind.REKEY:
            keys = self.recv_keys.get(from_peer)
            if keys is not None:
                keys.rotate(msg.key, msg.epoch, now)
        elif kind is mgmt.MgmtKind.MKA_FORWARD:
            self.stats.bytes_lan_out += len(msg.frame)
            self.emit_lan(msg.frame)
        elif kind is mgmt.MgmtKind.HELLO:
            self.peer_liveness[from_peer] = now

    def _handle_announce(self, msg: mgmt.MgmtMessage, from_peer: str, now: int) -> None:
        self._downlink_registry[msg.bidf] = (msg.header, from_peer, now)
        if self.idf_downlink is not None:
            self.idf_downlink.register(msg.bidf, msg.header, msg.pn, from_peer)
        elif self.enc is not None:
            self.enc.register(msg.bidf, msg.header, msg.pn, from_peer)
        # announce may arrive after we already carry the reverse flow
        if msg.bidf not in self._learned_sent:
            for entry in self.uplink.entries():
                if (
                    entry.unicast_dst == msg.header.src
                    and entry.sci.system_id == msg.header.dst
                ):
                    self._learned_sent.add(msg.bidf)
                    self._mgmt_out(from_peer, mgmt.MgmtMessage.learned(msg.bidf))
                    break

    def _handle_learned(self, bidf: bytes, from_peer: str) -> None:
        for entry in self.uplink.entries():
            if entry.unicast_bidf == bidf:
                if entry.remote_gateways and entry.remote_gateways != {from_peer}:
                    self.stats.warnings["learned_conflict"] += 1
                    log.warning(
                        "flow claimed by %s and %s; keeping the newer claim",
                        entry.remote_gateways,
                        from_peer,
                    )
                entry.remote_gateways = {from_peer}
                return

    def _remove_downlink(self, bidf: bytes) -> None:
        self._downlink_registry.pop(bidf, None)
        if self.idf_downlink is not None:
            self.idf_downlink.remove(bidf)
        elif self.enc is not None:
            self.enc.remove(bidf)

    # -- timers ------------------------------------------------------------

    def on_timer(self, now: int) -> None:
        for entry in self.uplink.expire(now):
            if self.config.expire_propagate:
                for peer in self.config.peers:
                    if entry.announced_unicast:
                        self._mgmt_out(peer, mgmt.MgmtMessage.expire(entry.unicast_bidf))
                    if entry.announced_broadcast:
                        self._mgmt_out(
                            peer, mgmt.MgmtMessage.expire(entry.broadcast_bidf)
                        )
        if now - self._last_hello >= self.config.hello_interval_us:
            self._last_hello = now
            for peer in self.config.peers:
                self._mgmt_out(peer, mgmt.MgmtMessage.hello())
        # retry transport-refused management messages, oldest first
        for _ in range(len(self._mgmt_retry)):
            peer, data = self._mgmt_retry.popleft()
            if not self.send_mgmt(peer, data):
                self._mgmt_retry.append((peer, data))
                break
        for peer, buf in self._mka_buffer.items():
            while buf:
                if self.send_mgmt(peer, mgmt.encode_message(mgmt.MgmtMessage.mka(buf[0]))):
                    buf.popleft()
                else:
                    break

    # -- stats ------------------------------------------------------------

    def snapshot_stats(self) -> GatewayStats:
        s = self.stats
        snap = GatewayStats(
            frames_tunneled=s.frames_tunneled,
            frames_reconstructed=s.frames_reconstructed,
            datagrams_sent=s.datagrams_sent,
            datagrams_received=s.datagrams_received,
            bytes_lan_in=s.bytes_lan_in,
            bytes_lan_out=s.bytes_lan_out,
            bytes_tun_in=s.bytes_tun_in,
            bytes_tun_out=s.bytes_tun_out,
            mka_forwarded=s.mka_forwarded,
            hash_calls_uplink=s.hash_calls_uplink,
            drops=Counter(s.drops),
            warnings=Counter(s.warnings),
        )
        if self.idf_downlink is not None:
            snap.hash_calls_downlink = self.idf_downlink.hash_calls
            snap.ridf_collisions = self.idf_downlink.ridf_collisions
        if self.enc is not None:
            snap.block_ops_uplink = self.enc.block_ops_uplink
            snap.block_ops_downlink = self.enc.block_ops_downlink
        if self.fullenc is not None:
            snap.block_ops_uplink = self.fullenc.block_ops_uplink
            snap.block_ops_downlink = sum(
                t.block_ops_downlink for t in self._fullenc_recv.values()
            )
        return snap
