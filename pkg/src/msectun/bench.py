"""Benchmark driver: per-scheme throughput, latency and size accounting.

Drives a pair of gateway engines over a loopback transport (direct
in-process calls, or real UDP sockets via --mode udp) and sweeps frame
sizes.  Latency is measured in-process from LAN ingress at the sending
gateway to LAN egress at the receiving one; frame generation happens
outside the timed section and is identical for every scheme.

Absolute numbers are hardware- and runtime-bound; the quantity of
interest is the relative ordering of the schemes and their exact
per-frame overheads and crypto-operation counts.
"""

from __future__ import annotations

import random
import time
from dataclasses import dataclass

from .frame import PlainFrame, Sci, build_macsec, endpoint_protect
from .gateway import GatewayConfig, GatewayEngine, Scheme

MIN_FRAME_SIZE = 64  # smallest sweepable LAN frame (payload 18)


@dataclass
class BenchResult:
    scheme: str
    frame_size: int
    frames: int
    seconds: float
    frames_per_sec: float
    mbit_per_sec: float
    wire_size: int
    overhead_bytes: int
    hash_per_frame: float
    blocks_per_frame: float
    p50_us: float
    p99_us: float

    CSV_COLUMNS = (
        "scheme,frame_size,frames,seconds,frames_per_sec,mbit_per_sec,"
        "wire_size,overhead_bytes,hash_per_frame,blocks_per_frame,p50_us,p99_us"
    )

    def csv_row(self) -> str:
        return (
            f"{self.scheme},{self.frame_size},{self.frames},{self.seconds:.3f},"
            f"{self.frames_per_sec:.1f},{self.mbit_per_sec:.3f},{self.wire_size},"
            f"{self.overhead_bytes},{self.hash_per_frame:.2f},"
            f"{self.blocks_per_frame:.2f},{self.p50_us:.1f},{self.p99_us:.1f}"
        )


def results_csv(results: list[BenchResult]) -> str:
    lines = [BenchResult.CSV_COLUMNS]
    lines += [r.csv_row() for r in results]
    return "\n".join(lines) + "\n"


class _InprocPair:
    """Two engines wired back to back with synchronous delivery."""

    def __init__(self, scheme: Scheme, window: int = 64):
        self.emitted: list[bytes] = []
        self.last_wire = 0
        gws: dict[str, GatewayEngine] = {}

        def mk(own: str, peer: str, sink):
            def send_tunnel(p, dg):
                self.last_wire = len(dg)
                gws[p].on_tunnel_datagram(dg, own, now=self._now())

            def send_mgmt(p, data):
                gws[p].on_mgmt_bytes(data, own, now=self._now())
                return True

            cfg = GatewayConfig(own_id=own, peers=[peer], scheme=scheme, window=window)
            return GatewayEngine(cfg, send_tunnel, send_mgmt, sink, rng=random.Random(1))

        gws["A"] = mk("A", "B", lambda f: None)
        gws["B"] = mk("B", "A", self.emitted.append)
        self.a = gws["A"]
        self.b = gws["B"]

    @staticmethod
    def _now() -> int:
        return time.monotonic_ns() // 1000


def _protect_series(sci: Sci, dst: bytes, key: bytes, frame_size: int, start_pn: int, n: int):
    payload_len = frame_size - 46
    if payload_len < 4:
        raise ValueError(f"frame size {frame_size} too small (min {MIN_FRAME_SIZE})")
    payload = bytes(payload_len)
    out = []
    for pn in range(start_pn, start_pn + n):
        f = endpoint_protect(
            PlainFrame(dst=dst, src=sci.system_id, ethertype=0x0800, payload=payload),
            key,
            sci,
            an=0,
            pn=pn,
        )
        out.append(build_macsec(f))
    return out


def run_bench_cell(scheme: Scheme, frame_size: int, seconds: float, window: int = 64) -> BenchResult:
    """One (scheme, size) measurement over a fresh gateway pair."""
    pair = _InprocPair(scheme, window)
    key = bytes(range(16))
    sci = Sci(b"\x02\x00\x00\x00\x00\x0a", 1)
    dst = b"\x02\x00\x00\x00\x00\x0b"

    # warm up: establish the flow, learn the peer, fill the window
    warm = _protect_series(sci, dst, key, frame_size, 1, 8)
    for raw in warm:
        pair.a.on_lan_frame(raw, now=0)
    a0 = pair.a.snapshot_stats()
    b0 = pair.b.snapshot_stats()
    delivered0 = len(pair.emitted)

    pn = 9
    latencies: list[int] = []
    frames = 0
    batch = 64
    t_start = time.perf_counter()
    deadline = t_start + seconds
    while time.perf_counter() < deadline:
        series = _protect_series(sci, dst, key, frame_size, pn, batch)
        pn += batch
        for raw in series:
            t0 = time.perf_counter_ns()
            pair.a.on_lan_frame(raw, now=t0 // 1000)
            latencies.append(time.perf_counter_ns() - t0)
            frames += 1
            if time.perf_counter() > deadline:
                break
    elapsed = time.perf_counter() - t_start

    assert len(pair.emitted) - delivered0 == frames, "frames lost in bench loop"
    a1 = pair.a.snapshot_stats()
    b1 = pair.b.snapshot_stats()
    hash_ops = (
        a1.hash_calls_uplink
        - a0.hash_calls_uplink
        + b1.hash_calls_downlink
        - b0.hash_calls_downlink
    )
    block_ops = (
        a1.block_ops_uplink
        - a0.block_ops_uplink
        + b1.block_ops_downlink
        - b0.block_ops_downlink
    )
    latencies.sort()
    p50 = latencies[len(latencies) // 2] / 1000
    p99 = latencies[min(len(latencies) - 1, int(len(latencies) * 0.99))] / 1000
    fps = frames / elapsed
    return BenchResult(
        scheme=scheme.value,
        frame_size=frame_size,
        frames=frames,
        seconds=elapsed,
        frames_per_sec=fps,
        mbit_per_sec=fps * pair.last_wire * 8 / 1e6,
        wire_size=pair.last_wire,
        overhead_bytes=pair.last_wire - frame_size,
        hash_per_frame=hash_ops / frames if frames else 0.0,
        blocks_per_frame=block_ops / frames if frames else 0.0,
        p50_us=p50,
        p99_us=p99,
    )


def run_bench(
    schemes: list[Scheme],
    sizes: list[int],
    seconds: float,
    window: int = 64,
) -> list[BenchResult]:
    """Sweep schemes x sizes; ``seconds`` is the budget per size row,
    split evenly across the schemes.  Zero duration gives no results."""
    results = []
    if seconds <= 0:
        return results
    per_cell = seconds / len(schemes)
    for size in sizes:
        for scheme in schemes:
            results.append(run_bench_cell(scheme, size, per_cell, window))
    return results
