"""Token-bucket paced best-effort UDP traffic and a byte-counting sink."""

from __future__ import annotations

import errno
import select
import socket
import threading
from dataclasses import dataclass, field
from typing import Callable

from .. import timing
from ..rtt.sockets import SocketConfig, open_socket, parse_endpoint

NS = timing.NSEC_PER_SEC
DEFAULT_BANDWIDTH = 100_000_000
DEFAULT_TRAFFIC_PAYLOAD = 1470
DEFAULT_SINK_PORT = 5001
MAX_UDP_PAYLOAD = 65_507
DEFAULT_BURST_NS = 10_000_000


@dataclass(frozen=True)
class TrafficSpec:
    destination: tuple[str, int] | None = None
    target_bandwidth: int = DEFAULT_BANDWIDTH  # bits/s of UDP payload
    payload_size: int = DEFAULT_TRAFFIC_PAYLOAD
    duration: float | None = None
    priority_mark: int = 0

    def __post_init__(self):
        if self.target_bandwidth <= 0:
            raise ValueError(f"target bandwidth must be > 0, got {self.target_bandwidth}")
        if not 1 <= self.payload_size <= MAX_UDP_PAYLOAD:
            raise ValueError(f"payload size must be in 1..{MAX_UDP_PAYLOAD}, got {self.payload_size}")
        if not 0 <= self.priority_mark <= 15:
            raise ValueError(f"priority mark must be in 0..15, got {self.priority_mark}")
        if self.duration is not None and self.duration <= 0:
            raise ValueError("duration must be positive")

    @property
    def inter_packet_gap(self) -> float:
        """Seconds between packets at the target rate."""
        return self.payload_size * 8 / self.target_bandwidth

    def to_dict(self) -> dict:
        return {
            "destination": f"{self.destination[0]}:{self.destination[1]}" if self.destination else None,
            "target_bandwidth": self.target_bandwidth,
            "payload_size": self.payload_size,
            "duration": self.duration,
            "priority_mark": self.priority_mark,
        }

    @classmethod
    def from_dict(cls, d: dict) -> TrafficSpec:
        dest = d.get("destination")
        if isinstance(dest, str):
            dest = parse_endpoint(dest, DEFAULT_SINK_PORT)
        elif dest is not None:
            dest = (dest[0], int(dest[1]))
        return cls(dest, int(d.get("target_bandwidth", DEFAULT_BANDWIDTH)),
                   int(d.get("payload_size", DEFAULT_TRAFFIC_PAYLOAD)), d.get("duration"),
                   int(d.get("priority_mark", 0)))


class TokenBucket:
    """Byte-denominated token bucket on integer nanoseconds.

    ``rate`` is bytes per second; ``capacity`` caps accumulated credit. The
    bucket starts full.
    """

    def __init__(self, rate: float, capacity: int, t0: int):
        if rate <= 0 or capacity <= 0:
            raise ValueError("rate and capacity must be positive")
        self.rate = rate
        self.capacity = capacity
        self.tokens = float(capacity)
        self.stamp = t0

    def refill(self, t: int) -> None:
        if t > self.stamp:
            self.tokens = min(self.capacity, self.tokens + (t - self.stamp) * self.rate / NS)
            self.stamp = t

    def try_consume(self, n: int, t: int) -> bool:
        self.refill(t)
        if self.tokens >= n:
            self.tokens -= n
            return True
        return False

    def time_until(self, n: int, t: int) -> int:
        """Nanoseconds from ``t`` until ``n`` tokens are available."""
        self.refill(t)
        deficit = n - self.tokens
        if deficit <= 0:
            return 0
        return int(deficit * NS / self.rate) + 1


@dataclass
class TrafficReport:
    spec: TrafficSpec
    bytes_sent: int
    packets_sent: int
    elapsed: float
    send_errors: int = 0
    buffer_stalls: int = 0

    @property
    def achieved_bps(self) -> float:
        return self.bytes_sent * 8 / self.elapsed if self.elapsed > 0 else 0.0

    def format(self) -> str:
        return (f"sent {self.packets_sent} packets / {self.bytes_sent} bytes in {self.elapsed:.3f}s: "
                f"{self.achieved_bps / 1e6:.3f} Mbit/s (target {self.spec.target_bandwidth / 1e6:.3f}), "
                f"{self.buffer_stalls} buffer stalls, {self.send_errors} errors")


def run_traffic(spec: TrafficSpec, stop: threading.Event | None = None, burst_ns: int = DEFAULT_BURST_NS,
                clock: Callable[[], int] = timing.now,
                sleeper: Callable[[int], int] = timing.sleep_until) -> TrafficReport:
    """Send paced UDP datagrams to ``spec.destination`` until duration or ``stop``."""
    if spec.destination is None:
        raise ValueError("traffic needs a destination")
    if spec.duration is None and stop is None:
        raise ValueError("open-ended traffic needs a stop event")
    sock = open_socket(SocketConfig(peer=spec.destination, priority_mark=spec.priority_mark))
    dest = socket.getaddrinfo(spec.destination[0], spec.destination[1], sock.family, socket.SOCK_DGRAM)[0][4]
    rate = spec.target_bandwidth / 8
    size = spec.payload_size
    capacity = max(size, int(rate * burst_ns / NS))
    payload = bytes(size)
    start = clock()
    end = start + int(spec.duration * NS) if spec.duration is not None else None
    bucket = TokenBucket(rate, capacity, start)
    sent = packets = errors = stalls = 0
    try:
        while True:
            t = clock()
            if (end is not None and t >= end) or (stop is not None and stop.is_set()):
                break
            wait = bucket.time_until(size, t)
            if wait:
                target = t + wait
                if end is not None:
                    target = min(target, end)
                sleeper(target)
                continue
            try:
                sock.sendto(payload, dest)
            except OSError as exc:
                if exc.errno in (errno.ENOBUFS, errno.EAGAIN):
                    # let the qdisc drain; the skipped credit is not replayed
                    stalls += 1
                    select.select([], [sock], [], 0.001)
                    bucket.refill(clock())
                    continue
                errors += 1
                if errors > 1000 and packets == 0:
                    raise
            bucket.tokens -= size
            sent += size
            packets += 1
    finally:
        sock.close()
    elapsed = (clock() - start) / NS
    return TrafficReport(spec, sent, packets, elapsed, errors, stalls)


@dataclass
class SinkReport:
    bytes_received: int = 0
    packets_received: int = 0
    window: float = 1.0
    window_bytes: list[int] = field(default_factory=list)  # per window, starting at the first packet
    first_ns: int | None = None
    last_ns: int | None = None

    def window_rates(self, complete_only: bool = True) -> list[float]:
        """Bits/s per window.

        With ``complete_only`` only the windows the stream actually spanned are
        kept (span rounded to whole windows), which drops a trailing window
        opened by a straggler packet.
        """
        rates = [b * 8 / self.window for b in self.window_bytes]
        if complete_only and self.last_ns is not None and self.first_ns is not None:
            spanned = round((self.last_ns - self.first_ns) / (self.window * NS))
            rates = rates[:spanned]
        return rates

    def format(self) -> str:
        rates = ", ".join(f"{r / 1e6:.2f}" for r in self.window_rates(False))
        return (f"received {self.packets_received} packets / {self.bytes_received} bytes; "
                f"Mbit/s per {self.window:g}s window: [{rates}]")


class UdpSink:
    """Counts received payload bytes into fixed windows anchored at the first packet."""

    def __init__(self, local: tuple[str, int] = ("0.0.0.0", DEFAULT_SINK_PORT), window: float = 1.0,
                 rcvbuf: int = 4 << 20):
        self.sock = socket.socket(socket.AF_INET6 if ":" in local[0] else socket.AF_INET, socket.SOCK_DGRAM)
        try:
            self.sock.setsockopt(socket.SOL_SOCKET, socket.SO_RCVBUF, rcvbuf)
        except OSError:
            pass
        self.sock.bind(local)
        self.report = SinkReport(window=window)

    @property
    def address(self) -> tuple[str, int]:
        return self.sock.getsockname()[:2]

    def serve(self, stop: threading.Event, duration: float | None = None, idle_timeout: float = 0.2) -> SinkReport:
        rep = self.report
        buf = bytearray(MAX_UDP_PAYLOAD)
        window_ns = int(rep.window * NS)
        deadline = timing.now() + int(duration * NS) if duration else None
        sock = self.sock
        while not stop.is_set():
            if deadline is not None and timing.now() >= deadline:
                break
            readable, _, _ = select.select([sock], [], [], idle_timeout)
            if not readable:
                continue
            n = sock.recv_into(buf)
            t = timing.now()
            if rep.first_ns is None:
                rep.first_ns = t
            w = (t - rep.first_ns) // window_ns
            while len(rep.window_bytes) <= w:
                rep.window_bytes.append(0)
            rep.window_bytes[w] += n
            rep.bytes_received += n
            rep.packets_received += 1
            rep.last_ns = t
        return rep

    def close(self) -> None:
        self.sock.close()


def run_sink(local: tuple[str, int], duration: float | None = None, stop: threading.Event | None = None,
             window: float = 1.0, ready=None) -> SinkReport:
    sink = UdpSink(local, window)
    try:
        if ready is not None:
            ready(sink.address)
        return sink.serve(stop or threading.Event(), duration)
    finally:
        sink.close()
