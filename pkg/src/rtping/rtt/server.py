"""Echo side of the ping-pong test."""

from __future__ import annotations

import gc
import heapq
import logging
import select
import threading
from dataclasses import dataclass, field

from .. import timing
from ..tuning.model import RtSchedParams
from ..tuning.sched import enter_rt
from .protocol import MAX_PAYLOAD_SIZE, peek_sequence
from .sockets import SocketConfig, open_socket

log = logging.getLogger(__name__)


@dataclass
class ServerStats:
    received: int = 0
    echoed: int = 0
    decode_errors: int = 0
    send_errors: int = 0
    dropped: int = 0
    delayed: int = 0

    def to_dict(self) -> dict:
        return dict(vars(self))


@dataclass
class FaultPlan:
    """Deterministic misbehaviour for testing the client's accounting.

    ``delays`` holds an extra echo delay in ns per sequence, ``drops`` the
    sequences never echoed, ``duplicates`` the sequences echoed twice.
    Delayed echoes are queued; other probes keep being echoed on time.
    """

    delays: dict[int, int] = field(default_factory=dict)
    drops: set[int] = field(default_factory=set)
    duplicates: set[int] = field(default_factory=set)


class EchoServer:
    def __init__(self, cfg: SocketConfig, fault: FaultPlan | None = None):
        self.cfg = cfg
        self.fault = fault
        self.stats = ServerStats()
        self.sock = open_socket(cfg)
        self._pending: list[tuple[int, int, bytes, tuple]] = []  # (due, tiebreak, data, addr)
        self._tiebreak = 0

    @property
    def address(self) -> tuple[str, int]:
        return self.sock.getsockname()[:2]

    def close(self) -> None:
        self.sock.close()

    def _send(self, data, addr) -> None:
        try:
            self.sock.sendto(data, addr)
            self.stats.echoed += 1
        except OSError as exc:
            self.stats.send_errors += 1
            log.debug("echo to %s failed: %s", addr, exc)

    def _flush_due(self) -> None:
        now = timing.now()
        while self._pending and self._pending[0][0] <= now:
            _, _, data, addr = heapq.heappop(self._pending)
            self._send(data, addr)

    def handle(self, data, addr) -> None:
        """Process one datagram: echo valid probes, count everything else."""
        self.stats.received += 1
        seq = peek_sequence(data, len(data))
        if seq is None:
            self.stats.decode_errors += 1
            return
        fault = self.fault
        if fault is not None:
            if seq in fault.drops:
                self.stats.dropped += 1
                return
            delay = fault.delays.get(seq)
            if delay:
                self.stats.delayed += 1
                self._tiebreak += 1
                heapq.heappush(self._pending, (timing.now() + delay, self._tiebreak, bytes(data), addr))
                return
            if seq in fault.duplicates:
                self._send(data, addr)
        self._send(data, addr)

    def serve(self, stop: threading.Event | None = None) -> ServerStats:
        stop = stop or threading.Event()
        buf = bytearray(MAX_PAYLOAD_SIZE)
        view = memoryview(buf)
        sock = self.sock
        poll_s = self.cfg.receive_timeout
        gc_enabled = gc.isenabled()
        gc.disable()
        try:
            self._loop(stop, sock, buf, view, poll_s)
        finally:
            if gc_enabled:
                gc.enable()
        return self.stats

    def _loop(self, stop, sock, buf, view, poll_s) -> None:
        while not stop.is_set():
            timeout = poll_s
            if self._pending:
                timeout = max(0.0, min(poll_s, (self._pending[0][0] - timing.now()) / timing.NSEC_PER_SEC))
            readable, _, _ = select.select([sock], [], [], timeout)
            if readable:
                try:
                    n, addr = sock.recvfrom_into(buf)
                except OSError as exc:
                    log.debug("recv failed: %s", exc)
                    continue
                self.handle(view[:n], addr)
            if self._pending:
                self._flush_due()


def run_server(cfg: SocketConfig, rt: RtSchedParams | None = None, stop: threading.Event | None = None,
               fault: FaultPlan | None = None, cpus=None, ready=None) -> ServerStats:
    """Bind, optionally enter RT scheduling, and echo until ``stop`` is set.

    ``ready`` (if given) is called with the bound address once the socket is up.
    """
    server = EchoServer(cfg, fault)
    state = None
    try:
        state = enter_rt(rt, cpus)
        if ready is not None:
            ready(server.address)
        return server.serve(stop)
    finally:
        if state is not None:
            state.restore()
        server.close()
