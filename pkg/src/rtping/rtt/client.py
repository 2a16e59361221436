"""Measuring side of the ping-pong test.

Each cycle the client wakes at its absolute target, stamps T1, sends probe
``n`` and then collects replies until shortly before the next target. Sample
storage is preallocated for the whole run; the loop only writes into it.
"""

from __future__ import annotations

import errno
import gc
import logging
import select
import socket
import threading
from dataclasses import dataclass, field

import numpy as np

from .. import timing
from ..stats import RoundTripSample, SampleStatus, SummaryAccumulator
from ..timing import CycleEngine, CycleSpec
from ..tuning.model import RtSchedParams
from ..tuning.sched import enter_rt
from .protocol import DEFAULT_PAYLOAD_SIZE, MAX_PAYLOAD_SIZE, check_payload_size, encode_into, peek_sequence
from .sockets import SocketConfig, open_socket

log = logging.getLogger(__name__)

DEFAULT_LOSS_HORIZON = 4

# outcomes of SampleBook.match
COMPLETED = "completed"
LATE = "late"
RECLASSIFIED = "reclassified"
DUPLICATE = "duplicate"
STALE = "stale"

_PENDING = int(SampleStatus.PENDING)
_OK = int(SampleStatus.OK)
_LOST = int(SampleStatus.LOST)
_LATE = int(SampleStatus.LATE_ARRIVAL)


class SampleBook:
    """Per-sequence sample storage and reply matching.

    ``loss_horizon`` is in cycles: a probe still unanswered when the cycle
    ``seq + loss_horizon`` starts is marked lost. A reply for a lost probe is
    reclassified as a late arrival if it is younger than ``retention`` cycles,
    otherwise counted as stale.
    """

    def __init__(self, capacity: int, loss_horizon: int = DEFAULT_LOSS_HORIZON, retention: int | None = None):
        if loss_horizon < 1:
            raise ValueError("loss horizon must be at least one period")
        self.capacity = capacity
        self.loss_horizon = loss_horizon
        self.retention = loss_horizon if retention is None else retention
        if self.retention < loss_horizon:
            raise ValueError("retention must be >= loss horizon")
        self.t_send = np.zeros(capacity, dtype=np.int64)
        self.t_recv = np.zeros(capacity, dtype=np.int64)
        self.status = np.zeros(capacity, dtype=np.uint8)
        self.overrun = np.zeros(capacity, dtype=np.bool_)
        self.sent = 0
        self.cycle = 0
        self.outstanding = 0
        self.lost = 0
        self.duplicates = 0
        self.stale_replies = 0
        self._oldest = 0  # no pending sample below this index

    def mark_sent(self, seq: int, t_send: int, overrun: bool = False) -> None:
        self.t_send[seq] = t_send
        self.overrun[seq] = overrun
        self.status[seq] = _PENDING
        self.sent = seq + 1
        self.outstanding += 1

    def expire(self, cycle: int) -> None:
        """Mark every probe older than the loss horizon at ``cycle`` as lost."""
        self.cycle = cycle
        limit = min(cycle - self.loss_horizon + 1, self.sent)
        status = self.status
        i = self._oldest
        while i < limit:
            if status[i] == _PENDING:
                status[i] = _LOST
                self.outstanding -= 1
                self.lost += 1
            i += 1
        if i > self._oldest:
            self._oldest = i

    def finish(self) -> None:
        self.expire(self.sent - 1 + self.loss_horizon)

    def match(self, seq: int, t_recv: int) -> str:
        if seq >= self.sent:
            self.stale_replies += 1
            return STALE
        st = self.status[seq]
        if st == _OK or st == _LATE:
            self.duplicates += 1
            return DUPLICATE
        if st == _PENDING:
            self.t_recv[seq] = t_recv
            self.outstanding -= 1
            if seq == self.sent - 1:
                self.status[seq] = _OK
                return COMPLETED
            self.status[seq] = _LATE
            return LATE
        # lost
        if self.cycle - seq < self.retention:
            self.status[seq] = _LATE
            self.t_recv[seq] = t_recv
            self.lost -= 1
            return RECLASSIFIED
        self.stale_replies += 1
        return STALE

    def sample(self, seq: int) -> RoundTripSample:
        st = SampleStatus(int(self.status[seq]))
        t_recv = int(self.t_recv[seq]) if st.received else None
        return RoundTripSample(seq, int(self.t_send[seq]), t_recv, st, bool(self.overrun[seq]))

    def samples(self, start: int = 0):
        for seq in range(start, self.sent):
            yield self.sample(seq)

    def storage_signature(self) -> tuple:
        """Identity and size of the backing arrays; unchanged for the whole run."""
        arrays = (self.t_send, self.t_recv, self.status, self.overrun)
        return tuple((a.ctypes.data, a.size) for a in arrays)


@dataclass
class ClientRun:
    spec: CycleSpec
    payload_size: int
    book: SampleBook
    t0: int
    started_ns: int
    finished_ns: int
    send_errors: int = 0
    decode_errors: int = 0
    send_overruns: int = 0
    max_wake_latency_ns: int = 0
    stopped_early: bool = False
    extra: dict = field(default_factory=dict)

    def accumulate(self, bin_width: int | None = None, keep_timeseries: bool = True) -> SummaryAccumulator:
        kw = {} if bin_width is None else {"bin_width": bin_width}
        acc = SummaryAccumulator(self.spec.deadline, keep_timeseries=keep_timeseries, **kw)
        for sample in self.book.samples(self.spec.warmup_cycles):
            acc.record(sample)
        acc.summary.duplicates = self.book.duplicates
        acc.summary.stale_replies = self.book.stale_replies
        return acc


class RttClient:
    def __init__(self, cfg: SocketConfig, spec: CycleSpec, payload_size: int = DEFAULT_PAYLOAD_SIZE,
                 loss_horizon: int = DEFAULT_LOSS_HORIZON, retention: int | None = None,
                 guard_ns: int | None = None, sock: socket.socket | None = None):
        if cfg.peer is None:
            raise ValueError("client needs a peer endpoint")
        self.cfg = cfg
        self.spec = spec
        self.payload_size = check_payload_size(payload_size)
        self.book = SampleBook(spec.cycles, loss_horizon, retention)
        # stop polling this long before the next target, then sleep on the absolute clock
        self.guard_ns = min(spec.period // 10, 100_000) if guard_ns is None else guard_ns
        self.sock = sock if sock is not None else open_socket(cfg)
        self.sock.setblocking(False)
        self.peer = socket.getaddrinfo(cfg.peer[0], cfg.peer[1], self.sock.family, socket.SOCK_DGRAM)[0][4]
        self._send_buf = bytearray(self.payload_size)
        self._recv_buf = bytearray(max(MAX_PAYLOAD_SIZE, self.payload_size))
        self.send_errors = 0
        self.decode_errors = 0

    def close(self) -> None:
        self.sock.close()

    def _drain(self) -> None:
        sock = self.sock
        buf = self._recv_buf
        book = self.book
        now = timing.now
        while True:
            try:
                n = sock.recv_into(buf)
            except BlockingIOError:
                return
            except OSError as exc:
                # ICMP errors (peer down) surface here; the probe just stays pending
                if exc.errno not in (errno.ECONNREFUSED, errno.EHOSTUNREACH, errno.ENETUNREACH):
                    log.debug("recv failed: %s", exc)
                continue
            t_recv = now()
            seq = peek_sequence(buf, n)
            if seq is None or n != self.payload_size:
                self.decode_errors += 1
                continue
            book.match(seq, t_recv)

    def _wait(self, until: int) -> None:
        """Collect replies until ``until`` or until nothing is outstanding."""
        sock = self.sock
        book = self.book
        while True:
            self._drain()
            if book.outstanding == 0:
                return
            remaining = until - timing.now()
            if remaining <= 0:
                return
            select.select([sock], [], [], remaining / timing.NSEC_PER_SEC)

    def run(self, stop: threading.Event | None = None, engine: CycleEngine | None = None) -> ClientRun:
        spec = self.spec
        book = self.book
        sock = self.sock
        peer = self.peer
        send_buf = self._send_buf
        engine = engine or CycleEngine(spec)
        period = spec.period
        last = spec.cycles - 1
        guard = self.guard_ns
        now = timing.now
        started = now()
        stopped = False

        gc_enabled = gc.isenabled()
        gc.disable()
        try:
            for n, target, _wake, overrun in engine:
                if stop is not None and stop.is_set():
                    stopped = True
                    break
                # replies already queued must be matched before anything is declared lost
                self._drain()
                book.expire(n)
                t_send = now()
                encode_into(send_buf, n, t_send)
                book.mark_sent(n, t_send, overrun)
                try:
                    sock.sendto(send_buf, peer)
                except OSError:
                    self.send_errors += 1
                if n < last:
                    self._wait(target + period - guard)
            # grace period for the tail, then anything still pending is lost
            if book.sent:
                tail_end = engine.target(book.sent - 1) + book.loss_horizon * period
                self._wait(tail_end)
                while book.outstanding and now() < tail_end:
                    self._wait(tail_end)
                self._drain()
            book.finish()
        finally:
            if gc_enabled:
                gc.enable()
        return ClientRun(spec, self.payload_size, book, engine.t0, started, now(),
                         self.send_errors, self.decode_errors, engine.overruns,
                         engine.max_wake_latency, stopped)


def measure(cfg: SocketConfig, spec: CycleSpec, rt: RtSchedParams | None = None, *,
            payload_size: int = DEFAULT_PAYLOAD_SIZE, loss_horizon: int = DEFAULT_LOSS_HORIZON,
            retention: int | None = None, stop: threading.Event | None = None, cpus=None) -> ClientRun:
    """Enter RT scheduling (if requested), run the cycle loop, restore scheduling."""
    client = RttClient(cfg, spec, payload_size, loss_horizon, retention)
    try:
        state = enter_rt(rt, cpus)
        try:
            return client.run(stop)
        finally:
            state.restore()
    finally:
        client.close()


__all__ = ["ClientRun", "RttClient", "SampleBook", "measure"]
