import socket
import threading

import pytest

from rtping.rtt.client import (
    COMPLETED,
    DUPLICATE,
    LATE,
    RECLASSIFIED,
    STALE,
    RttClient,
    SampleBook,
    measure,
)
from rtping.rtt.peer import EchoProcess
from rtping.rtt.protocol import ProbePacket, encode_probe
from rtping.rtt.server import EchoServer, FaultPlan
from rtping.rtt.sockets import SocketConfig, open_socket, parse_endpoint
from rtping.stats import SampleStatus
from rtping.timing import CycleSpec


class TestSampleBook:
    def book(self, n=20, horizon=4, retention=None):
        return SampleBook(n, horizon, retention)

    def test_completed(self):
        b = self.book()
        b.expire(0)
        b.mark_sent(0, 100)
        assert b.match(0, 250) == COMPLETED
        s = b.sample(0)
        assert s.status is SampleStatus.OK and s.rtt == 150
        assert b.outstanding == 0

    def test_duplicate_leaves_sample_unchanged(self):
        b = self.book()
        b.mark_sent(0, 100)
        b.match(0, 250)
        assert b.match(0, 900) == DUPLICATE
        assert b.duplicates == 1
        assert b.sample(0).rtt == 150

    def test_older_reply_is_late_arrival(self):
        b = self.book()
        b.mark_sent(0, 100)
        b.mark_sent(1, 200)
        assert b.match(0, 1300) == LATE
        assert b.sample(0).status is SampleStatus.LATE_ARRIVAL
        assert b.sample(0).rtt == 1200

    def test_expire_after_horizon(self):
        b = self.book(horizon=4)
        for n in range(5):
            b.expire(n)
            b.mark_sent(n, n * 10)
        # at cycle 4 probe 0 has had 4 periods
        assert b.sample(0).status is SampleStatus.LOST
        assert b.sample(1).status is SampleStatus.PENDING
        assert b.lost == 1

    def test_reply_for_lost_probe_within_retention_reclassified(self):
        b = self.book(horizon=2, retention=4)
        for n in range(3):
            b.expire(n)
            b.mark_sent(n, n * 1000)
        assert b.sample(0).status is SampleStatus.LOST
        assert b.match(0, 2500) == RECLASSIFIED
        assert b.sample(0).status is SampleStatus.LATE_ARRIVAL
        assert b.lost == 0

    def test_reply_beyond_retention_is_stale(self):
        b = self.book(horizon=2, retention=2)
        for n in range(4):
            b.expire(n)
            b.mark_sent(n, n)
        assert b.match(0, 10) == STALE
        assert b.stale_replies == 1
        assert b.sample(0).status is SampleStatus.LOST

    def test_reply_for_unsent_sequence_is_stale(self):
        b = self.book()
        b.mark_sent(0, 0)
        assert b.match(7, 10) == STALE

    def test_finish_marks_pending_lost(self):
        b = self.book()
        for n in range(3):
            b.mark_sent(n, n)
        b.finish()
        assert b.lost == 3 and b.outstanding == 0

    def test_retention_below_horizon_rejected(self):
        with pytest.raises(ValueError):
            SampleBook(10, 4, 2)
        with pytest.raises(ValueError):
            SampleBook(10, 0)


def test_parse_endpoint():
    assert parse_endpoint("h", 7447) == ("h", 7447)
    assert parse_endpoint("h:9", 7447) == ("h", 9)
    assert parse_endpoint("[::1]:5", 7447) == ("::1", 5)
    assert parse_endpoint(":5", 1) == ("0.0.0.0", 5)


def test_socket_priority_applied():
    s = open_socket(SocketConfig(("127.0.0.1", 0), priority_mark=4))
    try:
        assert s.getsockopt(socket.SOL_SOCKET, 12) == 4
    finally:
        s.close()


class TestServer:
    def setup_method(self):
        self.server = EchoServer(SocketConfig(("127.0.0.1", 0)))
        self.peer = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self.peer.bind(("127.0.0.1", 0))
        self.peer.settimeout(1)

    def teardown_method(self):
        self.server.close()
        self.peer.close()

    def test_echo_is_transparent(self):
        data = encode_probe(ProbePacket(42, 123456789))
        self.server.handle(memoryview(data), self.peer.getsockname())
        assert self.peer.recv(1000) == data
        assert self.server.stats.echoed == 1

    def test_malformed_not_echoed(self):
        self.server.handle(memoryview(b"garbage"), self.peer.getsockname())
        st = self.server.stats
        assert (st.received, st.echoed, st.decode_errors) == (1, 0, 1)

    def test_fault_drop_and_duplicate(self):
        self.server.fault = FaultPlan(drops={1}, duplicates={2})
        for seq in (1, 2):
            self.server.handle(memoryview(encode_probe(ProbePacket(seq, 0))), self.peer.getsockname())
        assert self.server.stats.dropped == 1
        assert self.server.stats.echoed == 2


def test_server_10k_probes_lossless():
    stop = threading.Event()
    server = EchoServer(SocketConfig(("127.0.0.1", 0), receive_timeout=0.05))
    t = threading.Thread(target=server.serve, args=(stop,))
    t.start()
    c = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    c.settimeout(2)
    try:
        for seq in range(10_000):
            data = encode_probe(ProbePacket(seq, seq))
            c.sendto(data, server.address)
            assert c.recv(1000) == data
    finally:
        stop.set()
        t.join()
        c.close()
        server.close()
    assert server.stats.received == server.stats.echoed == 10_000


def test_loopback_1000_cycles():
    with EchoProcess() as echo:
        cfg = SocketConfig(("127.0.0.1", 0), peer=echo.address)
        run = measure(cfg, CycleSpec(1_000_000, warmup_cycles=0, total_cycles=1000))
    acc = run.accumulate()
    s = acc.summary
    assert s.count_sent == 1000
    assert s.count_received + s.count_lost == 1000
    assert s.count_lost == 0
    assert all(r > 0 for r in acc.timeseries.rtts)


def test_peer_down_all_lost():
    # bind then close to get a port nobody listens on
    probe = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    probe.bind(("127.0.0.1", 0))
    port = probe.getsockname()[1]
    probe.close()
    run = measure(SocketConfig(("127.0.0.1", 0), peer=("127.0.0.1", port)),
                  CycleSpec(1_000_000, warmup_cycles=0, total_cycles=50))
    s = run.accumulate().summary
    assert s.count_lost == s.count_sent == 50
    assert s.count_received == 0


def test_storage_not_reallocated_during_run():
    with EchoProcess() as echo:
        client = RttClient(SocketConfig(("127.0.0.1", 0), peer=echo.address),
                           CycleSpec(1_000_000, warmup_cycles=0, total_cycles=200))
        before = client.book.storage_signature()
        try:
            client.run()
        finally:
            client.close()
    assert client.book.storage_signature() == before


def test_reordered_reply_reclassified_through_fault_peer():
    # sequence 5 echoes after 6 ms: beyond a 4-period horizon but within a 10-cycle retention
    fault = FaultPlan(delays={5: 6_000_000})
    with EchoProcess(fault=fault) as echo:
        client = RttClient(SocketConfig(("127.0.0.1", 0), peer=echo.address),
                           CycleSpec(1_000_000, warmup_cycles=0, total_cycles=30), loss_horizon=4, retention=10)
        try:
            run = client.run()
        finally:
            client.close()
    sample = run.book.sample(5)
    assert sample.status is SampleStatus.LATE_ARRIVAL
    assert sample.rtt > 4_000_000
    assert run.book.lost == 0


def test_reordered_reply_beyond_retention_is_stale():
    fault = FaultPlan(delays={5: 8_000_000})
    with EchoProcess(fault=fault) as echo:
        client = RttClient(SocketConfig(("127.0.0.1", 0), peer=echo.address),
                           CycleSpec(1_000_000, warmup_cycles=0, total_cycles=30), loss_horizon=4)
        try:
            run = client.run()
        finally:
            client.close()
    assert run.book.sample(5).status is SampleStatus.LOST
    assert run.book.stale_replies == 1


def test_stop_flag_ends_run_early():
    stop = threading.Event()
    stop.set()
    with EchoProcess() as echo:
        run = measure(SocketConfig(("127.0.0.1", 0), peer=echo.address),
                      CycleSpec(1_000_000, warmup_cycles=0, total_cycles=10_000), stop=stop)
    assert run.stopped_early
    assert run.book.sent == 0
