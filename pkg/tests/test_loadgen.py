import threading

import pytest
from hypothesis import given
from hypothesis import strategies as st

from rtping.loadgen.stress import REFERENCE_STRESS, StressSpec, parse_duration, parse_size, run_stress
from rtping.loadgen.traffic import SinkReport, TokenBucket, TrafficSpec, UdpSink, run_traffic

MiB = 1024**2


def test_reference_stress_flags():
    s = StressSpec.parse("stress -c 2 -i 2 -m 2 --vm-bytes 128M -d 2 --hdd-bytes 15M")
    assert (s.cpu_workers, s.io_workers, s.vm_workers, s.vm_bytes, s.disk_workers, s.disk_bytes) == \
        (2, 2, 2, 128 * MiB, 2, 15 * MiB)
    assert s == REFERENCE_STRESS
    assert StressSpec.parse(s.to_args()) == s


@pytest.mark.parametrize("text,n", [("1", 1), ("4k", 4096), ("128M", 128 * MiB), ("1G", 1024**3), ("7B", 7)])
def test_parse_size(text, n):
    assert parse_size(text) == n


@pytest.mark.parametrize("bad", ["", "12X", "-3M", "1.5M"])
def test_parse_size_rejects(bad):
    with pytest.raises(ValueError):
        parse_size(bad)


def test_parse_duration():
    assert parse_duration("10") == 10
    assert parse_duration("2m") == 120
    assert parse_duration("1h") == 3600


@pytest.mark.parametrize("flags", ["", "-c -1", "--bogus 3", "-c two"])
def test_stress_rejects(flags):
    with pytest.raises(ValueError):
        StressSpec.parse(flags)


@given(st.integers(0, 4), st.integers(0, 4), st.integers(0, 4), st.integers(1, 4096), st.integers(0, 4))
def test_stress_args_roundtrip(c, i, m, vm_mib, d):
    if not (c or i or m or d):
        return
    s = StressSpec(c, i, m, vm_mib * MiB, d, 15 * MiB)
    assert StressSpec.parse(s.to_args()) == s
    assert StressSpec.from_dict(s.to_dict()) == s


def test_cpu_worker_runs():
    rep = run_stress(StressSpec(cpu_workers=1), 1.0)
    assert len(rep.workers) == 1
    assert rep.workers[0].iterations > 0
    assert not rep.failed


def test_vm_worker_too_large_fails_others_continue():
    rep = run_stress(StressSpec(cpu_workers=1, vm_workers=1, vm_bytes=1 << 60), 0.5)
    by_kind = {w.kind: w for w in rep.workers}
    assert not by_kind["vm"].ok
    assert "MemoryError" in by_kind["vm"].error
    assert by_kind["cpu"].ok and by_kind["cpu"].iterations > 0
    assert "FAILED" in rep.format()


def test_all_worker_kinds(tmp_path, monkeypatch):
    monkeypatch.setenv("RTPING_STRESS_DIR", str(tmp_path))
    rep = run_stress(StressSpec(1, 1, 1, 4 * MiB, 1, 1 * MiB), 1.0)
    assert {w.kind for w in rep.workers} == {"cpu", "io", "vm", "hdd"}
    assert not rep.failed, rep.format()
    assert list(tmp_path.iterdir()) == []


class TestTokenBucket:
    def test_starts_full_then_paces(self):
        b = TokenBucket(rate=1000.0, capacity=100, t0=0)
        assert b.try_consume(100, 0)
        assert not b.try_consume(1, 0)
        # 1000 B/s -> 10 bytes take 10 ms
        assert b.time_until(10, 0) == 10_000_001
        assert b.try_consume(10, 10_000_000)

    def test_capacity_caps_credit(self):
        b = TokenBucket(1000.0, 50, 0)
        b.refill(10**12)
        assert b.tokens == 50

    @given(st.lists(st.integers(1, 1500), min_size=1, max_size=200))
    def test_long_run_rate_bound(self, sizes):
        rate, cap = 1e6, 3000
        b = TokenBucket(rate, cap, 0)
        t = 0
        sent = 0
        for n in sizes:
            t += b.time_until(n, t)
            assert b.try_consume(n, t)
            sent += n
        # never more than the initial burst plus what the rate allows
        assert sent <= cap + rate * t / 1e9 + 1


def test_traffic_spec_validation():
    with pytest.raises(ValueError):
        TrafficSpec(("h", 1), target_bandwidth=0)
    with pytest.raises(ValueError):
        TrafficSpec(("h", 1), payload_size=70_000)
    assert TrafficSpec(("h", 1)).inter_packet_gap == pytest.approx(117.6e-6)
    t = TrafficSpec(("h", 9), 5_000_000, 1000, 2.0, 1)
    assert TrafficSpec.from_dict(t.to_dict()) == t


def test_traffic_needs_bound():
    with pytest.raises(ValueError):
        run_traffic(TrafficSpec(("127.0.0.1", 9)))
    with pytest.raises(ValueError):
        run_traffic(TrafficSpec(None, duration=1))


def test_traffic_short_run_to_sink():
    sink = UdpSink(("127.0.0.1", 0))
    stop = threading.Event()
    t = threading.Thread(target=sink.serve, args=(stop,))
    t.start()
    try:
        rep = run_traffic(TrafficSpec(sink.address, 2_000_000, 1000, 1.0))
    finally:
        stop.set()
        t.join()
        sink.close()
    # 2 Mbit/s for 1 s plus the 10 ms initial burst
    assert rep.bytes_sent == pytest.approx(250_000, rel=0.05)
    assert sink.report.bytes_received == rep.bytes_sent
    assert rep.achieved_bps == pytest.approx(2e6, rel=0.05)


def test_sink_window_rates():
    r = SinkReport(window=1.0, window_bytes=[1000, 1000, 10], first_ns=0, last_ns=2_000_000_000)
    assert r.window_rates() == [8000, 8000]
    assert r.window_rates(complete_only=False) == [8000, 8000, 80]
