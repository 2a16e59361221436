"""The numbered acceptance criteria, each at its stated tolerance.

A PASS/FAIL line per criterion is printed in the terminal summary.
"""

import random
import threading
import time

import pytest

from rtping import timing
from rtping.loadgen.traffic import TrafficSpec, UdpSink, run_traffic
from rtping.report import RunRecord, render_table
from rtping.rtt.client import measure
from rtping.rtt.peer import EchoProcess
from rtping.rtt.protocol import (
    DEFAULT_PAYLOAD_SIZE,
    HEADER_SIZE,
    ProbeDecodeError,
    ProbePacket,
    decode_probe,
    encode_probe,
)
from rtping.rtt.server import FaultPlan
from rtping.rtt.sockets import SocketConfig
from rtping.scenario import ScenarioSpec
from rtping.stats import RoundTripSample, SampleStatus, SummaryAccumulator
from rtping.timing import CycleEngine, CycleSpec, cycle_schedule
from rtping.tuning.apply import apply, verify
from rtping.tuning.backend import DryRunBackend
from rtping.tuning.commands import classify, mqprio_command, vlan_egress_command
from rtping.tuning.model import BOARD_PRIORITY_MAP, Mode, RtSchedParams, VlanEgressMap
from rtping.tuning.plan import SystemInventory, plan_for_mode
from rtping.tuning.sched import can_use_fifo

from oracles import DRIVER_QUEUE, batch_summary, round_half_up_us, schedule

MS = 1_000_000
US = 1_000


def rt_or_none(priority=80):
    return RtSchedParams("fifo", priority, True) if can_use_fifo(priority) else None


@pytest.mark.acceptance(1, "mqprio and VLAN egress commands match the listings exactly")
def test_1_command_fidelity():
    assert mqprio_command(BOARD_PRIORITY_MAP, "eth1") == (
        "tc qdisc replace dev eth1 root mqprio num_tc 3 map 2 2 1 1 0 2 2 2 2 2 2 2 2 2 2 2 "
        "queues 1@0 1@1 1@2 hw 0")
    assert vlan_egress_command(VlanEgressMap("eth1.2")) == (
        "ip link set eth1.2 type vlan egress 0:0 1:1 2:2 3:3 4:4 5:5 6:6 7:7")


@pytest.mark.acceptance(2, "classify reproduces all 16 priority-to-queue entries")
def test_2_classification():
    got = {p: classify(BOARD_PRIORITY_MAP, p)[1] for p in range(16)}
    assert got == DRIVER_QUEUE
    assert got[4] == 0 and got[2] == got[3] == 1


@pytest.mark.acceptance(3, "streaming summary equals batch oracle on 10k random samples in < 1 s")
def test_3_statistics_oracle():
    rnd = random.Random(2017)
    deadline = 1 * MS
    pairs = [(rnd.choice(["ok"] * 7 + ["late", "lost"]), rnd.randint(1, 5 * MS)) for _ in range(10_000)]
    status = {"ok": SampleStatus.OK, "late": SampleStatus.LATE_ARRIVAL, "lost": SampleStatus.LOST}
    samples = []
    for i, (st, rtt) in enumerate(pairs):
        t = 10**9 + i * MS
        samples.append(RoundTripSample(i, t, None if st == "lost" else t + rtt, status[st]))
    start = time.perf_counter()
    acc = SummaryAccumulator(deadline)
    for s in samples:
        acc.record(s)
    elapsed = time.perf_counter() - start
    ref = batch_summary(pairs, deadline)
    s = acc.summary
    assert (s.count_sent, s.count_received, s.count_lost, s.count_missed_deadline) == \
        (ref["sent"], ref["received"], ref["lost"], ref["missed"])
    assert (s.min_rtt_ns, s.max_rtt_ns) == (ref["min"], ref["max"])
    # mean exact in integer ns: the exact sum over the exact count
    assert s.sum_rtt_ns == ref["sum"]
    assert s.avg_us == round_half_up_us(ref["mean"])
    assert elapsed < 1.0


@pytest.mark.acceptance(4, "synthetic 251/266/522 record renders the idle table row")
def test_4_table_rendering():
    n = 600_000
    acc = SummaryAccumulator(MS, keep_timeseries=False)
    rtts = [251 * US, 522 * US] + [266 * US] * (n - 2)
    for i, rtt in enumerate(rtts):
        acc.record(RoundTripSample(i, i * MS, i * MS + rtt))
    sc = ScenarioSpec(peer=("10.0.0.2", 7447), mode="rt-normal")
    rec = RunRecord(sc, acc.summary, acc.histogram, None, {"kernel": "4.9.30-rt21", "mode": "rt-normal"})
    rec.check()
    row = render_table([rec]).splitlines()[2].split()
    assert row == ["Idle", "251", "266", "522", "0", "/", "600000", "0", "/", "600000"]


@pytest.mark.acceptance(5, "probe encode/decode roundtrip on 10k random probes, default size, error cases")
def test_5_protocol():
    rnd = random.Random(5)
    for _ in range(10_000):
        p = ProbePacket(rnd.getrandbits(64), rnd.getrandbits(64), rnd.randint(HEADER_SIZE, 2048))
        assert decode_probe(encode_probe(p)) == p
    assert len(encode_probe(ProbePacket(1, 2))) == DEFAULT_PAYLOAD_SIZE == 500
    good = encode_probe(ProbePacket(1, 2))
    cases = {
        "short-buffer": good[:HEADER_SIZE - 1],
        "bad-magic": b"XXXX" + good[4:],
        "bad-version": good[:4] + b"\x09" + good[5:],
    }
    for reason, data in cases.items():
        with pytest.raises(ProbeDecodeError) as exc:
            decode_probe(data)
        assert exc.value.reason == reason
    for bad in (HEADER_SIZE - 1, 65_508):
        with pytest.raises(ValueError):
            ProbePacket(0, 0, bad)
    with pytest.raises(ValueError):
        ProbePacket(-1, 0)


@pytest.mark.acceptance(6, "one probe delayed 2 ms in 1000 cycles: 1 missed, 0 lost, max > 1000 µs")
def test_6_deadline_semantics():
    fault = FaultPlan(delays={500: 2 * MS})
    rt = rt_or_none()
    echo_rt = RtSchedParams("fifo", 81, False) if rt else None
    with EchoProcess(rt=echo_rt, fault=fault) as echo:
        run = measure(SocketConfig(("127.0.0.1", 0), peer=echo.address),
                      CycleSpec(MS, warmup_cycles=0, total_cycles=1000), rt)
    s = run.accumulate().summary
    assert s.count_sent == 1000
    assert s.count_lost == 0
    assert s.count_missed_deadline == 1
    assert s.max_rtt_ns > 1000 * US


@pytest.mark.slow
@pytest.mark.acceptance(7, "60 s loopback run at 1 ms: 60000 sent, 0 lost, conservation holds")
def test_7_loopback_integration():
    rt = rt_or_none()
    echo_rt = RtSchedParams("fifo", 81, False) if rt else None
    with EchoProcess(rt=echo_rt) as echo:
        run = measure(SocketConfig(("127.0.0.1", 0), peer=echo.address),
                      CycleSpec(MS, warmup_cycles=0, total_cycles=60_000), rt)
    acc = run.accumulate()
    s = acc.summary
    assert s.count_sent == 60_000
    assert s.count_lost == 0
    s.check()
    assert s.count_received + s.count_lost == s.count_sent
    assert acc.histogram.total == s.count_received
    elapsed = (run.finished_ns - run.started_ns) / 1e9
    assert 59.0 < elapsed < 62.0


@pytest.mark.acceptance(8, "paced traffic at 10 Mbit/s for 5 s stays within 5% per 1 s window")
def test_8_pacing():
    sink = UdpSink(("127.0.0.1", 0), window=1.0)
    stop = threading.Event()
    t = threading.Thread(target=sink.serve, args=(stop,), daemon=True)
    t.start()
    try:
        report = run_traffic(TrafficSpec(sink.address, 10_000_000, duration=5.0))
        time.sleep(0.3)
    finally:
        stop.set()
        t.join(5)
        sink.close()
    rates = sink.report.window_rates()
    assert len(rates) == 5, sink.report.format()
    for r in rates:
        assert abs(r - 10e6) / 10e6 <= 0.05, sink.report.format()
    assert abs(report.achieved_bps - 10e6) / 10e6 <= 0.05


@pytest.mark.acceptance(9, "dry-run isolation plan: disjoint, monotonic, verify after apply is clean")
def test_9_tuning_plans():
    inv = SystemInventory.synthetic(2)
    modes = [Mode.NO_RT, Mode.RT_NORMAL, Mode.RT_AFFINITIES, Mode.RT_ISOLATION]
    plans = [plan_for_mode(m, inv) for m in modes]
    for a, b in zip(plans, plans[1:]):
        assert a.intents() < b.intents()
    iso = plans[-1].isolation
    assert iso.isolated_cpus.isdisjoint(iso.irq_default_cpus)
    assert iso.isolated_cpus | iso.irq_default_cpus == set(inv.cpus)
    backend = DryRunBackend()
    assert apply(plans[-1], backend, pid=4242).ok
    report = verify(plans[-1], backend, pid=4242)
    assert report.consistent
    assert len(report.mismatches) == 0


class _LateClock:
    """Scripted clock whose every wake-up is late by a pseudo-random amount."""

    def __init__(self, seed):
        self.t = 0
        self.rnd = random.Random(seed)

    def now(self):
        return self.t

    def sleep(self, target):
        self.t = max(self.t, target) + self.rnd.choice((0, 0, 0, 3_000, 250_000, 1_200_000))
        return self.t


@pytest.mark.acceptance(10, "600000 cycle targets equal t0 + n*1e6 ns with no drift under wake latency")
def test_10_schedule_exactness():
    spec = CycleSpec(MS, warmup_cycles=0, total_cycles=600_000)
    t0 = 123_456_789
    assert list(cycle_schedule(t0, spec)) == schedule(t0, MS, 600_000)
    clk = _LateClock(10)
    eng = CycleEngine(spec, t0=t0, clock=clk.now, sleeper=clk.sleep)
    n = 0
    for c in eng:
        assert c.target == t0 + c.index * MS
        n += 1
    assert n == 600_000
    assert eng.max_wake_latency >= 1_200_000
