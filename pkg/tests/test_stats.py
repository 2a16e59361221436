import random

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rtping.stats import (
    LatencyHistogram,
    RoundTripSample,
    RunSummary,
    SampleStatus,
    SummaryAccumulator,
    TimeSeries,
    UndefinedStatistic,
    ns_to_us,
    percentile,
    summarize,
)

from oracles import batch_summary, nearest_rank, round_half_up_us

US = 1000
STATUS = {"ok": SampleStatus.OK, "late": SampleStatus.LATE_ARRIVAL, "lost": SampleStatus.LOST}

sample_lists = st.lists(
    st.tuples(st.sampled_from(["ok", "ok", "ok", "late", "lost"]), st.integers(1, 120_000_000)), max_size=300)


def to_samples(pairs, t0=10**9):
    out = []
    for i, (status, rtt) in enumerate(pairs):
        t_send = t0 + i * 1_000_000
        t_recv = None if status == "lost" else t_send + rtt
        out.append(RoundTripSample(i, t_send, t_recv, STATUS[status]))
    return out


def check_against_oracle(summary: RunSummary, ref: dict):
    assert summary.count_sent == ref["sent"]
    assert summary.count_received == ref["received"]
    assert summary.count_lost == ref["lost"]
    assert summary.count_late_arrival == ref["late"]
    assert summary.count_missed_deadline == ref["missed"]
    assert summary.min_rtt_ns == ref["min"]
    assert summary.max_rtt_ns == ref["max"]
    assert summary.sum_rtt_ns == ref["sum"]
    if ref["mean"] is not None:
        assert summary.avg_us == round_half_up_us(ref["mean"])


@given(sample_lists, st.integers(1, 5_000_000))
def test_streaming_equals_batch_oracle(pairs, deadline):
    acc = summarize(to_samples(pairs), deadline)
    check_against_oracle(acc.summary, batch_summary(pairs, deadline))
    acc.summary.check()
    assert acc.histogram.total == acc.summary.count_received


@given(sample_lists, st.randoms(use_true_random=False))
def test_order_independent(pairs, rnd):
    a = summarize(to_samples(pairs), 1_000_000).summary
    samples = to_samples(pairs)
    rnd.shuffle(samples)
    b = summarize(samples, 1_000_000, keep_timeseries=False).summary
    assert a == b


def test_reference_idle_values():
    # min/avg/max from the no-RT idle row used as sample inputs
    pairs = [("ok", 193 * US), ("ok", 217 * US), ("ok", 1446 * US)]
    s = summarize(to_samples(pairs), 1_000_000).summary
    assert (s.min_us, s.max_us, s.count_missed_deadline) == (193, 1446, 1)


def test_deadline_is_strict():
    s = summarize(to_samples([("ok", 1_000_000), ("ok", 1_000_001)]), 1_000_000).summary
    assert s.count_missed_deadline == 1


def test_lost_samples_are_not_misses():
    s = summarize(to_samples([("lost", 0), ("ok", 5_000_000)]), 1_000_000).summary
    assert s.count_lost == 1 and s.count_missed_deadline == 1 and s.count_received == 1


def test_empty_summary():
    s = RunSummary(1_000_000)
    s.check()
    assert s.avg_us is None and s.min_us is None


def test_rounding_half_up():
    assert ns_to_us(499) == 0
    assert ns_to_us(500) == 1
    assert ns_to_us(1499) == 1
    assert ns_to_us(1500) == 2
    s = summarize(to_samples([("ok", 265_500), ("ok", 265_500)]), 10**6).summary
    assert s.avg_us == 266


@given(st.integers(0, 10**12))
def test_ns_to_us_matches_oracle(ns):
    assert ns_to_us(ns) == round_half_up_us(ns)


def test_summary_check_catches_violations():
    s = RunSummary(10**6, count_sent=3, count_received=2, count_lost=0, min_rtt_ns=1, max_rtt_ns=2, sum_rtt_ns=3)
    with pytest.raises(ValueError, match="sent"):
        s.check()
    s = RunSummary(10**6, count_sent=2, count_received=2, min_rtt_ns=5, max_rtt_ns=6, sum_rtt_ns=100)
    with pytest.raises(ValueError, match="avg"):
        s.check()


def test_send_overrun_flag_counted_independently():
    acc = SummaryAccumulator(10**6)
    acc.record(RoundTripSample(0, 0, 100, SampleStatus.OK, send_overrun=True))
    acc.record(RoundTripSample(1, 0, None, SampleStatus.SEND_OVERRUN))
    s = acc.summary
    assert s.count_send_overrun == 1
    assert s.count_received + s.count_lost == s.count_sent == 2


def test_sample_consistency():
    with pytest.raises(ValueError):
        RoundTripSample(0, 10, None, SampleStatus.OK)
    with pytest.raises(ValueError):
        RoundTripSample(0, 10, 5, SampleStatus.OK)
    with pytest.raises(ValueError):
        RoundTripSample(0, 10, 20, SampleStatus.LOST)
    assert RoundTripSample(0, 10, 25).rtt == 15


class TestHistogram:
    def test_bins_and_overflow(self):
        h = LatencyHistogram()
        for v in (0, 999, 1000, 299_999, 100_000_000, 10**10):
            h.add(v)
        assert h.nonzero() == [(0, 2), (1000, 1), (299_000, 1)]
        assert h.overflow_count == 2
        assert h.total == 6

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            LatencyHistogram().add(-1)

    @given(st.lists(st.integers(0, 150_000_000), max_size=200))
    def test_add_many_equals_add(self, values):
        a, b = LatencyHistogram(), LatencyHistogram()
        for v in values:
            a.add(v)
        b.add_many(values)
        assert a == b
        assert a.total == len(values)

    @given(st.lists(st.integers(0, 150_000_000), max_size=100),
           st.sampled_from([(1, 10_000), (7, 1_000_000), (1000, 100_000_000), (250_000, 100_000_000)]))
    def test_dict_roundtrip(self, values, shape):
        h = LatencyHistogram(*shape)
        h.add_many(values)
        assert LatencyHistogram.from_dict(h.to_dict()) == h

    def test_bad_dict(self):
        with pytest.raises(ValueError):
            LatencyHistogram.from_dict({"bin_width_ns": 1000, "overflow_threshold_ns": 10**8,
                                        "overflow_count": 0, "bins": [[1500, 1]]})


def test_timeseries_order_enforced():
    ts = TimeSeries()
    ts.append(3, 10)
    with pytest.raises(ValueError):
        ts.append(3, 11)
    assert TimeSeries.from_dict(ts.to_dict()) == ts


def test_percentile_nearest_rank():
    assert percentile([5, 1, 3, 2, 4], 0.5) == 3
    assert percentile([5, 1, 3, 2, 4], 1.0) == 5
    assert percentile([5, 1, 3, 2, 4], 0.0) == 1
    with pytest.raises(UndefinedStatistic):
        percentile([], 0.5)
    with pytest.raises(ValueError):
        percentile([1], 1.5)


@given(st.lists(st.integers(0, 10**7), min_size=1, max_size=100), st.floats(0, 1))
def test_percentile_oracle(values, p):
    assert percentile(values, p) == nearest_rank(values, p)


def test_10k_random_samples_fast():
    rnd = random.Random(7)
    pairs = [(rnd.choice(["ok"] * 8 + ["late", "lost"]), rnd.randint(1, 3_000_000)) for _ in range(10_000)]
    acc = summarize(to_samples(pairs), 1_000_000)
    check_against_oracle(acc.summary, batch_summary(pairs, 1_000_000))
    rtts = [r for s, r in pairs if s != "lost"]
    assert int(np.sum(acc.histogram.bins)) == len(rtts)
