"""Streaming round-trip statistics and fixed-bin latency histograms.

Durations are integer nanoseconds internally. The mean is kept as an exact
integer sum so that folding samples in any order gives bit-identical results;
microsecond values are rounded half-up only when presented.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

NSEC_PER_USEC = 1_000
DEFAULT_BIN_WIDTH_NS = 1_000
DEFAULT_OVERFLOW_NS = 100_000_000


class SampleStatus(enum.IntEnum):
    PENDING = 0
    OK = 1
    LOST = 2
    LATE_ARRIVAL = 3
    SEND_OVERRUN = 4

    @property
    def received(self) -> bool:
        return self in (SampleStatus.OK, SampleStatus.LATE_ARRIVAL)


class UndefinedStatistic(ValueError):
    pass


@dataclass(frozen=True)
class RoundTripSample:
    sequence: int
    t_send: int
    t_recv: int | None = None
    status: SampleStatus = SampleStatus.OK
    send_overrun: bool = False

    def __post_init__(self):
        object.__setattr__(self, "status", SampleStatus(self.status))
        if self.status.received != (self.t_recv is not None):
            raise ValueError(f"status {self.status.name} inconsistent with t_recv={self.t_recv}")
        if self.t_recv is not None and self.t_recv < self.t_send:
            raise ValueError("t_recv precedes t_send")

    @property
    def rtt(self) -> int | None:
        return None if self.t_recv is None else self.t_recv - self.t_send


def ns_to_us(ns: int) -> int:
    """Round a nanosecond duration to integer microseconds, half-up."""
    return (ns + NSEC_PER_USEC // 2) // NSEC_PER_USEC


def div_round_half_up(num: int, den: int) -> int:
    return (2 * num + den) // (2 * den)


class LatencyHistogram:
    """Counts per ``bin_width`` bucket below ``overflow_threshold``; larger values
    land in ``overflow_count``."""

    def __init__(self, bin_width: int = DEFAULT_BIN_WIDTH_NS, overflow_threshold: int = DEFAULT_OVERFLOW_NS):
        if bin_width <= 0:
            raise ValueError("bin width must be positive")
        if overflow_threshold <= 0:
            raise ValueError("overflow threshold must be positive")
        self.bin_width = bin_width
        self.overflow_threshold = overflow_threshold
        self.bins = np.zeros(-(-overflow_threshold // bin_width), dtype=np.int64)
        self.overflow_count = 0

    def add(self, rtt: int) -> None:
        if rtt < 0:
            raise ValueError(f"negative latency {rtt}")
        if rtt >= self.overflow_threshold:
            self.overflow_count += 1
        else:
            self.bins[rtt // self.bin_width] += 1

    def add_many(self, rtts) -> None:
        rtts = np.asarray(rtts, dtype=np.int64)
        if rtts.size and rtts.min() < 0:
            raise ValueError("negative latency in batch")
        over = rtts >= self.overflow_threshold
        self.overflow_count += int(over.sum())
        idx = rtts[~over] // self.bin_width
        self.bins += np.bincount(idx, minlength=self.bins.size)[: self.bins.size]

    @property
    def total(self) -> int:
        return int(self.bins.sum()) + self.overflow_count

    def nonzero(self) -> list[tuple[int, int]]:
        """(bin lower edge in ns, count) for every nonempty bin, ascending."""
        (idx,) = np.nonzero(self.bins)
        return [(int(i) * self.bin_width, int(self.bins[i])) for i in idx]

    def __eq__(self, other):
        if not isinstance(other, LatencyHistogram):
            return NotImplemented
        return (self.bin_width == other.bin_width
                and self.overflow_threshold == other.overflow_threshold
                and self.overflow_count == other.overflow_count
                and np.array_equal(self.bins, other.bins))

    def __repr__(self):
        return (f"LatencyHistogram(bin_width={self.bin_width}, overflow_threshold={self.overflow_threshold}, "
                f"nonempty={len(self.nonzero())}, overflow={self.overflow_count})")

    def to_dict(self) -> dict:
        return {"bin_width_ns": self.bin_width, "overflow_threshold_ns": self.overflow_threshold,
                "overflow_count": self.overflow_count, "bins": [[e, c] for e, c in self.nonzero()]}

    @classmethod
    def from_dict(cls, d: dict) -> LatencyHistogram:
        h = cls(int(d["bin_width_ns"]), int(d["overflow_threshold_ns"]))
        h.overflow_count = int(d["overflow_count"])
        for edge, count in d["bins"]:
            edge, count = int(edge), int(count)
            if edge % h.bin_width or not 0 <= edge < h.overflow_threshold or count < 0:
                raise ValueError(f"invalid histogram bin {edge}:{count}")
            h.bins[edge // h.bin_width] = count
        return h


def histogram_add(h: LatencyHistogram, rtt: int) -> LatencyHistogram:
    h.add(rtt)
    return h


@dataclass
class TimeSeries:
    """(cycle index, rtt ns) for received samples, index-ordered."""

    indices: list[int] = field(default_factory=list)
    rtts: list[int] = field(default_factory=list)

    def append(self, index: int, rtt: int) -> None:
        if self.indices and index <= self.indices[-1]:
            raise ValueError(f"time series index {index} not after {self.indices[-1]}")
        self.indices.append(index)
        self.rtts.append(rtt)

    def __len__(self):
        return len(self.indices)

    def to_dict(self) -> dict:
        return {"index": list(self.indices), "rtt_ns": list(self.rtts)}

    @classmethod
    def from_dict(cls, d: dict) -> TimeSeries:
        ts = cls()
        for i, r in zip(d["index"], d["rtt_ns"]):
            ts.append(int(i), int(r))
        return ts


@dataclass
class RunSummary:
    deadline_ns: int
    count_sent: int = 0
    count_received: int = 0
    count_lost: int = 0
    count_missed_deadline: int = 0
    count_late_arrival: int = 0
    count_send_overrun: int = 0
    duplicates: int = 0
    stale_replies: int = 0
    min_rtt_ns: int | None = None
    max_rtt_ns: int | None = None
    sum_rtt_ns: int = 0

    @property
    def avg_rtt_ns(self) -> float | None:
        return self.sum_rtt_ns / self.count_received if self.count_received else None

    @property
    def min_us(self) -> int | None:
        return None if self.min_rtt_ns is None else ns_to_us(self.min_rtt_ns)

    @property
    def max_us(self) -> int | None:
        return None if self.max_rtt_ns is None else ns_to_us(self.max_rtt_ns)

    @property
    def avg_us(self) -> int | None:
        if not self.count_received:
            return None
        return div_round_half_up(self.sum_rtt_ns, self.count_received * NSEC_PER_USEC)

    def check(self) -> None:
        """Raise ValueError if the summary's internal invariants do not hold."""
        if self.count_received + self.count_lost != self.count_sent:
            raise ValueError(f"received {self.count_received} + lost {self.count_lost} != sent {self.count_sent}")
        if not 0 <= self.count_missed_deadline <= self.count_sent:
            raise ValueError("missed deadline count outside 0..sent")
        if self.count_received:
            if self.min_rtt_ns is None or self.max_rtt_ns is None:
                raise ValueError("received samples but no extrema")
            if not (self.min_rtt_ns * self.count_received <= self.sum_rtt_ns
                    <= self.max_rtt_ns * self.count_received):
                raise ValueError("min <= avg <= max violated")
        elif self.min_rtt_ns is not None or self.max_rtt_ns is not None or self.sum_rtt_ns:
            raise ValueError("extrema present without received samples")

    def to_dict(self) -> dict:
        d = dict(vars(self))
        d.update(min_us=self.min_us, avg_us=self.avg_us, max_us=self.max_us)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> RunSummary:
        fields = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        return cls(**fields)


class SummaryAccumulator:
    """O(1)-per-sample fold producing a RunSummary, histogram and time series."""

    def __init__(self, deadline_ns: int, bin_width: int = DEFAULT_BIN_WIDTH_NS,
                 overflow_threshold: int = DEFAULT_OVERFLOW_NS, keep_timeseries: bool = True):
        self.summary = RunSummary(deadline_ns)
        self.histogram = LatencyHistogram(bin_width, overflow_threshold)
        self.timeseries = TimeSeries() if keep_timeseries else None

    def record(self, sample: RoundTripSample) -> None:
        s = self.summary
        s.count_sent += 1
        if sample.send_overrun:
            s.count_send_overrun += 1
        status = sample.status
        if status in (SampleStatus.LOST, SampleStatus.PENDING, SampleStatus.SEND_OVERRUN):
            s.count_lost += 1
            return
        rtt = sample.t_recv - sample.t_send
        s.count_received += 1
        if status is SampleStatus.LATE_ARRIVAL:
            s.count_late_arrival += 1
        if rtt > s.deadline_ns:
            s.count_missed_deadline += 1
        if s.min_rtt_ns is None or rtt < s.min_rtt_ns:
            s.min_rtt_ns = rtt
        if s.max_rtt_ns is None or rtt > s.max_rtt_ns:
            s.max_rtt_ns = rtt
        s.sum_rtt_ns += rtt
        self.histogram.add(rtt)
        if self.timeseries is not None:
            self.timeseries.append(sample.sequence, rtt)


def record(acc: SummaryAccumulator, sample: RoundTripSample) -> SummaryAccumulator:
    acc.record(sample)
    return acc


def summarize(samples: Iterable[RoundTripSample], deadline_ns: int, **kw) -> SummaryAccumulator:
    acc = SummaryAccumulator(deadline_ns, **kw)
    for s in samples:
        acc.record(s)
    return acc


def percentile(rtts, p: float) -> int:
    """Nearest-rank percentile: the smallest value with at least ``p`` of the data at or below it."""
    if not 0 <= p <= 1:
        raise ValueError(f"percentile fraction must be in [0, 1], got {p}")
    values = np.sort(np.asarray(rtts, dtype=np.int64))
    n = values.size
    if n == 0:
        raise UndefinedStatistic("percentile of an empty sample set")
    rank = max(1, math.ceil(round(p * n, 9)))
    return int(values[rank - 1])
