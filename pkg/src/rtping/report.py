"""Run records and their presentation: result tables, histogram and time-series plot data.

A run record is persisted as one JSON document::

    {
      "schema": "rtping.run-record",
      "schema_version": 1,
      "scenario": {...ScenarioSpec fields...},
      "summary": {...RunSummary counters, integer ns...},
      "histogram": {"bin_width_ns", "overflow_threshold_ns", "overflow_count", "bins": [[edge_ns, count], ...]},
      "timeseries": {"index": [...], "rtt_ns": [...]} | null,
      "environment": {"kernel", "mode", "devices", ...},
      "started_at": ISO-8601, "finished_at": ISO-8601,
      "tuning_plan": {...TuningPlan...} | null,
      "client": {...free-form run diagnostics...}
    }

Plot files are whitespace-delimited two-column text without headers.
"""

from __future__ import annotations

import json
import os
import platform
from dataclasses import dataclass, field
from pathlib import Path

from .scenario import LOADS, ScenarioSpec
from .stats import LatencyHistogram, RunSummary, TimeSeries, ns_to_us
from .tuning.model import Mode, TuningPlan

SCHEMA = "rtping.run-record"
SCHEMA_VERSION = 1

COLUMNS = ("Min(µs)", "Avg(µs)", "Max(µs)", "Missed deadline", "Packet loss")
_WIDTHS = (24, 9, 9, 9, 18, 18)


class RecordError(ValueError):
    """A run record failed schema or invariant validation."""


class TableError(ValueError):
    pass


@dataclass
class RunRecord:
    scenario: ScenarioSpec
    summary: RunSummary
    histogram: LatencyHistogram
    timeseries: TimeSeries | None = None
    environment: dict = field(default_factory=dict)
    started_at: str | None = None
    finished_at: str | None = None
    tuning_plan: TuningPlan | None = None
    client: dict = field(default_factory=dict)

    @property
    def mode(self) -> Mode:
        return Mode(self.environment.get("mode", self.scenario.mode))

    @property
    def kernel(self) -> str:
        return self.environment.get("kernel", "unknown")

    def check(self) -> None:
        """Raise RecordError unless the summary, histogram and series agree."""
        s = self.summary
        try:
            s.check()
        except ValueError as exc:
            raise RecordError(f"invariant violation: {exc}") from exc
        if self.histogram.total != s.count_received:
            raise RecordError(f"invariant violation: histogram holds {self.histogram.total} samples, "
                              f"summary received {s.count_received}")
        if self.timeseries is not None and len(self.timeseries) != s.count_received:
            raise RecordError(f"invariant violation: time series holds {len(self.timeseries)} points, "
                              f"summary received {s.count_received}")
        if s.deadline_ns != self.scenario.cycle_spec().deadline:
            raise RecordError("invariant violation: summary deadline differs from the scenario's")

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA,
            "schema_version": SCHEMA_VERSION,
            "scenario": self.scenario.to_dict(),
            "summary": {k: v for k, v in vars(self.summary).items()},
            "histogram": self.histogram.to_dict(),
            "timeseries": self.timeseries.to_dict() if self.timeseries is not None else None,
            "environment": self.environment,
            "started_at": self.started_at,
            "finished_at": self.finished_at,
            "tuning_plan": self.tuning_plan.to_dict() if self.tuning_plan is not None else None,
            "client": self.client,
        }

    @classmethod
    def from_dict(cls, d: dict) -> RunRecord:
        if d.get("schema") != SCHEMA:
            raise RecordError(f"schema mismatch: expected {SCHEMA!r}, got {d.get('schema')!r}")
        if d.get("schema_version") != SCHEMA_VERSION:
            raise RecordError(f"schema mismatch: unsupported version {d.get('schema_version')!r}")
        try:
            rec = cls(
                ScenarioSpec.from_dict(d["scenario"]),
                RunSummary.from_dict(d["summary"]),
                LatencyHistogram.from_dict(d["histogram"]),
                TimeSeries.from_dict(d["timeseries"]) if d.get("timeseries") is not None else None,
                dict(d.get("environment") or {}),
                d.get("started_at"),
                d.get("finished_at"),
                TuningPlan.from_dict(d["tuning_plan"]) if d.get("tuning_plan") else None,
                dict(d.get("client") or {}),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, RecordError):
                raise
            raise RecordError(f"schema mismatch: {type(exc).__name__}: {exc}") from exc
        rec.check()
        return rec


def environment_snapshot(mode: Mode | str, devices=()) -> dict:
    return {
        "kernel": platform.release(),
        "kernel_version": platform.version(),
        "machine": platform.machine(),
        "hostname": platform.node(),
        "cpus": os.cpu_count(),
        "mode": Mode(mode).value,
        "devices": [d for d in devices if d],
        "python": platform.python_version(),
    }


def save_record(record: RunRecord, path: str | Path) -> Path:
    record.check()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(record.to_dict(), indent=1, ensure_ascii=False) + "\n")
    tmp.replace(path)
    return path


def load_record(path: str | Path) -> RunRecord:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise RecordError(f"{path}: not a JSON document: {exc}") from exc
    if not isinstance(data, dict):
        raise RecordError(f"{path}: schema mismatch: top level is not an object")
    return RunRecord.from_dict(data)


# tables

def load_label(scenario: ScenarioSpec) -> str:
    if scenario.load == "idle":
        return "Idle"
    if scenario.load == "stress":
        return "Stress"
    direction = "TX" if scenario.load == "tx-traffic" else "RX"
    return f"{direction} traffic at {scenario.traffic.target_bandwidth / 1e6:g} Mbps"


def _us(v: int | None) -> str:
    return "-" if v is None else str(ns_to_us(v))


def table_rows(records: list[RunRecord]) -> list[list[str]]:
    """Cell text per row, ordered by load condition (stable within a condition)."""
    order = {load: i for i, load in enumerate(LOADS)}
    rows = []
    for r in sorted(records, key=lambda r: order[r.scenario.load]):
        s = r.summary
        avg = "-" if s.avg_us is None else str(s.avg_us)
        rows.append([load_label(r.scenario), _us(s.min_rtt_ns), avg, _us(s.max_rtt_ns),
                     f"{s.count_missed_deadline} / {s.count_sent}", f"{s.count_lost} / {s.count_sent}"])
    return rows


def table_caption(records: list[RunRecord]) -> str:
    first = records[0]
    return f"{first.mode.title}, Kernel version: {first.kernel}"


def render_table(records: list[RunRecord]) -> str:
    """One table per tuning mode, rows are load conditions."""
    if not records:
        raise TableError("empty table: no run records given")
    modes = {r.mode for r in records}
    if len(modes) > 1:
        raise TableError(f"records mix tuning modes ({', '.join(sorted(m.value for m in modes))}); "
                         "render one table per mode")
    lines = [table_caption(records), _fmt_row(["", *COLUMNS])]
    lines += [_fmt_row(cells) for cells in table_rows(records)]
    return "\n".join(lines) + "\n"


def _fmt_row(cells) -> str:
    head, *rest = cells
    return (f"{head:<{_WIDTHS[0]}}" + "".join(f"{c:>{w}}" for c, w in zip(rest, _WIDTHS[1:]))).rstrip()


# plot data

def _fmt_us(ns: int) -> str:
    if ns % 1000 == 0:
        return str(ns // 1000)
    return f"{ns / 1000:.3f}"


def emit_histogram(record: RunRecord | LatencyHistogram) -> str:
    """``<bin lower edge µs> <count>`` per nonempty bin; overflow as a bin at the threshold."""
    h = record.histogram if isinstance(record, RunRecord) else record
    lines = [f"{_fmt_us(edge)} {count}" for edge, count in h.nonzero()]
    if h.overflow_count:
        lines.append(f"{_fmt_us(h.overflow_threshold)} {h.overflow_count}")
    return "".join(line + "\n" for line in lines)


def parse_histogram(text: str, bin_width: int = 1000, overflow_threshold: int = 100_000_000) -> LatencyHistogram:
    h = LatencyHistogram(bin_width, overflow_threshold)
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        try:
            us, count = line.split()
            edge, count = round(float(us) * 1000), int(count)
        except ValueError as exc:
            raise ValueError(f"line {lineno}: expected '<µs> <count>', got {line!r}") from exc
        if edge >= overflow_threshold:
            h.overflow_count += count
        elif edge % bin_width or edge < 0:
            raise ValueError(f"line {lineno}: {us} µs is not a bin edge")
        else:
            h.bins[edge // bin_width] += count
    return h


def emit_timeseries(record: RunRecord | TimeSeries) -> str:
    """``<cycle index> <rtt µs>`` per received sample, index order, µs to 3 decimals."""
    ts = record.timeseries if isinstance(record, RunRecord) else record
    if ts is None:
        raise ValueError("record carries no time series")
    return "".join(f"{i} {r / 1000:.3f}\n" for i, r in zip(ts.indices, ts.rtts))


def parse_timeseries(text: str) -> TimeSeries:
    ts = TimeSeries()
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        try:
            i, us = line.split()
            ts.append(int(i), round(float(us) * 1000))
        except ValueError as exc:
            raise ValueError(f"line {lineno}: {exc}") from exc
    return ts
