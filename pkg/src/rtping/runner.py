"""Orchestration: one measured run into a RunRecord, and the mode x load matrix."""

from __future__ import annotations

import contextlib
import datetime as dt
import logging
import os
import threading
from dataclasses import dataclass, field, replace
from pathlib import Path

from . import timing
from .loadgen.stress import StressRunner
from .loadgen.traffic import UdpSink, run_traffic
from .report import RunRecord, environment_snapshot, save_record
from .rtt.client import measure
from .rtt.peer import EchoProcess
from .rtt.sockets import SocketConfig
from .scenario import MatrixSpec, ScenarioSpec
from .tuning.apply import apply
from .tuning.backend import DryRunBackend, LinuxBackend, SystemBackend
from .tuning.model import Mode, RtSchedParams, TuningPlan
from .tuning.plan import CapabilityError, SystemInventory, plan_for_mode
from .tuning.sched import can_use_fifo

log = logging.getLogger(__name__)


def _iso_now() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="milliseconds")


def select_backend(name: str | None = None, env=os.environ) -> SystemBackend:
    """``dry-run`` or ``linux``; the RTPING_BACKEND variable wins over ``name``."""
    name = env.get("RTPING_BACKEND") or name or "linux"
    if name == "dry-run":
        return DryRunBackend()
    if name == "linux":
        return LinuxBackend.from_env(env)
    raise ValueError(f"unknown backend {name!r} (expected dry-run or linux)")


def run_client(scenario: ScenarioSpec, plan: TuningPlan | None = None, stop: threading.Event | None = None,
               keep_timeseries: bool = True) -> RunRecord:
    """Measure with ``scenario`` and package the result with the plan that was in force."""
    cpus = plan.app_cpus if plan is not None and plan.app_cpus else None
    if cpus is None and scenario.rt_cpu is not None and scenario.mode is not Mode.NO_RT:
        cpus = {scenario.rt_cpu}
    started = _iso_now()
    run = measure(scenario.socket_config(), scenario.cycle_spec(), scenario.rt_params(),
                  payload_size=scenario.payload_size, loss_horizon=scenario.loss_horizon, stop=stop, cpus=cpus)
    acc = run.accumulate(keep_timeseries=keep_timeseries)
    env = environment_snapshot(scenario.mode, [scenario.device, scenario.vlan_device])
    client = {
        "send_errors": run.send_errors,
        "decode_errors": run.decode_errors,
        "send_overruns": run.send_overruns,
        "max_wake_latency_ns": run.max_wake_latency_ns,
        "warmup_cycles": scenario.warmup_cycles,
        "stopped_early": run.stopped_early,
        "elapsed_ns": run.finished_ns - run.started_ns,
    }
    return RunRecord(scenario, acc.summary, acc.histogram, acc.timeseries, env, started, _iso_now(), plan, client)


@contextlib.contextmanager
def loopback_peer(scenario: ScenarioSpec):
    """Run a local echo server and point the scenario at it.

    In RT modes the echo side gets a FIFO priority one above the client's so
    it answers as soon as a probe arrives, which is what a separate board would do.
    """
    rt = None
    if scenario.mode is not Mode.NO_RT and can_use_fifo(scenario.rt_priority + 1):
        rt = RtSchedParams("fifo", min(99, scenario.rt_priority + 1), False)
    cfg = SocketConfig(local=("127.0.0.1", 0), priority_mark=scenario.priority_mark, tos=scenario.tos)
    echo = EchoProcess(cfg, rt)
    try:
        yield replace(scenario, peer=echo.address), echo
    finally:
        echo.stop()


class LoadHandle:
    """A running load condition; :meth:`stop` returns a JSON-able report."""

    def __init__(self, scenario: ScenarioSpec, loopback: bool):
        self.scenario = scenario
        self._stress = None
        self._sink = None
        self._threads: list[threading.Thread] = []
        self._stop = threading.Event()
        self._results: dict = {}
        load = scenario.load
        if load == "stress":
            self._stress = StressRunner(scenario.stress).start()
        elif load in ("tx-traffic", "rx-traffic"):
            traffic = scenario.traffic
            if loopback or load == "rx-traffic":
                # on loopback both ends are local; for rx the external sender targets our sink
                bind = ("127.0.0.1", 0) if loopback else ("0.0.0.0", traffic.destination[1])
                self._sink = UdpSink(bind)
                self._spawn("sink", lambda: self._sink.serve(self._stop))
                if loopback:
                    traffic = replace(traffic, destination=self._sink.address)
            if loopback or load == "tx-traffic":
                self._spawn("traffic", lambda: run_traffic(replace(traffic, duration=None), self._stop))

    def _spawn(self, key, fn):
        def body():
            try:
                self._results[key] = fn()
            except Exception as exc:  # reported with the cell, never kills the matrix
                self._results[key] = exc
        t = threading.Thread(target=body, name=f"load-{key}", daemon=True)
        t.start()
        self._threads.append(t)

    def stop(self) -> dict:
        out: dict = {"load": self.scenario.load}
        if self._stress is not None:
            rep = self._stress.stop()
            out["stress"] = rep.format()
            if rep.failed:
                out["stress_failures"] = [f"{w.kind}[{w.index}]: {w.error}" for w in rep.failed]
        self._stop.set()
        for t in self._threads:
            t.join(10)
        if self._sink is not None:
            self._sink.close()
        for key, res in self._results.items():
            out[key] = f"error: {res}" if isinstance(res, Exception) else res.format()
        return out


@dataclass
class CellOutcome:
    name: str
    path: Path | None = None
    record: RunRecord | None = None
    error: str | None = None
    kind: str | None = None  # capability | runtime

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass
class MatrixResult:
    cells: list[CellOutcome] = field(default_factory=list)

    @property
    def records(self) -> list[RunRecord]:
        return [c.record for c in self.cells if c.record is not None]

    @property
    def failures(self) -> list[CellOutcome]:
        return [c for c in self.cells if not c.ok]

    def format(self) -> str:
        lines = [f"{len(self.cells) - len(self.failures)}/{len(self.cells)} cells completed"]
        for c in self.failures:
            lines.append(f"  FAILED {c.name} ({c.kind}): {c.error}")
        return "\n".join(lines)


def preflight(modes, inventory: SystemInventory) -> dict[Mode, str]:
    """Up-front capability problems per mode (empty when everything can run)."""
    problems: dict[Mode, str] = {}
    fifo = None
    for mode in modes:
        mode = Mode(mode)
        if mode is Mode.NO_RT:
            continue
        if fifo is None:
            fifo = can_use_fifo()
        if not fifo:
            problems[mode] = "SCHED_FIFO not permitted: needs CAP_SYS_NICE or RLIMIT_RTPRIO"
        elif mode in (Mode.RT_AFFINITIES, Mode.RT_ISOLATION) and len(inventory.cpus) < 2:
            problems[mode] = f"{mode.value} needs at least 2 CPUs, host has {len(inventory.cpus)}"
    return problems


def run_matrix(matrix: MatrixSpec, backend: SystemBackend, inventory: SystemInventory | None = None,
               stop: threading.Event | None = None, echo=print) -> MatrixResult:
    """Run every cell in order; a failing cell is recorded and the next one starts."""
    base = matrix.base
    if inventory is None:
        inventory = SystemInventory.probe(base.device, base.vlan_device)
    problems = preflight(matrix.modes, inventory)
    out_dir = Path(matrix.output_dir)
    result = MatrixResult()
    for cell in matrix.cells():
        if stop is not None and stop.is_set():
            break
        outcome = CellOutcome(cell.name)
        result.cells.append(outcome)
        echo(f"== {cell.name}")
        if cell.mode in problems:
            outcome.error, outcome.kind = problems[cell.mode], "capability"
            echo(f"   skipped: {outcome.error}")
            continue
        sc = cell.scenario
        try:
            plan = plan_for_mode(cell.mode, inventory, rt_cpu=sc.rt_cpu, rt_priority=sc.rt_priority,
                                 priority_mark=sc.priority_mark)
        except CapabilityError as exc:
            outcome.error, outcome.kind = str(exc), "capability"
            echo(f"   skipped: {exc}")
            continue
        report = apply(plan, backend, pid=os.getpid())
        if not report.ok:
            bad = report.failed[0]
            outcome.error = f"tuning step {bad.id} failed: {bad.error}"
            outcome.kind = "capability" if report.first_permission_failure else "runtime"
            echo(f"   {outcome.error}")
            continue
        try:
            outcome.record = _run_cell(sc, plan, matrix.loopback, stop)
        except PermissionError as exc:
            outcome.error, outcome.kind = str(exc), "capability"
        except Exception as exc:  # noqa: BLE001 - any cell failure is reported, not fatal
            log.debug("cell %s failed", cell.name, exc_info=True)
            outcome.error, outcome.kind = f"{type(exc).__name__}: {exc}", "runtime"
        if outcome.record is not None:
            outcome.path = save_record(outcome.record, out_dir / f"{cell.name}.json")
            s = outcome.record.summary
            echo(f"   {s.count_received}/{s.count_sent} received, min/avg/max {s.min_us}/{s.avg_us}/{s.max_us} us, "
                 f"missed {s.count_missed_deadline} -> {outcome.path}")
        else:
            echo(f"   failed: {outcome.error}")
    return result


def _run_cell(sc: ScenarioSpec, plan: TuningPlan, loopback: bool, stop) -> RunRecord:
    with contextlib.ExitStack() as stack:
        if loopback:
            sc, _ = stack.enter_context(loopback_peer(sc))
        load = LoadHandle(sc, loopback)
        try:
            # let the load reach steady state before the first probe
            timing.sleep_until(timing.now() + 200 * timing.NSEC_PER_MSEC)
            record = run_client(sc, plan, stop)
        finally:
            load_report = load.stop()
        record.client["load_report"] = load_report
        return record
