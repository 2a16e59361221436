"""rtping command line.

Exit codes (stable):
    0  success
    2  usage error (bad flag, bad value, invalid scenario)
    3  capability error (missing privilege, too few CPUs, absent device)
    4  runtime failure (I/O, network, failed run or verification)
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import re
import signal
import sys
import threading
from pathlib import Path

from . import __version__, timing
from .loadgen.stress import StressRunner, StressSpec, mem_available, parse_duration, run_stress
from .loadgen.traffic import DEFAULT_SINK_PORT, TrafficSpec, run_sink, run_traffic
from .report import (
    RecordError,
    TableError,
    emit_histogram,
    emit_timeseries,
    load_record,
    render_table,
    save_record,
)
from .rtt.server import run_server
from .rtt.sockets import DEFAULT_PORT, parse_endpoint
from .runner import LoadHandle, loopback_peer, preflight, run_client, run_matrix, select_backend
from .scenario import LOADS, MatrixSpec, ScenarioSpec, load_scenario
from .tuning.apply import apply, build_steps, verify
from .tuning.model import Mode, RtSchedParams
from .tuning.plan import CapabilityError, SystemInventory, plan_for_mode
from .tuning.sched import RtPermissionError, can_use_fifo, enter_rt

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CAPABILITY = 3
EXIT_RUNTIME = 4

log = logging.getLogger("rtping")


class UsageError(Exception):
    pass


def parse_rate(text: str) -> int:
    """``100M`` -> 100000000 bits/s. Suffixes k/M/G are decimal, as for link rates."""
    m = re.match(r"^(\d+(?:\.\d+)?)\s*([kKmMgG]?)(?:bit|bps|b)?(?:/s)?$", str(text).strip())
    if not m:
        raise argparse.ArgumentTypeError(f"invalid rate {text!r}")
    mult = {"": 1, "k": 10**3, "m": 10**6, "g": 10**9}[m.group(2).lower()]
    return int(round(float(m.group(1)) * mult))


def _positive_float(text):
    v = float(text)
    if v <= 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return v


def _duration(text):
    try:
        return parse_duration(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _us_to_ns(v):
    return None if v is None else int(round(v * 1000))


# scenario flags shared by client and server; each maps onto one ScenarioSpec field
def _add_scenario_flags(p: argparse.ArgumentParser, role: str) -> None:
    p.add_argument("--scenario", metavar="FILE", help="JSON scenario file; flags override its fields")
    p.add_argument("--bind", metavar="HOST[:PORT]", help="local address to bind")
    p.add_argument("--priority", type=int, dest="priority_mark", metavar="N",
                   help="SO_PRIORITY socket mark (default 4)")
    p.add_argument("--tos", type=lambda s: int(s, 0), help="IP TOS byte")
    p.add_argument("--mode", choices=[m.value for m in Mode], help="tuning mode (default rt-normal)")
    p.add_argument("--rt-priority", type=int, help="SCHED_FIFO priority (default 80)")
    p.add_argument("--rt-cpu", type=int, help="CPU to pin the measurement thread to")
    p.add_argument("--device", help="NIC carrying the RT traffic, recorded with the run")
    p.add_argument("--vlan-device", help="VLAN device, recorded with the run")
    if role == "server":
        return
    p.add_argument("--peer", metavar="HOST[:PORT]", help=f"echo server (default port {DEFAULT_PORT})")
    p.add_argument("--loopback", action="store_true", help="start a local echo server and measure against it")
    p.add_argument("--period-us", type=_positive_float, help="cycle period in µs (default 1000)")
    p.add_argument("--deadline-us", type=_positive_float, help="deadline in µs (default: the period)")
    p.add_argument("--cycles", type=int, dest="total_cycles", help="measured cycles after warm-up (default 600000)")
    p.add_argument("--duration", type=_duration, help="run length instead of --cycles, e.g. 60s or 10m")
    p.add_argument("--warmup", type=int, dest="warmup_cycles", help="cycles excluded from statistics (default 1000)")
    p.add_argument("--payload", type=int, dest="payload_size", help="probe size in bytes (default 500)")
    p.add_argument("--loss-horizon", type=int, help="periods before an unanswered probe counts as lost (default 4)")
    p.add_argument("--timeout", type=_positive_float, dest="receive_timeout", help=argparse.SUPPRESS)
    p.add_argument("--load", choices=LOADS, help="load condition recorded with the run (default idle)")
    p.add_argument("--stress-args", metavar="FLAGS", help="stress flags for --load stress, e.g. '-c 2 -m 2'")
    p.add_argument("--traffic-rate", type=parse_rate, help="traffic bandwidth for traffic loads (default 100M)")
    p.add_argument("--traffic-dest", metavar="HOST[:PORT]", help="traffic sink for tx-traffic")
    p.add_argument("--start-load", action="store_true", help="generate the --load condition during the run")
    p.add_argument("-o", "--output", help="write the JSON run record here")
    p.add_argument("--hist", dest="histogram_output", help="write histogram plot data here")
    p.add_argument("--timeseries", dest="timeseries_output", help="write time-series plot data here")


_FIELD_FLAGS = ("bind", "priority_mark", "tos", "mode", "rt_priority", "rt_cpu", "device", "vlan_device", "peer",
                "total_cycles", "warmup_cycles", "payload_size", "loss_horizon", "receive_timeout", "load",
                "output", "histogram_output", "timeseries_output")


def scenario_from_args(ns: argparse.Namespace, role: str) -> ScenarioSpec:
    """File fields first, then every flag that was given."""
    fields = load_scenario(ns.scenario) if getattr(ns, "scenario", None) else {}
    fields["role"] = role
    for name in _FIELD_FLAGS:
        v = getattr(ns, name, None)
        if v is not None:
            fields[name] = v
    if getattr(ns, "period_us", None) is not None:
        fields["period_ns"] = _us_to_ns(ns.period_us)
    if getattr(ns, "deadline_us", None) is not None:
        fields["deadline_ns"] = _us_to_ns(ns.deadline_us)
    if getattr(ns, "duration", None) is not None:
        if getattr(ns, "total_cycles", None) is not None:
            raise UsageError("--cycles and --duration are mutually exclusive")
        period = fields.get("period_ns", timing.DEFAULT_PERIOD_NS)
        fields["total_cycles"] = max(1, round(ns.duration * timing.NSEC_PER_SEC / period))
    if role == "server":
        fields.pop("peer", None)
        fields.setdefault("bind", f"0.0.0.0:{DEFAULT_PORT}")
    if getattr(ns, "loopback", False):
        if "peer" in fields and getattr(ns, "peer", None) is not None:
            raise UsageError("--peer and --loopback are mutually exclusive")
        fields["peer"] = "127.0.0.1:0"
    load = fields.pop("load", "idle")
    stress = fields.pop("stress", None)
    traffic = dict(fields.pop("traffic", None) or {})
    if getattr(ns, "stress_args", None) is not None:
        if load != "stress":
            raise UsageError("--stress-args needs --load stress")
        stress = {"args": ns.stress_args}
    if getattr(ns, "traffic_rate", None) is not None or getattr(ns, "traffic_dest", None) is not None:
        if load not in ("tx-traffic", "rx-traffic"):
            raise UsageError("--traffic-rate/--traffic-dest need a traffic load")
        if ns.traffic_rate is not None:
            traffic["target_bandwidth"] = ns.traffic_rate
        if ns.traffic_dest is not None:
            traffic["destination"] = ns.traffic_dest
    try:
        base = ScenarioSpec.from_dict(fields)
        return base.with_load(load, None, StressSpec.from_dict(stress) if stress else None,
                              TrafficSpec.from_dict(traffic) if traffic else None)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rtping", description="Real-time UDP round-trip latency benchmark and tuning.",
                                epilog="exit codes: 0 ok, 2 usage, 3 capability, 4 runtime failure")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", metavar="COMMAND")

    s = sub.add_parser("server", help="echo probes back to their sender")
    _add_scenario_flags(s, "server")
    s.add_argument("--duration", type=_duration, help="stop after this long")

    c = sub.add_parser("client", help="run the cyclic round-trip measurement")
    _add_scenario_flags(c, "client")

    t = sub.add_parser("tune", help="build, apply or verify a tuning plan")
    tsub = t.add_subparsers(dest="tune_command", metavar="ACTION")
    for name, helptext in (("show", "print the plan and the steps it implies"),
                           ("apply", "apply the plan"), ("verify", "compare the system with the plan")):
        tp = tsub.add_parser(name, help=helptext)
        tp.add_argument("--mode", required=True, choices=[m.value for m in Mode])
        tp.add_argument("--device", default="eth1", help="NIC (default eth1)")
        tp.add_argument("--vlan-device", help="VLAN device (default <device>.2)")
        tp.add_argument("--rt-cpu", type=int)
        tp.add_argument("--rt-priority", type=int, default=80)
        tp.add_argument("--priority", type=int, dest="priority_mark", default=4)
        tp.add_argument("--pid", type=int, help="task to tune (default: this process)")
        tp.add_argument("--backend", choices=["linux", "dry-run"], help="RTPING_BACKEND overrides")
        tp.add_argument("--json", action="store_true", help="machine-readable output")

    st = sub.add_parser("stress", help="stress(1)-compatible load, e.g. 'stress -c 2 -i 2 -m 2 --vm-bytes 128M'",
                        usage="rtping stress [--duration D] [-c N] [-i N] [-m N] [--vm-bytes B] [-d N] "
                              "[--hdd-bytes B] [-t T]")
    st.add_argument("--duration", type=_duration, help="run length (or -t in the stress flags)")
    st.set_defaults(flags=[])

    tr = sub.add_parser("traffic", help="paced best-effort UDP sender")
    tr.add_argument("--dest", required=True, metavar="HOST[:PORT]", help=f"sink (default port {DEFAULT_SINK_PORT})")
    tr.add_argument("--rate", type=parse_rate, default=100_000_000, help="bandwidth, e.g. 100M (default)")
    tr.add_argument("--payload", type=int, default=1470)
    tr.add_argument("--duration", type=_duration, help="run length (default: until interrupted)")
    tr.add_argument("--priority", type=int, default=0, help="SO_PRIORITY mark (default 0)")

    sk = sub.add_parser("sink", help="count received UDP bytes per window")
    sk.add_argument("--bind", default=f"0.0.0.0:{DEFAULT_SINK_PORT}", metavar="HOST[:PORT]")
    sk.add_argument("--duration", type=_duration)
    sk.add_argument("--window", type=_positive_float, default=1.0, help="window length in seconds")

    r = sub.add_parser("report", help="render run records")
    rsub = r.add_subparsers(dest="report_command", metavar="KIND")
    rt = rsub.add_parser("table", help="result table; all records must share a mode")
    rt.add_argument("records", nargs="+")
    for name in ("hist", "timeseries"):
        rp = rsub.add_parser(name, help=f"{name} plot data (two whitespace-separated columns)")
        rp.add_argument("record")
    for rp in rsub.choices.values():
        rp.add_argument("-o", "--output", help="write here instead of standard output")

    m = sub.add_parser("matrix", help="run every mode x load cell of a matrix file")
    m.add_argument("file")
    m.add_argument("--output-dir", help="override the matrix file's output_dir")
    m.add_argument("--backend", choices=["linux", "dry-run"], help="RTPING_BACKEND overrides")
    m.add_argument("--list", action="store_true", help="list the cells and exit")

    d = sub.add_parser("doctor", help="check what this host can run")
    d.add_argument("--device", help="NIC to inspect")
    d.add_argument("--json", action="store_true")
    return p


def parse_args(argv=None) -> argparse.Namespace:
    """Parse ``argv``; client/server invocations get a resolved ``ns.spec``."""
    parser = build_parser()
    ns, extra = parser.parse_known_args(argv)
    if extra:
        # stress(1) flags are passed through verbatim; anywhere else they are errors
        if ns.command != "stress":
            parser.error(f"unrecognized arguments: {' '.join(extra)}")
        ns.flags = extra
    if ns.command is None:
        parser.print_usage(sys.stderr)
        parser.exit(EXIT_USAGE, "rtping: error: a command is required\n")
    for attr, sub in (("tune_command", "tune"), ("report_command", "report")):
        if ns.command == sub and getattr(ns, attr) is None:
            parser.exit(EXIT_USAGE, f"rtping {sub}: error: an action is required\n")
    if ns.command in ("client", "server"):
        try:
            ns.spec = scenario_from_args(ns, ns.command)
        except (UsageError, ValueError, OSError) as exc:
            parser.exit(EXIT_USAGE, f"rtping {ns.command}: error: {exc}\n")
        if ns.command == "client" and not getattr(ns, "loopback", False) and ns.spec.peer is None:
            parser.exit(EXIT_USAGE, "rtping client: error: --peer or --loopback is required\n")
    return ns


def _stop_on_signals() -> threading.Event:
    stop = threading.Event()

    def handler(signum, frame):
        stop.set()

    for sig in (signal.SIGINT, signal.SIGTERM):
        signal.signal(sig, handler)
    return stop


def _write(text: str, path: str | None) -> None:
    if path:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


# commands

def cmd_server(ns) -> int:
    sc = ns.spec
    rt = sc.rt_params()
    stop = _stop_on_signals()
    if ns.duration:
        threading.Timer(ns.duration, stop.set).start()
    cpus = {sc.rt_cpu} if sc.rt_cpu is not None and rt else None

    def ready(addr):
        print(f"echo server on {addr[0]}:{addr[1]} mode={sc.mode.value}", flush=True)

    stats = run_server(sc.socket_config(), rt, stop, cpus=cpus, ready=ready)
    print(json.dumps(stats.to_dict()))
    return EXIT_OK


def cmd_client(ns) -> int:
    sc = ns.spec
    stop = _stop_on_signals()
    load = rep = None
    with contextlib.ExitStack() as stack:
        if ns.loopback:
            sc, _ = stack.enter_context(loopback_peer(sc))
        if ns.start_load and sc.load != "idle":
            load = LoadHandle(sc, ns.loopback)
        try:
            record = run_client(sc, stop=stop, keep_timeseries=bool(sc.timeseries_output or sc.output))
        finally:
            if load is not None:
                rep = load.stop()
                for k, v in rep.items():
                    log.info("%s: %s", k, v)
    if rep is not None:
        record.client["load_report"] = rep
    s = record.summary
    print(f"sent {s.count_sent} received {s.count_received} lost {s.count_lost} "
          f"missed {s.count_missed_deadline} (deadline {s.deadline_ns / 1000:g} µs) "
          f"min/avg/max {s.min_us}/{s.avg_us}/{s.max_us} µs")
    if sc.output:
        save_record(record, sc.output)
    if sc.histogram_output:
        _write(emit_histogram(record), sc.histogram_output)
    if sc.timeseries_output:
        _write(emit_timeseries(record), sc.timeseries_output)
    return EXIT_OK


def host_inventory(device: str | None, vlan_device: str | None = None, env=os.environ) -> SystemInventory:
    """Probe the host; RTPING_PROC_ROOT / RTPING_SYS_ROOT point the probe at a sandbox tree."""
    return SystemInventory.probe(device, vlan_device, env.get("RTPING_PROC_ROOT", "/proc"),
                                 env.get("RTPING_SYS_ROOT", "/sys"))


def _tune_plan(ns):
    inventory = host_inventory(ns.device, ns.vlan_device or f"{ns.device}.2")
    return plan_for_mode(ns.mode, inventory, rt_cpu=ns.rt_cpu, rt_priority=ns.rt_priority,
                         priority_mark=ns.priority_mark)


def cmd_tune(ns) -> int:
    plan = _tune_plan(ns)
    pid = ns.pid if ns.pid is not None else os.getpid()
    if ns.tune_command == "show":
        steps = build_steps(plan, pid)
        if ns.json:
            print(json.dumps({"plan": plan.to_dict(), "steps": [s.to_dict() for s in steps]}, indent=1))
        else:
            print(f"mode: {plan.mode.value} ({plan.mode.title})")
            for s in steps:
                print(f"  {s.id:<28} {s.target}")
        return EXIT_OK
    backend = select_backend(ns.backend)
    if ns.tune_command == "apply":
        report = apply(plan, backend, pid)
        print(json.dumps(report.to_dict(), indent=1) if ns.json else report.format())
        if report.ok:
            return EXIT_OK
        return EXIT_CAPABILITY if report.first_permission_failure else EXIT_RUNTIME
    report = verify(plan, backend, pid)
    print(json.dumps(report.to_dict(), indent=1) if ns.json else report.format())
    return EXIT_OK if report.consistent else EXIT_RUNTIME


def cmd_stress(ns) -> int:
    try:
        spec = StressSpec.parse(ns.flags)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    duration = ns.duration or spec.duration
    if duration is None:
        stop = _stop_on_signals()
        runner = StressRunner(spec).start()
        print(f"stress {spec.to_args()} running; interrupt to stop", flush=True)
        stop.wait()
        report = runner.stop()
    else:
        report = run_stress(spec, duration)
    print(report.format())
    return EXIT_RUNTIME if report.failed else EXIT_OK


def cmd_traffic(ns) -> int:
    spec = TrafficSpec(parse_endpoint(ns.dest, DEFAULT_SINK_PORT), ns.rate, ns.payload, ns.duration, ns.priority)
    stop = _stop_on_signals()
    report = run_traffic(spec, stop)
    print(report.format())
    return EXIT_OK


def cmd_sink(ns) -> int:
    stop = _stop_on_signals()
    report = run_sink(parse_endpoint(ns.bind, DEFAULT_SINK_PORT), ns.duration, stop, ns.window,
                      ready=lambda a: print(f"sink on {a[0]}:{a[1]}", flush=True))
    print(report.format())
    return EXIT_OK


def cmd_report(ns) -> int:
    if ns.report_command == "table":
        records = [load_record(p) for p in ns.records]
        try:
            text = render_table(records)
        except TableError as exc:
            raise UsageError(str(exc)) from exc
    elif ns.report_command == "hist":
        text = emit_histogram(load_record(ns.record))
    else:
        rec = load_record(ns.record)
        if rec.timeseries is None:
            raise UsageError(f"{ns.record} carries no time series")
        text = emit_timeseries(rec)
    _write(text, ns.output)
    return EXIT_OK


def cmd_matrix(ns) -> int:
    try:
        matrix = MatrixSpec.load(ns.file)
    except (ValueError, KeyError, TypeError) as exc:
        raise UsageError(f"{ns.file}: {exc}") from exc
    if ns.output_dir:
        matrix.output_dir = ns.output_dir
    if ns.list:
        for cell in matrix.cells():
            print(cell.name)
        return EXIT_OK
    backend = select_backend(ns.backend)
    inventory = host_inventory(matrix.base.device, matrix.base.vlan_device)
    result = run_matrix(matrix, backend, inventory, _stop_on_signals())
    print(result.format())
    if not result.failures:
        return EXIT_OK
    if all(c.kind == "capability" for c in result.failures):
        return EXIT_CAPABILITY
    return EXIT_RUNTIME


def doctor_checks(device: str | None = None) -> list[tuple[str, bool, str]]:
    inv = host_inventory(device)
    checks = []
    checks.append(("absolute clock_nanosleep", timing.has_absolute_sleep(),
                   "available" if timing.has_absolute_sleep() else "missing: falling back to relative sleeps"))
    fifo = can_use_fifo()
    checks.append(("SCHED_FIFO", fifo, "permitted" if fifo else "refused: needs CAP_SYS_NICE or RLIMIT_RTPRIO"))
    try:
        enter_rt(RtSchedParams("other", None, True)).restore()
        checks.append(("mlockall", True, "permitted"))
    except RtPermissionError as exc:
        checks.append(("mlockall", False, str(exc)))
    ncpu = len(inv.cpus)
    checks.append(("CPUs for affinity/isolation modes", ncpu >= 2, f"{ncpu} online"))
    problems = preflight(list(Mode), inv)
    for mode in Mode:
        checks.append((f"mode {mode.value}", mode not in problems, problems.get(mode, "ok")))
    rt = os.path.exists("/sys/kernel/realtime") and Path("/sys/kernel/realtime").read_text().strip() == "1"
    checks.append(("PREEMPT_RT kernel", rt, os.uname().release))
    if device:
        ok = inv.tx_queues >= 3
        checks.append((f"{device} TX queues", ok, f"{inv.tx_queues} (the reference map needs 3)"))
    avail = mem_available()
    checks.append(("memory for stress --vm-bytes 128M x2", avail is None or avail > 256 << 20,
                   "unknown" if avail is None else f"{avail >> 20} MiB available"))
    return checks


def cmd_doctor(ns) -> int:
    checks = doctor_checks(ns.device)
    if ns.json:
        print(json.dumps([{"check": c, "ok": ok, "detail": d} for c, ok, d in checks], indent=1))
    else:
        for name, ok, detail in checks:
            print(f"[{'ok' if ok else '!!'}] {name}: {detail}")
    return EXIT_OK


COMMANDS = {
    "server": cmd_server, "client": cmd_client, "tune": cmd_tune, "stress": cmd_stress,
    "traffic": cmd_traffic, "sink": cmd_sink, "report": cmd_report, "matrix": cmd_matrix, "doctor": cmd_doctor,
}


def main(argv=None) -> int:
    try:
        ns = parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * min(ns.verbose, 2), format="%(levelname)s %(message)s")
    try:
        return COMMANDS[ns.command](ns)
    except UsageError as exc:
        print(f"rtping {ns.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CapabilityError, PermissionError) as exc:
        print(f"rtping {ns.command}: capability error: {exc}", file=sys.stderr)
        return EXIT_CAPABILITY
    except RecordError as exc:
        print(f"rtping {ns.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (OSError, RuntimeError, ValueError) as exc:
        print(f"rtping {ns.command}: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
