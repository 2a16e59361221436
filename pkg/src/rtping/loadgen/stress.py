"""In-process equivalent of the ``stress`` tool: CPU, sync-I/O, VM and disk workers.

Each worker is a separate process so CPU workers load real cores instead of
contending for one interpreter lock.
"""

from __future__ import annotations

import argparse
import mmap
import multiprocessing as mp
import os
import re
import tempfile
import time
from dataclasses import dataclass, field

PAGE = mmap.PAGESIZE
_SIZE_RE = re.compile(r"^(\d+)([bBkKmMgG]?)$")
_SIZE_MULT = {"": 1, "b": 1, "k": 1024, "m": 1024**2, "g": 1024**3}
DEFAULT_VM_BYTES = 256 * 1024**2
DEFAULT_HDD_BYTES = 1024**3


def parse_size(text: str) -> int:
    """``128M`` -> 134217728. Suffixes B/K/M/G are powers of 1024, as in stress."""
    m = _SIZE_RE.match(str(text).strip())
    if not m:
        raise ValueError(f"invalid size {text!r}")
    return int(m.group(1)) * _SIZE_MULT[m.group(2).lower()]


def parse_duration(text: str) -> float:
    """``10``, ``10s``, ``5m``, ``1h`` -> seconds."""
    m = re.match(r"^(\d+(?:\.\d+)?)([smhd]?)$", str(text).strip())
    if not m:
        raise ValueError(f"invalid duration {text!r}")
    return float(m.group(1)) * {"": 1, "s": 1, "m": 60, "h": 3600, "d": 86400}[m.group(2)]


@dataclass(frozen=True)
class StressSpec:
    cpu_workers: int = 0
    io_workers: int = 0
    vm_workers: int = 0
    vm_bytes: int = DEFAULT_VM_BYTES
    disk_workers: int = 0
    disk_bytes: int = DEFAULT_HDD_BYTES
    duration: float | None = None  # seconds; None runs until stopped

    def __post_init__(self):
        for name in ("cpu_workers", "io_workers", "vm_workers", "vm_bytes", "disk_workers", "disk_bytes"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not (self.cpu_workers or self.io_workers or self.vm_workers or self.disk_workers):
            raise ValueError("stress spec needs at least one worker")
        if self.duration is not None and self.duration <= 0:
            raise ValueError("duration must be positive")

    @classmethod
    def parse(cls, text: str | list[str]) -> StressSpec:
        """Parse stress(1) flags, e.g. ``-c 2 -i 2 -m 2 --vm-bytes 128M -d 2 --hdd-bytes 15M``."""
        argv = text.split() if isinstance(text, str) else list(text)
        if argv and argv[0] == "stress":
            argv = argv[1:]
        p = argparse.ArgumentParser(prog="stress", add_help=False, exit_on_error=False)
        p.add_argument("-c", "--cpu", type=int, default=0)
        p.add_argument("-i", "--io", type=int, default=0)
        p.add_argument("-m", "--vm", type=int, default=0)
        p.add_argument("--vm-bytes", type=parse_size, default=DEFAULT_VM_BYTES)
        p.add_argument("-d", "--hdd", type=int, default=0)
        p.add_argument("--hdd-bytes", type=parse_size, default=DEFAULT_HDD_BYTES)
        p.add_argument("-t", "--timeout", type=parse_duration, default=None)
        try:
            ns, rest = p.parse_known_args(argv)
        except argparse.ArgumentError as exc:
            raise ValueError(str(exc)) from exc
        if rest:
            raise ValueError(f"unsupported stress option {rest[0]!r}")
        return cls(ns.cpu, ns.io, ns.vm, ns.vm_bytes, ns.hdd, ns.hdd_bytes, ns.timeout)

    def to_args(self) -> str:
        parts = []
        for flag, n in (("-c", self.cpu_workers), ("-i", self.io_workers), ("-m", self.vm_workers)):
            if n:
                parts += [flag, str(n)]
        if self.vm_workers or self.vm_bytes != DEFAULT_VM_BYTES:
            parts += ["--vm-bytes", _fmt_size(self.vm_bytes)]
        if self.disk_workers:
            parts += ["-d", str(self.disk_workers)]
        if self.disk_workers or self.disk_bytes != DEFAULT_HDD_BYTES:
            parts += ["--hdd-bytes", _fmt_size(self.disk_bytes)]
        if self.duration is not None:
            parts += ["-t", f"{self.duration:g}"]
        return " ".join(parts)

    def to_dict(self) -> dict:
        return {"args": self.to_args()}

    @classmethod
    def from_dict(cls, d: dict) -> StressSpec:
        if "args" in d:
            return cls.parse(d["args"])
        return cls(**d)


def _fmt_size(n: int) -> str:
    for suffix, mult in (("G", 1024**3), ("M", 1024**2), ("K", 1024)):
        if n % mult == 0:
            return f"{n // mult}{suffix}"
    return str(n)


REFERENCE_STRESS = StressSpec.parse("-c 2 -i 2 -m 2 --vm-bytes 128M -d 2 --hdd-bytes 15M")


@dataclass
class WorkerReport:
    kind: str
    index: int
    iterations: int = 0
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass
class StressReport:
    spec: StressSpec
    elapsed: float
    workers: list[WorkerReport] = field(default_factory=list)

    @property
    def failed(self) -> list[WorkerReport]:
        return [w for w in self.workers if not w.ok]

    def format(self) -> str:
        lines = [f"stress {self.spec.to_args()} ran {self.elapsed:.2f}s"]
        for w in self.workers:
            status = f"FAILED: {w.error}" if w.error else f"{w.iterations} iterations"
            lines.append(f"  {w.kind}[{w.index}] {status}")
        return "\n".join(lines)


def mem_available() -> int | None:
    try:
        with open("/proc/meminfo") as f:
            for line in f:
                if line.startswith("MemAvailable:"):
                    return int(line.split()[1]) * 1024
    except OSError:
        pass
    return None


def _cpu_worker(stop, counter, _arg):
    x = 0
    while not stop.is_set():
        for _ in range(10_000):
            x = (x * 1103515245 + 12345) & 0x7FFFFFFF
        counter.value += 1


def _io_worker(stop, counter, _arg):
    while not stop.is_set():
        os.sync()
        counter.value += 1


def _vm_worker(stop, counter, nbytes):
    avail = mem_available()
    if avail is not None and nbytes > avail:
        raise MemoryError(f"cannot allocate {nbytes} bytes, only {avail} available")
    buf = mmap.mmap(-1, nbytes, flags=mmap.MAP_PRIVATE | mmap.MAP_ANONYMOUS)
    try:
        while not stop.is_set():
            for off in range(0, nbytes, PAGE):
                buf[off] = (counter.value + 1) & 0xFF
            counter.value += 1
            # drop the pages so the next pass faults them in again, as stress --vm does
            buf.madvise(mmap.MADV_DONTNEED)
    finally:
        buf.close()


def _disk_worker(stop, counter, nbytes):
    chunk = b"Z" * min(nbytes, 1 << 20) if nbytes else b""
    while not stop.is_set():
        with tempfile.NamedTemporaryFile(prefix="rtping-hdd-", dir=os.environ.get("RTPING_STRESS_DIR")) as f:
            left = nbytes
            while left > 0 and not stop.is_set():
                n = min(left, len(chunk))
                f.write(chunk[:n])
                left -= n
            f.flush()
            os.fsync(f.fileno())
        counter.value += 1


_WORKERS = {"cpu": _cpu_worker, "io": _io_worker, "vm": _vm_worker, "hdd": _disk_worker}


def _run_worker(kind, stop, counter, arg, errq, index):
    try:
        _WORKERS[kind](stop, counter, arg)
    except BaseException as exc:  # noqa: BLE001 - the parent reports any failure
        errq.put((kind, index, f"{type(exc).__name__}: {exc}"))


class StressRunner:
    """Start workers with :meth:`start`, stop them with :meth:`stop`."""

    def __init__(self, spec: StressSpec):
        self.spec = spec
        ctx = mp.get_context("fork")
        self._ctx = ctx
        self._stop = ctx.Event()
        self._errq = ctx.Queue()
        self._procs = []
        self._started = None

    def start(self) -> StressRunner:
        s = self.spec
        plan = ([("cpu", None)] * s.cpu_workers + [("io", None)] * s.io_workers
                + [("vm", s.vm_bytes)] * s.vm_workers + [("hdd", s.disk_bytes)] * s.disk_workers)
        counts = {}
        for kind, arg in plan:
            index = counts.get(kind, 0)
            counts[kind] = index + 1
            counter = self._ctx.Value("q", 0, lock=False)
            p = self._ctx.Process(target=_run_worker, args=(kind, self._stop, counter, arg, self._errq, index),
                                  daemon=True)
            p.start()
            self._procs.append((kind, index, counter, p))
        self._started = time.monotonic()
        return self

    def stop(self) -> StressReport:
        self._stop.set()
        for _, _, _, p in self._procs:
            p.join(10)
            if p.is_alive():
                p.kill()
                p.join()
        elapsed = time.monotonic() - (self._started or time.monotonic())
        errors = {}
        while True:
            try:
                kind, index, msg = self._errq.get(timeout=0.1)
            except Exception:
                break
            errors[(kind, index)] = msg
        workers = []
        for kind, index, counter, p in self._procs:
            err = errors.get((kind, index))
            if err is None and p.exitcode not in (0, None):
                err = f"worker exited with code {p.exitcode}"
            workers.append(WorkerReport(kind, index, counter.value, err))
        return StressReport(self.spec, elapsed, workers)


def run_stress(spec: StressSpec, duration: float | None = None) -> StressReport:
    duration = duration if duration is not None else spec.duration
    if duration is None:
        raise ValueError("run_stress needs a duration (use StressRunner for open-ended load)")
    runner = StressRunner(spec).start()
    try:
        time.sleep(duration)
    finally:
        report = runner.stop()
    return report
