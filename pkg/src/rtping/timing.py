"""Periodic cycle engine on CLOCK_MONOTONIC.

All timestamps are integer nanoseconds since the monotonic epoch. The cycle
schedule is anchored once at ``t0`` and never re-anchored, so wake-up latency
in one cycle cannot shift the targets of later cycles.
"""

from __future__ import annotations

import ctypes
import ctypes.util
import errno
import os
import time
from dataclasses import dataclass
from typing import Callable, Iterator, NamedTuple

NSEC_PER_SEC = 1_000_000_000
NSEC_PER_MSEC = 1_000_000
NSEC_PER_USEC = 1_000
U64_MAX = 2**64 - 1

DEFAULT_PERIOD_NS = 1_000_000
DEFAULT_WARMUP_CYCLES = 1_000

_CLOCK_MONOTONIC = time.CLOCK_MONOTONIC
_TIMER_ABSTIME = 1


class ClockError(RuntimeError):
    """The monotonic clock or the absolute sleep primitive is unusable."""


class _Timespec(ctypes.Structure):
    _fields_ = [("tv_sec", ctypes.c_long), ("tv_nsec", ctypes.c_long)]


def _load_clock_nanosleep():
    try:
        libc = ctypes.CDLL(ctypes.util.find_library("c") or None, use_errno=True)
        fn = libc.clock_nanosleep
    except (OSError, AttributeError):
        return None
    fn.argtypes = [ctypes.c_int, ctypes.c_int, ctypes.POINTER(_Timespec), ctypes.POINTER(_Timespec)]
    fn.restype = ctypes.c_int
    return fn


_clock_nanosleep = _load_clock_nanosleep()

try:
    time.clock_gettime_ns(_CLOCK_MONOTONIC)
except OSError as exc:  # pragma: no cover - every supported platform has it
    raise ClockError(f"CLOCK_MONOTONIC unavailable: {exc}") from exc


def now() -> int:
    """Current CLOCK_MONOTONIC time in nanoseconds."""
    return time.clock_gettime_ns(_CLOCK_MONOTONIC)


def elapsed(start: int, end: int) -> int:
    return end - start


def has_absolute_sleep() -> bool:
    return _clock_nanosleep is not None


def sleep_until(target: int) -> int:
    """Sleep until the absolute monotonic time ``target`` and return the wake time.

    Uses clock_nanosleep(CLOCK_MONOTONIC, TIMER_ABSTIME) when libc exposes it,
    resuming after EINTR with the same absolute target. A target in the past
    returns immediately. The returned wake time is always >= target.
    """
    if _clock_nanosleep is not None:
        ts = _Timespec(target // NSEC_PER_SEC, target % NSEC_PER_SEC)
        while True:
            rc = _clock_nanosleep(_CLOCK_MONOTONIC, _TIMER_ABSTIME, ctypes.byref(ts), None)
            if rc == 0:
                break
            if rc != errno.EINTR:
                raise ClockError(f"clock_nanosleep failed: {os.strerror(rc)}")
    else:
        while True:
            remaining = target - now()
            if remaining <= 0:
                break
            time.sleep(remaining / NSEC_PER_SEC)
    wake = now()
    # clock_nanosleep never returns early, but keep the contract explicit
    while wake < target:
        wake = now()
    return wake


@dataclass(frozen=True)
class CycleSpec:
    """Timing of the measurement loop: period, deadline and cycle counts."""

    period: int = DEFAULT_PERIOD_NS
    deadline: int | None = None
    warmup_cycles: int = DEFAULT_WARMUP_CYCLES
    total_cycles: int = 600_000

    def __post_init__(self):
        if self.deadline is None:
            object.__setattr__(self, "deadline", self.period)
        for name in ("period", "deadline", "warmup_cycles", "total_cycles"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool):
                raise TypeError(f"{name} must be an integer, got {value!r}")
        if self.period <= 0:
            raise ValueError(f"period must be > 0 ns, got {self.period}")
        if self.deadline <= 0:
            raise ValueError(f"deadline must be > 0 ns, got {self.deadline}")
        if self.total_cycles <= 0:
            raise ValueError(f"total_cycles must be > 0, got {self.total_cycles}")
        if self.warmup_cycles < 0:
            raise ValueError(f"warmup_cycles must be >= 0, got {self.warmup_cycles}")

    @property
    def cycles(self) -> int:
        """Number of scheduled cycles including warmup."""
        return self.warmup_cycles + self.total_cycles


def cycle_schedule(t0: int, spec: CycleSpec) -> range:
    """Absolute wake targets ``t0 + n * period`` for every scheduled cycle.

    Pure integer arithmetic; returned as a ``range`` so 600k targets cost
    nothing to build. Raises ValueError if the last target would not fit in
    an unsigned 64-bit nanosecond value.
    """
    if t0 < 0 or t0 > U64_MAX:
        raise ValueError(f"t0 out of range: {t0}")
    last = t0 + (spec.cycles - 1) * spec.period
    if last > U64_MAX:
        raise ValueError(f"schedule overflows 64-bit nanoseconds (last target {last})")
    return range(t0, last + 1, spec.period)


class Cycle(NamedTuple):
    index: int
    target: int
    wake: int
    overrun: bool


class CycleEngine:
    """Drives a fixed-anchor periodic loop.

    Iterating yields one :class:`Cycle` per scheduled target. ``overrun`` is
    set when the wake-up happened after the successor's target; the next
    target stays ``t0 + (n + 1) * period`` regardless.

    ``clock`` and ``sleeper`` are injectable so tests can script wake-up
    latencies without touching the real clock.
    """

    def __init__(
        self,
        spec: CycleSpec,
        t0: int | None = None,
        clock: Callable[[], int] = now,
        sleeper: Callable[[int], int] = sleep_until,
    ):
        self.spec = spec
        self._clock = clock
        self._sleeper = sleeper
        self.t0 = t0 if t0 is not None else clock() + spec.period
        self.schedule = cycle_schedule(self.t0, spec)
        self.overruns = 0
        self.max_wake_latency = 0

    def target(self, n: int) -> int:
        return self.schedule[n]

    def __iter__(self) -> Iterator[Cycle]:
        period = self.spec.period
        for n, target in enumerate(self.schedule):
            wake = self._sleeper(target)
            latency = wake - target
            if latency > self.max_wake_latency:
                self.max_wake_latency = latency
            overrun = latency > period
            if overrun:
                self.overruns += 1
            yield Cycle(n, target, wake, overrun)
