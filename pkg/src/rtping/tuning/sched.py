"""Real-time setup of the calling thread: SCHED_FIFO, mlockall, CPU affinity."""

from __future__ import annotations

import ctypes
import ctypes.util
import os
from dataclasses import dataclass

from .model import RtSchedParams

MCL_CURRENT = 1
MCL_FUTURE = 2


class RtPermissionError(PermissionError):
    """Real-time setup was requested but the process lacks the privilege."""


def _libc():
    return ctypes.CDLL(ctypes.util.find_library("c") or None, use_errno=True)


def mlockall() -> None:
    libc = _libc()
    if libc.mlockall(MCL_CURRENT | MCL_FUTURE) != 0:
        err = ctypes.get_errno()
        raise RtPermissionError(
            err, f"mlockall failed ({os.strerror(err)}): needs CAP_IPC_LOCK or a larger RLIMIT_MEMLOCK")


def munlockall() -> None:
    _libc().munlockall()


@dataclass
class RtState:
    """What :func:`enter_rt` changed, so :meth:`restore` can undo it."""

    policy: int
    priority: int
    affinity: frozenset[int]
    locked: bool = False

    def restore(self) -> None:
        try:
            os.sched_setscheduler(0, self.policy, os.sched_param(self.priority))
        except OSError:
            pass
        try:
            os.sched_setaffinity(0, self.affinity)
        except OSError:
            pass
        if self.locked:
            munlockall()


def enter_rt(params: RtSchedParams | None, cpus=None) -> RtState:
    """Apply ``params`` and ``cpus`` to the calling thread.

    Raises RtPermissionError naming the missing privilege when FIFO scheduling
    or memory locking is refused.
    """
    state = RtState(os.sched_getscheduler(0), os.sched_getparam(0).sched_priority,
                    frozenset(os.sched_getaffinity(0)))
    if cpus:
        os.sched_setaffinity(0, cpus)
    if params is not None and params.realtime:
        try:
            os.sched_setscheduler(0, os.SCHED_FIFO, os.sched_param(params.priority))
        except PermissionError as exc:
            state.restore()
            raise RtPermissionError(
                exc.errno, f"SCHED_FIFO priority {params.priority} refused: "
                "needs CAP_SYS_NICE or RLIMIT_RTPRIO >= the requested priority") from exc
    if params is not None and params.lock_memory:
        try:
            mlockall()
        except RtPermissionError:
            state.restore()
            raise
        state.locked = True
    return state


def can_use_fifo(priority: int = 1) -> bool:
    """Probe whether SCHED_FIFO is permitted, leaving the thread unchanged."""
    try:
        state = enter_rt(RtSchedParams("fifo", priority, False))
    except PermissionError:
        return False
    state.restore()
    return True
