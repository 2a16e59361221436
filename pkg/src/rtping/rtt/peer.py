"""Echo server in a child process, for loopback runs on a single host.

On one machine the echo side stands in for a separate board, so it should
not compete with the client for the interpreter or, on a single CPU, for the
processor: give it a FIFO priority above the client's so it echoes as soon
as a probe lands.
"""

from __future__ import annotations

import multiprocessing as mp

from ..tuning.model import RtSchedParams
from .server import FaultPlan, ServerStats, run_server
from .sockets import SocketConfig


def _child(cfg, rt, fault, cpus, stop, conn):
    try:
        stats = run_server(cfg, rt, stop, fault, cpus, ready=conn.send)
        conn.send(stats.to_dict())
    except Exception as exc:  # report to the parent instead of dying silently
        conn.send(exc)


class EchoProcess:
    def __init__(self, cfg: SocketConfig | None = None, rt: RtSchedParams | None = None,
                 fault: FaultPlan | None = None, cpus=None, start_timeout: float = 10.0):
        cfg = cfg or SocketConfig(local=("127.0.0.1", 0))
        ctx = mp.get_context("fork")
        self._stop = ctx.Event()
        self._conn, child = ctx.Pipe(duplex=False)
        self._proc = ctx.Process(target=_child, args=(cfg, rt, fault, cpus, self._stop, child), daemon=True)
        self._proc.start()
        if not self._conn.poll(start_timeout):
            self._proc.kill()
            raise TimeoutError("echo server did not start")
        msg = self._conn.recv()
        if isinstance(msg, Exception):
            self._proc.join()
            raise msg
        self.address: tuple[str, int] = tuple(msg)

    def stop(self, timeout: float = 5.0) -> ServerStats:
        self._stop.set()
        if not self._conn.poll(timeout):
            self._proc.kill()
            raise TimeoutError("echo server did not stop")
        msg = self._conn.recv()
        self._proc.join(timeout)
        if isinstance(msg, Exception):
            raise msg
        return ServerStats(**msg)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        if self._proc.is_alive():
            self.stop()
