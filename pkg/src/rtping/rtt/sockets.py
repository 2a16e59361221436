from __future__ import annotations

import socket
from dataclasses import dataclass

DEFAULT_PORT = 7447


def parse_endpoint(text: str, default_port: int = DEFAULT_PORT) -> tuple[str, int]:
    """``host``, ``host:port`` or ``[v6]:port`` -> (host, port)."""
    text = text.strip()
    if text.startswith("["):
        host, _, rest = text[1:].partition("]")
        port = rest.lstrip(":")
        return host, int(port) if port else default_port
    if text.count(":") == 1:
        host, port = text.split(":")
        return host or "0.0.0.0", int(port)
    return text, default_port


@dataclass(frozen=True)
class SocketConfig:
    local: tuple[str, int] = ("0.0.0.0", 0)
    peer: tuple[str, int] | None = None
    priority_mark: int = 4
    tos: int | None = None
    receive_timeout: float = 0.2  # seconds; bounds how long a blocking wait ignores a stop request

    def __post_init__(self):
        if not 0 <= self.priority_mark <= 15:
            raise ValueError(f"priority mark must be in 0..15, got {self.priority_mark}")
        if self.tos is not None and not 0 <= self.tos <= 255:
            raise ValueError(f"TOS must be a byte, got {self.tos}")
        if self.receive_timeout <= 0:
            raise ValueError("receive timeout must be positive")


def _family(host: str) -> int:
    return socket.AF_INET6 if ":" in host else socket.AF_INET


def open_socket(cfg: SocketConfig) -> socket.socket:
    """UDP socket bound to ``cfg.local`` with SO_PRIORITY (and IP_TOS) applied."""
    host = cfg.peer[0] if cfg.peer else cfg.local[0]
    sock = socket.socket(_family(host), socket.SOCK_DGRAM)
    try:
        if hasattr(socket, "SO_PRIORITY"):
            sock.setsockopt(socket.SOL_SOCKET, socket.SO_PRIORITY, cfg.priority_mark)
        if cfg.tos is not None:
            if sock.family == socket.AF_INET6:
                sock.setsockopt(socket.IPPROTO_IPV6, socket.IPV6_TCLASS, cfg.tos)
            else:
                sock.setsockopt(socket.IPPROTO_IP, socket.IP_TOS, cfg.tos)
        local = cfg.local
        if sock.family == socket.AF_INET6 and local[0] == "0.0.0.0":
            local = ("::", local[1])
        sock.bind(local)
    except OSError:
        sock.close()
        raise
    return sock
