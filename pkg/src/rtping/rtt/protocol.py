"""Probe datagram layout.

    offset  size  field
    0       4     magic  b"RTPP"
    4       1     version (1)
    5       8     sequence, big-endian u64
    13      8     client send time in ns, big-endian u64 (opaque to the server)
    21      ...   zero padding up to the configured payload size
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

MAGIC = b"RTPP"
VERSION = 1
HEADER = struct.Struct(">4sBQQ")
HEADER_SIZE = HEADER.size  # 21
DEFAULT_PAYLOAD_SIZE = 500
MAX_PAYLOAD_SIZE = 65_507
_U64_MAX = 2**64 - 1


class ProbeDecodeError(ValueError):
    """A datagram that is not a valid probe. ``reason`` is one of
    ``short-buffer``, ``bad-magic`` or ``bad-version``."""

    def __init__(self, reason: str, detail: str = ""):
        self.reason = reason
        super().__init__(f"{reason}: {detail}" if detail else reason)


@dataclass(frozen=True)
class ProbePacket:
    sequence: int
    client_send_time: int
    payload_size: int = DEFAULT_PAYLOAD_SIZE

    def __post_init__(self):
        if not 0 <= self.sequence <= _U64_MAX:
            raise ValueError(f"sequence out of u64 range: {self.sequence}")
        if not 0 <= self.client_send_time <= _U64_MAX:
            raise ValueError(f"client_send_time out of u64 range: {self.client_send_time}")
        check_payload_size(self.payload_size)


def check_payload_size(payload_size: int) -> int:
    if payload_size < HEADER_SIZE:
        raise ValueError(f"payload size {payload_size} is smaller than the {HEADER_SIZE}-byte header")
    if payload_size > MAX_PAYLOAD_SIZE:
        raise ValueError(f"payload size {payload_size} exceeds the UDP limit of {MAX_PAYLOAD_SIZE}")
    return payload_size


def encode_probe(p: ProbePacket, payload_size: int | None = None) -> bytes:
    size = check_payload_size(p.payload_size if payload_size is None else payload_size)
    buf = bytearray(size)
    HEADER.pack_into(buf, 0, MAGIC, VERSION, p.sequence, p.client_send_time)
    return bytes(buf)


def encode_into(buf: bytearray, sequence: int, client_send_time: int) -> None:
    """Rewrite the header of a preallocated, zero-padded probe buffer in place."""
    HEADER.pack_into(buf, 0, MAGIC, VERSION, sequence, client_send_time)


def decode_probe(b: bytes | bytearray | memoryview) -> ProbePacket:
    if len(b) < HEADER_SIZE:
        raise ProbeDecodeError("short-buffer", f"{len(b)} bytes, need at least {HEADER_SIZE}")
    magic, version, seq, sent = HEADER.unpack_from(b, 0)
    if magic != MAGIC:
        raise ProbeDecodeError("bad-magic", repr(magic))
    if version != VERSION:
        raise ProbeDecodeError("bad-version", str(version))
    return ProbePacket(seq, sent, len(b))


def peek_sequence(b: bytes | bytearray | memoryview, n: int) -> int | None:
    """Sequence number of the first ``n`` bytes of ``b``, or None if invalid.

    Allocation-light variant of :func:`decode_probe` for the client hot loop.
    """
    if n < HEADER_SIZE:
        return None
    magic, version, seq, _ = HEADER.unpack_from(b, 0)
    if magic != MAGIC or version != VERSION:
        return None
    return seq
