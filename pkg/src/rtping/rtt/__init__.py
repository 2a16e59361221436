from .client import ClientRun, RttClient, SampleBook, measure
from .protocol import (
    DEFAULT_PAYLOAD_SIZE,
    HEADER_SIZE,
    ProbeDecodeError,
    ProbePacket,
    decode_probe,
    encode_probe,
)
from .server import EchoServer, FaultPlan, ServerStats, run_server
from .sockets import DEFAULT_PORT, SocketConfig, open_socket, parse_endpoint

__all__ = [
    "ClientRun", "RttClient", "SampleBook", "measure",
    "DEFAULT_PAYLOAD_SIZE", "HEADER_SIZE", "ProbeDecodeError", "ProbePacket", "decode_probe", "encode_probe",
    "EchoServer", "FaultPlan", "ServerStats", "run_server",
    "DEFAULT_PORT", "SocketConfig", "open_socket", "parse_endpoint",
]
