from .stress import REFERENCE_STRESS, StressReport, StressRunner, StressSpec, parse_size, run_stress
from .traffic import SinkReport, TokenBucket, TrafficReport, TrafficSpec, UdpSink, run_sink, run_traffic

__all__ = [
    "REFERENCE_STRESS", "StressReport", "StressRunner", "StressSpec", "parse_size", "run_stress",
    "SinkReport", "TokenBucket", "TrafficReport", "TrafficSpec", "UdpSink", "run_sink", "run_traffic",
]
