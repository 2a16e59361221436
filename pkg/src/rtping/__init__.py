"""Real-time UDP round-trip latency benchmark and Linux priority-tuning suite."""

__version__ = "0.1.0"
