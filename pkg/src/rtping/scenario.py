"""Experiment descriptions: one ScenarioSpec per run, a matrix of them per campaign."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .loadgen.stress import REFERENCE_STRESS, StressSpec
from .loadgen.traffic import DEFAULT_SINK_PORT, TrafficSpec
from .rtt.protocol import DEFAULT_PAYLOAD_SIZE, check_payload_size
from .rtt.sockets import DEFAULT_PORT, SocketConfig, parse_endpoint
from .timing import DEFAULT_PERIOD_NS, DEFAULT_WARMUP_CYCLES, CycleSpec
from .tuning.model import DEFAULT_RT_PRIORITY, Mode, RtSchedParams

LOADS = ("idle", "stress", "tx-traffic", "rx-traffic")
ROLES = ("client", "server", "sink")


@dataclass(frozen=True)
class ScenarioSpec:
    role: str = "client"
    peer: tuple[str, int] | None = None
    bind: tuple[str, int] = ("0.0.0.0", 0)
    period_ns: int = DEFAULT_PERIOD_NS
    deadline_ns: int | None = None
    warmup_cycles: int = DEFAULT_WARMUP_CYCLES
    total_cycles: int = 600_000
    payload_size: int = DEFAULT_PAYLOAD_SIZE
    priority_mark: int = 4
    tos: int | None = None
    receive_timeout: float = 0.2
    loss_horizon: int = 4
    mode: Mode = Mode.RT_NORMAL
    rt_priority: int = DEFAULT_RT_PRIORITY
    rt_cpu: int | None = None
    device: str | None = None
    vlan_device: str | None = None
    load: str = "idle"
    stress: StressSpec | None = None
    traffic: TrafficSpec | None = None
    output: str | None = None
    histogram_output: str | None = None
    timeseries_output: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if self.role not in ROLES:
            raise ValueError(f"role must be one of {', '.join(ROLES)}, got {self.role!r}")
        if self.load not in LOADS:
            raise ValueError(f"load must be one of {', '.join(LOADS)}, got {self.load!r}")
        check_payload_size(self.payload_size)
        if self.loss_horizon < 1:
            raise ValueError("loss horizon must be >= 1 period")
        if not 1 <= self.rt_priority <= 99:
            raise ValueError(f"RT priority must be in 1..99, got {self.rt_priority}")
        # validates the timing fields
        self.cycle_spec()
        SocketConfig(self.bind, self.peer, self.priority_mark, self.tos, self.receive_timeout)
        if self.load == "idle" and (self.stress is not None or self.traffic is not None):
            raise ValueError("idle load must not embed a stress or traffic spec")
        if self.load == "stress" and (self.stress is None or self.traffic is not None):
            raise ValueError("stress load needs exactly a stress spec")
        if self.load in ("tx-traffic", "rx-traffic") and (self.traffic is None or self.stress is not None):
            raise ValueError(f"{self.load} load needs exactly a traffic spec")
        if self.role == "client" and self.peer is None:
            raise ValueError("client role needs a peer endpoint")

    def cycle_spec(self) -> CycleSpec:
        return CycleSpec(self.period_ns, self.deadline_ns, self.warmup_cycles, self.total_cycles)

    def socket_config(self) -> SocketConfig:
        return SocketConfig(self.bind, self.peer, self.priority_mark, self.tos, self.receive_timeout)

    def rt_params(self) -> RtSchedParams | None:
        if self.mode is Mode.NO_RT:
            return None
        return RtSchedParams("fifo", self.rt_priority, True)

    def with_load(self, load: str, default_peer_host: str | None = None, stress: StressSpec | None = None,
                  traffic: TrafficSpec | None = None) -> ScenarioSpec:
        """Copy with ``load``; missing embedded specs default to the reference stress mix or 100 Mbit/s."""
        if load == "stress":
            stress, traffic = stress or self.stress or REFERENCE_STRESS, None
        elif load in ("tx-traffic", "rx-traffic"):
            traffic = traffic or self.traffic
            if traffic is None:
                host = default_peer_host or (self.peer[0] if self.peer else "127.0.0.1")
                traffic = TrafficSpec((host, DEFAULT_SINK_PORT))
            stress = None
        else:
            stress = traffic = None
        return replace(self, load=load, stress=stress, traffic=traffic)

    def to_dict(self) -> dict:
        d = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name in ("peer", "bind"):
                v = f"{v[0]}:{v[1]}" if v else None
            elif f.name == "mode":
                v = v.value
            elif f.name in ("stress", "traffic"):
                v = v.to_dict() if v is not None else None
            d[f.name] = v
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ScenarioSpec:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown scenario field(s): {', '.join(sorted(unknown))}")
        kw = dict(d)
        for key, port in (("peer", DEFAULT_PORT), ("bind", 0)):
            if isinstance(kw.get(key), str):
                kw[key] = parse_endpoint(kw[key], port)
            elif kw.get(key) is not None:
                kw[key] = (kw[key][0], int(kw[key][1]))
        if kw.get("stress") is not None:
            kw["stress"] = StressSpec.from_dict(kw["stress"])
        if kw.get("traffic") is not None:
            kw["traffic"] = TrafficSpec.from_dict(kw["traffic"])
        if kw.get("bind") is None:
            kw.pop("bind", None)
        return cls(**kw)


def load_scenario(path: str | Path) -> dict:
    """Raw scenario fields from a JSON file (merged with flags before validation)."""
    data = json.loads(Path(path).read_text())
    if not isinstance(data, dict):
        raise ValueError(f"{path}: scenario file must hold a JSON object")
    return data


@dataclass(frozen=True)
class MatrixCell:
    mode: Mode
    load: str
    scenario: ScenarioSpec

    @property
    def name(self) -> str:
        return f"{self.mode.value}_{self.load}"


@dataclass
class MatrixSpec:
    """Cartesian product of tuning modes and load conditions over a base scenario."""

    base: ScenarioSpec
    modes: list[Mode] = field(default_factory=lambda: list(Mode))
    loads: list[str] = field(default_factory=lambda: list(LOADS))
    output_dir: str = "runs"
    loopback: bool = False
    traffic_host: str | None = None

    def cells(self) -> list[MatrixCell]:
        out = []
        for mode, load in itertools.product(self.modes, self.loads):
            sc = replace(self.base, mode=mode).with_load(load, self.traffic_host)
            out.append(MatrixCell(mode, load, sc))
        return out

    @classmethod
    def from_dict(cls, d: dict) -> MatrixSpec:
        base = dict(d.get("base", {}))
        base.setdefault("role", "client")
        if d.get("loopback") and "peer" not in base:
            base["peer"] = "127.0.0.1:0"
        spec = cls(
            ScenarioSpec.from_dict(base),
            [Mode(m) for m in d.get("modes", [m.value for m in Mode])],
            list(d.get("loads", LOADS)),
            d.get("output_dir", "runs"),
            bool(d.get("loopback", False)),
            d.get("traffic_host"),
        )
        bad = [x for x in spec.loads if x not in LOADS]
        if bad:
            raise ValueError(f"unknown load condition {bad[0]!r}")
        return spec

    @classmethod
    def load(cls, path: str | Path) -> MatrixSpec:
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return {"base": self.base.to_dict(), "modes": [m.value for m in self.modes], "loads": list(self.loads),
                "output_dir": self.output_dir, "loopback": self.loopback, "traffic_host": self.traffic_host}


__all__ = ["LOADS", "MatrixCell", "MatrixSpec", "ScenarioSpec", "load_scenario"]
