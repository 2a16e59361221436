"""Declarative tuning model: qdisc/VLAN maps, RT scheduling, IRQ affinity, CPU shielding."""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from typing import Any

NUM_SKB_PRIORITIES = 16
NUM_VLAN_PRIORITIES = 8

RT_PRIORITY_MARK = 4
BEST_EFFORT_MARK = 0
DEFAULT_RT_PRIORITY = 80
DEFAULT_IRQ_THREAD_PRIORITY = 85


class Mode(str, enum.Enum):
    NO_RT = "no-rt"
    RT_NORMAL = "rt-normal"
    RT_AFFINITIES = "rt-affinities"
    RT_ISOLATION = "rt-isolation"

    @property
    def title(self) -> str:
        return _MODE_TITLES[self]


_MODE_TITLES = {
    Mode.NO_RT: "No RT",
    Mode.RT_NORMAL: "RT Normal",
    Mode.RT_AFFINITIES: "RT Affinity",
    Mode.RT_ISOLATION: "RT, CPU Isolated",
}


def _cpuset(cpus) -> frozenset[int]:
    out = frozenset(int(c) for c in cpus)
    if any(c < 0 for c in out):
        raise ValueError(f"negative CPU id in {sorted(out)}")
    return out


def format_cpulist(cpus) -> str:
    """Render CPUs in kernel cpulist syntax, e.g. ``0-2,5``."""
    cpus = sorted(set(cpus))
    parts = []
    i = 0
    while i < len(cpus):
        j = i
        while j + 1 < len(cpus) and cpus[j + 1] == cpus[j] + 1:
            j += 1
        parts.append(str(cpus[i]) if i == j else f"{cpus[i]}-{cpus[j]}")
        i = j + 1
    return ",".join(parts)


def parse_cpulist(text: str) -> frozenset[int]:
    cpus: set[int] = set()
    for part in text.strip().split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            lo, hi = part.split("-", 1)
            cpus.update(range(int(lo), int(hi) + 1))
        else:
            cpus.add(int(part))
    return frozenset(cpus)


def cpus_to_mask(cpus) -> str:
    """Hex affinity mask in /proc/irq/*/smp_affinity format (32-bit comma groups)."""
    value = 0
    for c in cpus:
        value |= 1 << c
    digits = f"{value:x}"
    width = -(-len(digits) // 8) * 8
    digits = digits.rjust(width, "0")
    return ",".join(digits[i:i + 8] for i in range(0, width, 8))


def mask_to_cpus(mask: str) -> frozenset[int]:
    value = int(mask.strip().replace(",", ""), 16)
    return frozenset(i for i in range(value.bit_length()) if value >> i & 1)


@dataclass(frozen=True)
class PriorityMap:
    """MQPRIO mapping of the 16 SKB priorities to traffic classes and queue spans."""

    prio_tc_map: tuple[int, ...]
    num_tc: int
    queues: tuple[tuple[int, int], ...]  # (count, offset) per traffic class

    def __post_init__(self):
        object.__setattr__(self, "prio_tc_map", tuple(int(x) for x in self.prio_tc_map))
        object.__setattr__(self, "queues", tuple((int(c), int(o)) for c, o in self.queues))
        if len(self.prio_tc_map) != NUM_SKB_PRIORITIES:
            raise ValueError(f"priority map needs {NUM_SKB_PRIORITIES} entries, got {len(self.prio_tc_map)}")
        if not 1 <= self.num_tc <= 16:
            raise ValueError(f"num_tc must be in 1..16, got {self.num_tc}")
        bad = [tc for tc in self.prio_tc_map if not 0 <= tc < self.num_tc]
        if bad:
            raise ValueError(f"traffic class {bad[0]} outside 0..{self.num_tc - 1}")
        if len(self.queues) != self.num_tc:
            raise ValueError(f"need one queue span per traffic class ({self.num_tc}), got {len(self.queues)}")
        used: set[int] = set()
        for count, offset in self.queues:
            if count < 1 or offset < 0:
                raise ValueError(f"invalid queue span {count}@{offset}")
            span = set(range(offset, offset + count))
            if span & used:
                raise ValueError(f"queue span {count}@{offset} overlaps another class")
            used |= span

    @property
    def queue_count(self) -> int:
        return max(offset + count for count, offset in self.queues)

    def check_device_queues(self, device_queues: int) -> None:
        if self.queue_count > device_queues:
            raise ValueError(f"map needs {self.queue_count} TX queues, device has {device_queues}")

    def to_dict(self) -> dict:
        return {
            "map": list(self.prio_tc_map),
            "num_tc": self.num_tc,
            "queues": [f"{c}@{o}" for c, o in self.queues],
        }

    @classmethod
    def from_dict(cls, d: dict) -> PriorityMap:
        queues = []
        for q in d["queues"]:
            c, o = q.split("@") if isinstance(q, str) else q
            queues.append((int(c), int(o)))
        return cls(tuple(d["map"]), int(d["num_tc"]), tuple(queues))


# Three classes on three single-queue spans; SKB priority 4 is the RT class.
BOARD_PRIORITY_MAP = PriorityMap(
    (2, 2, 1, 1, 0, 2, 2, 2, 2, 2, 2, 2, 2, 2, 2, 2), 3, ((1, 0), (1, 1), (1, 2))
)


@dataclass(frozen=True)
class VlanEgressMap:
    """SKB priority (0-7) to 802.1Q PCP mapping on a VLAN interface."""

    device: str
    mapping: tuple[int, ...] = tuple(range(NUM_VLAN_PRIORITIES))

    def __post_init__(self):
        object.__setattr__(self, "mapping", tuple(int(x) for x in self.mapping))
        if len(self.mapping) != NUM_VLAN_PRIORITIES:
            raise ValueError(f"VLAN egress map needs {NUM_VLAN_PRIORITIES} entries")
        bad = [p for p in self.mapping if not 0 <= p <= 7]
        if bad:
            raise ValueError(f"PCP value {bad[0]} outside 0..7")
        if not self.device:
            raise ValueError("VLAN interface name is empty")

    def to_dict(self) -> dict:
        return {"device": self.device, "mapping": list(self.mapping)}

    @classmethod
    def from_dict(cls, d: dict) -> VlanEgressMap:
        return cls(d["device"], tuple(d["mapping"]))


@dataclass(frozen=True)
class RtSchedParams:
    policy: str = "fifo"
    priority: int | None = DEFAULT_RT_PRIORITY
    lock_memory: bool = True

    def __post_init__(self):
        if self.policy not in ("fifo", "other"):
            raise ValueError(f"unknown scheduling policy {self.policy!r}")
        if self.policy == "fifo":
            if self.priority is None or not 1 <= self.priority <= 99:
                raise ValueError(f"SCHED_FIFO priority must be in 1..99, got {self.priority}")
        elif self.priority is not None:
            raise ValueError("priority is only meaningful with the fifo policy")

    @classmethod
    def none(cls) -> RtSchedParams:
        return cls("other", None, False)

    @property
    def realtime(self) -> bool:
        return self.policy == "fifo"

    def to_dict(self) -> dict:
        return {"policy": self.policy, "priority": self.priority, "lock_memory": self.lock_memory}

    @classmethod
    def from_dict(cls, d: dict) -> RtSchedParams:
        return cls(d.get("policy", "fifo"), d.get("priority"), bool(d.get("lock_memory", False)))


@dataclass(frozen=True)
class IrqAffinityRule:
    """Pin IRQs selected by name pattern (or explicit numbers) to a CPU set."""

    pattern: str
    cpus: frozenset[int]
    thread_priority: int | None = None
    irqs: tuple[int, ...] = ()  # explicit override of the pattern match

    def __post_init__(self):
        object.__setattr__(self, "cpus", _cpuset(self.cpus))
        object.__setattr__(self, "irqs", tuple(int(i) for i in self.irqs))
        if not self.cpus:
            raise ValueError("IRQ affinity rule needs a nonempty CPU set")
        re.compile(self.pattern)
        if self.thread_priority is not None and not 1 <= self.thread_priority <= 99:
            raise ValueError(f"IRQ thread priority must be in 1..99, got {self.thread_priority}")

    def select(self, irq_names: dict[int, str]) -> list[int]:
        if self.irqs:
            return sorted(self.irqs)
        rx = re.compile(self.pattern)
        return sorted(irq for irq, name in irq_names.items() if rx.search(name))

    def to_dict(self) -> dict:
        return {
            "pattern": self.pattern,
            "cpus": sorted(self.cpus),
            "thread_priority": self.thread_priority,
            "irqs": list(self.irqs),
        }

    @classmethod
    def from_dict(cls, d: dict) -> IrqAffinityRule:
        return cls(d["pattern"], frozenset(d["cpus"]), d.get("thread_priority"), tuple(d.get("irqs", ())))


@dataclass(frozen=True)
class CpuIsolationPlan:
    isolated_cpus: frozenset[int]
    irq_default_cpus: frozenset[int]
    migrate_existing_tasks: bool = True
    rt_irq_rules: tuple[IrqAffinityRule, ...] = ()
    cpuset_name: str = "rt"

    def __post_init__(self):
        object.__setattr__(self, "isolated_cpus", _cpuset(self.isolated_cpus))
        object.__setattr__(self, "irq_default_cpus", _cpuset(self.irq_default_cpus))
        object.__setattr__(self, "rt_irq_rules", tuple(self.rt_irq_rules))
        if not self.isolated_cpus:
            raise ValueError("isolated CPU set is empty")
        if not self.irq_default_cpus:
            raise ValueError("default IRQ CPU set is empty")
        if self.isolated_cpus & self.irq_default_cpus:
            raise ValueError(
                f"isolated CPUs {sorted(self.isolated_cpus)} overlap default IRQ CPUs "
                f"{sorted(self.irq_default_cpus)}"
            )
        for rule in self.rt_irq_rules:
            if not rule.cpus <= self.isolated_cpus:
                raise ValueError("RT IRQ rules must target the isolated CPUs")

    def to_dict(self) -> dict:
        return {
            "isolated_cpus": sorted(self.isolated_cpus),
            "irq_default_cpus": sorted(self.irq_default_cpus),
            "migrate_existing_tasks": self.migrate_existing_tasks,
            "rt_irq_rules": [r.to_dict() for r in self.rt_irq_rules],
            "cpuset_name": self.cpuset_name,
        }

    @classmethod
    def from_dict(cls, d: dict) -> CpuIsolationPlan:
        return cls(
            frozenset(d["isolated_cpus"]),
            frozenset(d["irq_default_cpus"]),
            bool(d.get("migrate_existing_tasks", True)),
            tuple(IrqAffinityRule.from_dict(r) for r in d.get("rt_irq_rules", ())),
            d.get("cpuset_name", "rt"),
        )


@dataclass(frozen=True)
class ShaperSpec:
    """Optional TBF attached under the best-effort traffic class."""

    rate: str = "50mbit"
    burst: str = "32kbit"
    latency: str = "10ms"
    traffic_class: int = 2

    def to_dict(self) -> dict:
        return {"rate": self.rate, "burst": self.burst, "latency": self.latency,
                "traffic_class": self.traffic_class}

    @classmethod
    def from_dict(cls, d: dict) -> ShaperSpec:
        return cls(**d)


@dataclass(frozen=True)
class TuningPlan:
    mode: Mode
    device: str | None = None
    priority_mark: int = RT_PRIORITY_MARK
    priority_map: PriorityMap | None = None
    vlan_map: VlanEgressMap | None = None
    rt_sched: RtSchedParams | None = None
    app_cpus: frozenset[int] | None = None
    irq_rules: tuple[IrqAffinityRule, ...] = ()
    isolation: CpuIsolationPlan | None = None
    shaper: ShaperSpec | None = None
    irq_names: dict[int, str] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "irq_rules", tuple(self.irq_rules))
        if self.app_cpus is not None:
            object.__setattr__(self, "app_cpus", _cpuset(self.app_cpus))
        if not 0 <= self.priority_mark <= 15:
            raise ValueError(f"priority mark must be in 0..15, got {self.priority_mark}")
        if self.mode is Mode.NO_RT and self.rt_sched is not None and self.rt_sched.realtime:
            raise ValueError("no-rt plan must not carry RT scheduling parameters")
        if self.mode is Mode.RT_ISOLATION and self.isolation is None:
            raise ValueError("rt-isolation plan requires a CPU isolation plan")
        if self.mode in (Mode.RT_AFFINITIES, Mode.RT_ISOLATION) and not self.irq_rules:
            raise ValueError(f"{self.mode.value} plan requires at least one IRQ affinity rule")
        if (self.priority_map is not None or self.shaper is not None) and not self.device:
            raise ValueError("qdisc configuration needs a device name")

    def intents(self) -> frozenset[str]:
        """Configuration intents, comparable across modes."""
        out = {f"socket-priority:{self.priority_mark}"}
        if self.priority_map is not None:
            out.add("mqprio")
        if self.vlan_map is not None:
            out.add("vlan-egress")
        if self.shaper is not None:
            out.add("tbf")
        if self.rt_sched is not None and self.rt_sched.realtime:
            out.add(f"sched-fifo:{self.rt_sched.priority}")
        if self.rt_sched is not None and self.rt_sched.lock_memory:
            out.add("mlockall")
        if self.app_cpus:
            out.add("app-affinity:" + format_cpulist(self.app_cpus))
        for rule in self.irq_rules:
            out.add(f"irq-affinity:{rule.pattern}->" + format_cpulist(rule.cpus))
            if rule.thread_priority is not None:
                out.add(f"irq-priority:{rule.pattern}:{rule.thread_priority}")
        if self.isolation is not None:
            out.add("cpuset-shield:" + format_cpulist(self.isolation.isolated_cpus))
            out.add("irq-default:" + format_cpulist(self.isolation.irq_default_cpus))
            if self.isolation.migrate_existing_tasks:
                out.add("migrate-tasks")
        return frozenset(out)

    def to_dict(self) -> dict[str, Any]:
        return {
            "mode": self.mode.value,
            "device": self.device,
            "priority_mark": self.priority_mark,
            "priority_map": self.priority_map.to_dict() if self.priority_map else None,
            "vlan_map": self.vlan_map.to_dict() if self.vlan_map else None,
            "rt_sched": self.rt_sched.to_dict() if self.rt_sched else None,
            "app_cpus": sorted(self.app_cpus) if self.app_cpus is not None else None,
            "irq_rules": [r.to_dict() for r in self.irq_rules],
            "isolation": self.isolation.to_dict() if self.isolation else None,
            "shaper": self.shaper.to_dict() if self.shaper else None,
            "irq_names": {str(k): v for k, v in sorted(self.irq_names.items())},
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> TuningPlan:
        def opt(key, conv):
            return conv(d[key]) if d.get(key) is not None else None

        return cls(
            mode=Mode(d["mode"]),
            device=d.get("device"),
            priority_mark=int(d.get("priority_mark", RT_PRIORITY_MARK)),
            priority_map=opt("priority_map", PriorityMap.from_dict),
            vlan_map=opt("vlan_map", VlanEgressMap.from_dict),
            rt_sched=opt("rt_sched", RtSchedParams.from_dict),
            app_cpus=opt("app_cpus", frozenset),
            irq_rules=tuple(IrqAffinityRule.from_dict(r) for r in d.get("irq_rules", ())),
            isolation=opt("isolation", CpuIsolationPlan.from_dict),
            shaper=opt("shaper", ShaperSpec.from_dict),
            irq_names={int(k): v for k, v in (d.get("irq_names") or {}).items()},
        )
