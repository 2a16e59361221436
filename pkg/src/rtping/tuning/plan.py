from __future__ import annotations

import os
import re
from dataclasses import dataclass, field
from pathlib import Path

from .model import (
    DEFAULT_IRQ_THREAD_PRIORITY,
    DEFAULT_RT_PRIORITY,
    BOARD_PRIORITY_MAP,
    RT_PRIORITY_MARK,
    CpuIsolationPlan,
    IrqAffinityRule,
    Mode,
    PriorityMap,
    RtSchedParams,
    TuningPlan,
    VlanEgressMap,
    parse_cpulist,
)


class CapabilityError(RuntimeError):
    """The host cannot support the requested configuration."""


@dataclass
class SystemInventory:
    """What plan construction needs to know about a host."""

    cpus: list[int]
    device: str | None = None
    vlan_device: str | None = None
    tx_queues: int = 0
    irqs: dict[int, str] = field(default_factory=dict)  # IRQ number -> action name

    @classmethod
    def synthetic(cls, ncpus: int, device: str = "eth1", vlan_id: int = 2, queues: int = 3) -> SystemInventory:
        """A board-like inventory: per-queue NIC IRQs plus a few unrelated ones."""
        irqs = {16 + i: name for i, name in enumerate(["timer", "ttyS0", "mmc0"])}
        for q in range(queues):
            irqs[40 + 2 * q] = f"{device}-tx-{q}"
            irqs[41 + 2 * q] = f"{device}-rx-{q}"
        return cls(list(range(ncpus)), device, f"{device}.{vlan_id}", queues, irqs)

    @classmethod
    def probe(cls, device: str | None = None, vlan_device: str | None = None,
              proc_root: str = "/proc", sys_root: str = "/sys") -> SystemInventory:
        cpus = sorted(os.sched_getaffinity(0))
        try:
            online = Path(sys_root, "devices/system/cpu/online").read_text()
            cpus = sorted(parse_cpulist(online))
        except OSError:
            pass
        irqs = read_irq_names(Path(proc_root, "interrupts"))
        tx_queues = 0
        if device:
            qdir = Path(sys_root, "class/net", device, "queues")
            if qdir.is_dir():
                tx_queues = sum(1 for p in qdir.iterdir() if p.name.startswith("tx-"))
        return cls(cpus, device, vlan_device, tx_queues, irqs)

    def to_dict(self) -> dict:
        return {"cpus": self.cpus, "device": self.device, "vlan_device": self.vlan_device,
                "tx_queues": self.tx_queues, "irqs": {str(k): v for k, v in sorted(self.irqs.items())}}


def read_irq_names(path: Path) -> dict[int, str]:
    """Map numeric IRQs in /proc/interrupts to their last action name."""
    try:
        lines = path.read_text().splitlines()
    except OSError:
        return {}
    if not lines:
        return {}
    ncpu = len(lines[0].split())
    out: dict[int, str] = {}
    for line in lines[1:]:
        head, _, rest = line.partition(":")
        if not head.strip().isdigit():
            continue
        fields = rest.split()
        # counts, chip, hwirq/trigger, then action names
        names = fields[ncpu:]
        if names:
            out[int(head)] = names[-1].rstrip(",")
    return out


def rt_queue_pattern(device: str, queue: int = 0) -> str:
    """Regex for the IRQ of TX/RX queue ``queue`` on ``device``.

    Matches the common per-queue naming schemes (eth1-tx-0, eth1-TxRx-0,
    eth1-rx-0, eth1-q0).
    """
    dev = re.escape(device)
    return rf"^{dev}[-_](?:(?i:tx|rx|txrx|rxtx)[-_]?|q){queue}$"


def plan_for_mode(
    mode: Mode | str,
    inventory: SystemInventory,
    *,
    rt_cpu: int | None = None,
    rt_priority: int = DEFAULT_RT_PRIORITY,
    irq_thread_priority: int | None = DEFAULT_IRQ_THREAD_PRIORITY,
    priority_map: PriorityMap = BOARD_PRIORITY_MAP,
    priority_mark: int = RT_PRIORITY_MARK,
    rt_queue: int | None = None,
    rt_irqs: tuple[int, ...] = (),
) -> TuningPlan:
    """Build the plan for one of the four configurations.

    no-rt marks traffic only; rt-normal adds FIFO scheduling, memory locking
    and the qdisc/VLAN maps; rt-affinities additionally pins the application
    and the RT queue IRQ to one CPU; rt-isolation shields that CPU with a
    cpuset and steers every other IRQ to the remaining CPUs.
    """
    mode = Mode(mode)
    if mode is Mode.NO_RT:
        return TuningPlan(mode, device=inventory.device, priority_mark=priority_mark,
                          irq_names=dict(inventory.irqs))

    device = inventory.device
    pmap = priority_map if device else None
    vlan = VlanEgressMap(inventory.vlan_device) if inventory.vlan_device else None
    sched = RtSchedParams("fifo", rt_priority, True)
    if mode is Mode.RT_NORMAL:
        return TuningPlan(mode, device=device, priority_mark=priority_mark, priority_map=pmap,
                          vlan_map=vlan, rt_sched=sched, irq_names=dict(inventory.irqs))

    cpus = sorted(inventory.cpus)
    if len(cpus) < 2:
        raise CapabilityError(f"{mode.value} needs at least 2 CPUs, inventory has {len(cpus)}")
    if rt_cpu is None:
        rt_cpu = cpus[-1]
    if rt_cpu not in cpus:
        raise CapabilityError(f"RT CPU {rt_cpu} is not online (online: {cpus})")
    if not device and not rt_irqs:
        raise CapabilityError(f"{mode.value} needs a NIC device or explicit RT IRQ numbers")

    if rt_queue is None:
        rt_queue = priority_map.queues[classify_tc(priority_map, priority_mark)][1]
    pattern = rt_queue_pattern(device, rt_queue) if device else "^$"
    rule = IrqAffinityRule(pattern, frozenset({rt_cpu}), irq_thread_priority, tuple(rt_irqs))
    if not rule.select(inventory.irqs):
        raise CapabilityError(f"no IRQ matches the RT queue pattern {pattern!r}")
    rules = (rule,)

    isolation = None
    if mode is Mode.RT_ISOLATION:
        others = frozenset(cpus) - {rt_cpu}
        isolation = CpuIsolationPlan(frozenset({rt_cpu}), others, True, rules)
    return TuningPlan(mode, device=device, priority_mark=priority_mark, priority_map=pmap,
                      vlan_map=vlan, rt_sched=sched, app_cpus=frozenset({rt_cpu}),
                      irq_rules=rules, isolation=isolation, irq_names=dict(inventory.irqs))


def classify_tc(priority_map: PriorityMap, mark: int) -> int:
    return priority_map.prio_tc_map[mark]

