"""System-configuration backends.

``LinuxBackend`` talks to procfs, the cgroup filesystem, ``tc``/``ip`` and
the scheduler syscalls. ``DryRunBackend`` keeps the same state in memory:
writes are recorded, and read-back commands return text in the same format
the real tools print, so verification exercises identical parsing on both.
"""

from __future__ import annotations

import os
import subprocess
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from .commands import (
    CommandParseError,
    parse_mqprio_command,
    parse_vlan_egress_command,
    render_qdisc_show,
)
from .model import (
    PriorityMap,
    VlanEgressMap,
    cpus_to_mask,
    format_cpulist,
    mask_to_cpus,
    parse_cpulist,
)


class CommandError(RuntimeError):
    def __init__(self, argv, returncode: int, stderr: str = ""):
        self.argv = list(argv)
        self.returncode = returncode
        self.stderr = stderr.strip()
        super().__init__(f"{' '.join(self.argv)} exited {returncode}: {self.stderr}")


POLICY_NAMES = {os.SCHED_OTHER: "other", os.SCHED_FIFO: "fifo", os.SCHED_RR: "rr"}
POLICY_IDS = {v: k for k, v in POLICY_NAMES.items()}


class SystemBackend:
    """Interface every backend implements; method names follow the kernel objects."""

    name = "abstract"

    def run(self, argv: list[str]) -> None:
        raise NotImplementedError

    def query(self, argv: list[str]) -> str:
        raise NotImplementedError

    def write_irq_affinity(self, irq: int, cpus) -> None:
        raise NotImplementedError

    def read_irq_affinity(self, irq: int) -> frozenset[int]:
        raise NotImplementedError

    def set_irq_thread_priority(self, irq: int, priority: int) -> None:
        raise NotImplementedError

    def read_irq_thread_priority(self, irq: int) -> int | None:
        raise NotImplementedError

    def create_cpuset(self, name: str, cpus) -> None:
        raise NotImplementedError

    def read_cpuset(self, name: str) -> frozenset[int] | None:
        raise NotImplementedError

    def migrate_tasks(self, name: str, cpus) -> int:
        raise NotImplementedError

    def attach_task(self, name: str, pid: int) -> None:
        raise NotImplementedError

    def set_task_sched(self, pid: int, policy: str, priority: int) -> None:
        raise NotImplementedError

    def read_task_sched(self, pid: int) -> tuple[str, int]:
        raise NotImplementedError

    def set_task_affinity(self, pid: int, cpus) -> None:
        raise NotImplementedError

    def read_task_affinity(self, pid: int) -> frozenset[int]:
        raise NotImplementedError

    def qdisc_show(self, device: str) -> str:
        return self.query(["tc", "-g", "qdisc", "show", "dev", device])

    def link_show(self, device: str) -> str:
        return self.query(["ip", "-d", "link", "show", "dev", device])


@dataclass
class DryRunBackend(SystemBackend):
    """In-memory backend. ``log`` lists every intended write in order."""

    name = "dry-run"
    qdiscs: dict[str, PriorityMap] = field(default_factory=dict)
    vlans: dict[str, VlanEgressMap] = field(default_factory=dict)
    irq_affinity: dict[int, frozenset[int]] = field(default_factory=dict)
    irq_priority: dict[int, int] = field(default_factory=dict)
    cpusets: dict[str, frozenset[int]] = field(default_factory=dict)
    task_sched: dict[int, tuple[str, int]] = field(default_factory=dict)
    task_affinity: dict[int, frozenset[int]] = field(default_factory=dict)
    task_cpuset: dict[int, str] = field(default_factory=dict)
    devices: set[str] | None = None  # None: every device exists
    log: list[str] = field(default_factory=list)

    def _need_device(self, device: str) -> None:
        if self.devices is not None and device not in self.devices:
            raise FileNotFoundError(f"Cannot find device \"{device}\"")

    def run(self, argv):
        self.log.append(" ".join(argv))
        if argv[:2] == ["tc", "qdisc"] and "mqprio" in argv:
            device, pmap = parse_mqprio_command(" ".join(argv))
            self._need_device(device)
            self.qdiscs[device] = pmap
        elif argv[:3] == ["ip", "link", "set"] and "egress" in argv:
            vmap = parse_vlan_egress_command(" ".join(argv))
            self._need_device(vmap.device)
            self.vlans[vmap.device] = vmap
        elif argv[:2] == ["tc", "qdisc"]:
            self._need_device(argv[argv.index("dev") + 1])
        else:
            raise CommandParseError(f"dry-run backend cannot model {argv!r}")

    def query(self, argv):
        device = argv[-1]
        self._need_device(device)
        if argv[:2] == ["tc", "-g"]:
            pmap = self.qdiscs.get(device)
            if pmap is None:
                return "qdisc noqueue 0: root refcnt 2\n"
            return render_qdisc_show(pmap, device)
        if argv[:2] == ["ip", "-d"]:
            vmap = self.vlans.get(device)
            body = f"5: {device}@eth: <BROADCAST,MULTICAST,UP> mtu 1500\n    vlan protocol 802.1Q id 2 <REORDER_HDR>\n"
            if vmap is not None:
                pairs = " ".join(f"{skb}:{pcp}" for skb, pcp in enumerate(vmap.mapping) if pcp)
                body += f"      ingress-qos-map {{ 0:0 }}\n      egress-qos-map {{ {pairs} }}\n"
            return body
        raise CommandParseError(f"dry-run backend cannot answer {argv!r}")

    def write_irq_affinity(self, irq, cpus):
        self.log.append(f"echo {cpus_to_mask(cpus)} > /proc/irq/{irq}/smp_affinity")
        self.irq_affinity[irq] = frozenset(cpus)

    def read_irq_affinity(self, irq):
        if irq not in self.irq_affinity:
            raise FileNotFoundError(f"/proc/irq/{irq}/smp_affinity")
        return self.irq_affinity[irq]

    def set_irq_thread_priority(self, irq, priority):
        self.log.append(f"chrt -f -p {priority} <irq/{irq}>")
        self.irq_priority[irq] = priority

    def read_irq_thread_priority(self, irq):
        return self.irq_priority.get(irq)

    def create_cpuset(self, name, cpus):
        self.log.append(f"cpuset {name} cpus={format_cpulist(cpus)} exclusive")
        self.cpusets[name] = frozenset(cpus)

    def read_cpuset(self, name):
        return self.cpusets.get(name)

    def migrate_tasks(self, name, cpus):
        self.log.append(f"migrate tasks into {name} cpus={format_cpulist(cpus)}")
        self.cpusets[name] = frozenset(cpus)
        return 0

    def attach_task(self, name, pid):
        if name not in self.cpusets:
            raise FileNotFoundError(f"cpuset {name} does not exist")
        self.log.append(f"echo {pid} > cpuset {name}")
        self.task_cpuset[pid] = name

    def set_task_sched(self, pid, policy, priority):
        self.log.append(f"sched_setscheduler({pid}, {policy}, {priority})")
        self.task_sched[pid] = (policy, priority)

    def read_task_sched(self, pid):
        return self.task_sched.get(pid, ("other", 0))

    def set_task_affinity(self, pid, cpus):
        self.log.append(f"sched_setaffinity({pid}, {format_cpulist(cpus)})")
        self.task_affinity[pid] = frozenset(cpus)

    def read_task_affinity(self, pid):
        if pid not in self.task_affinity:
            raise ProcessLookupError(pid)
        return self.task_affinity[pid]


Runner = Callable[..., subprocess.CompletedProcess]


class LinuxBackend(SystemBackend):
    """Live backend. Root paths are overridable so tests can point it at a sandbox tree."""

    name = "linux"

    def __init__(self, proc_root: str = "/proc", cgroup_root: str = "/sys/fs/cgroup",
                 runner: Runner = subprocess.run):
        self.proc = Path(proc_root)
        self.cgroup = Path(cgroup_root)
        self._runner = runner

    @classmethod
    def from_env(cls, env=os.environ) -> LinuxBackend:
        return cls(env.get("RTPING_PROC_ROOT", "/proc"), env.get("RTPING_CGROUP_ROOT", "/sys/fs/cgroup"))

    # commands

    def _exec(self, argv) -> str:
        proc = self._runner(list(argv), capture_output=True, text=True)
        if proc.returncode != 0:
            stderr = proc.stderr or ""
            if "Operation not permitted" in stderr or "RTNETLINK answers: Permission" in stderr:
                raise PermissionError(f"{' '.join(argv)}: {stderr.strip()}")
            raise CommandError(argv, proc.returncode, stderr)
        return proc.stdout or ""

    def run(self, argv):
        self._exec(argv)

    def query(self, argv):
        return self._exec(argv)

    # IRQs

    def write_irq_affinity(self, irq, cpus):
        Path(self.proc, "irq", str(irq), "smp_affinity").write_text(cpus_to_mask(cpus) + "\n")

    def read_irq_affinity(self, irq):
        return mask_to_cpus(Path(self.proc, "irq", str(irq), "smp_affinity").read_text())

    def irq_thread_pid(self, irq: int) -> int:
        prefix = f"irq/{irq}-"
        for entry in self.proc.iterdir():
            if not entry.name.isdigit():
                continue
            try:
                comm = (entry / "comm").read_text().strip()
            except OSError:
                continue
            if comm.startswith(prefix):
                return int(entry.name)
        raise FileNotFoundError(f"no IRQ thread for IRQ {irq} (kernel without forced IRQ threading?)")

    def set_irq_thread_priority(self, irq, priority):
        self.set_task_sched(self.irq_thread_pid(irq), "fifo", priority)

    def read_irq_thread_priority(self, irq):
        policy, prio = self.read_task_sched(self.irq_thread_pid(irq))
        return prio if policy in ("fifo", "rr") else None

    # cpusets

    @property
    def cgroup_v2(self) -> bool:
        return (self.cgroup / "cgroup.controllers").exists()

    def _cpuset_dir(self, name: str) -> Path:
        return self.cgroup / name if self.cgroup_v2 else self.cgroup / "cpuset" / name

    def create_cpuset(self, name, cpus):
        d = self._cpuset_dir(name)
        if self.cgroup_v2:
            ctl = self.cgroup / "cgroup.subtree_control"
            if "cpuset" not in ctl.read_text():
                ctl.write_text("+cpuset")
            d.mkdir(exist_ok=True)
            (d / "cpuset.cpus").write_text(format_cpulist(cpus))
            try:
                (d / "cpuset.cpus.partition").write_text("isolated")
            except OSError:
                (d / "cpuset.cpus.partition").write_text("root")
        else:
            d.mkdir(exist_ok=True)
            parent = d.parent
            (d / "cpuset.cpus").write_text(format_cpulist(cpus))
            (d / "cpuset.mems").write_text((parent / "cpuset.mems").read_text().strip() or "0")
            (d / "cpuset.cpu_exclusive").write_text("1")

    def read_cpuset(self, name):
        f = self._cpuset_dir(name) / "cpuset.cpus"
        if not f.exists():
            return None
        return parse_cpulist(f.read_text())

    def migrate_tasks(self, name, cpus):
        if self.cgroup_v2:
            # an isolated partition already removes its CPUs from every other cgroup
            return 0
        root = self.cgroup / "cpuset"
        d = root / name
        d.mkdir(exist_ok=True)
        (d / "cpuset.cpus").write_text(format_cpulist(cpus))
        (d / "cpuset.mems").write_text((root / "cpuset.mems").read_text().strip() or "0")
        moved = 0
        for line in (root / "tasks").read_text().split():
            try:
                (d / "tasks").write_text(line)
                moved += 1
            except OSError:
                pass  # per-CPU kernel threads refuse to move
        return moved

    def attach_task(self, name, pid):
        target = "cgroup.procs" if self.cgroup_v2 else "tasks"
        (self._cpuset_dir(name) / target).write_text(str(pid))

    # scheduler

    def set_task_sched(self, pid, policy, priority):
        os.sched_setscheduler(pid, POLICY_IDS[policy], os.sched_param(priority))

    def read_task_sched(self, pid):
        policy = POLICY_NAMES.get(os.sched_getscheduler(pid), "other")
        return policy, os.sched_getparam(pid).sched_priority

    def set_task_affinity(self, pid, cpus):
        os.sched_setaffinity(pid, cpus)

    def read_task_affinity(self, pid):
        return frozenset(os.sched_getaffinity(pid))
