"""Turn a TuningPlan into ordered steps, execute them, and read the result back."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

from .backend import SystemBackend
from .commands import mqprio_argv, parse_ip_link_egress, parse_qdisc_show, tbf_argv, vlan_egress_argv
from .model import TuningPlan, format_cpulist

OK = "ok"
FAILED = "failed"
SKIPPED = "skipped"

MATCH = "match"
MISMATCH = "mismatch"
UNKNOWN = "unknown"


@dataclass
class Step:
    id: str
    action: str
    target: str
    do: Callable[[SystemBackend], object] = field(repr=False)
    depends_on: tuple[str, ...] = ()
    outcome: str | None = None
    error: str | None = None
    permission_denied: bool = False

    def to_dict(self) -> dict:
        return {"id": self.id, "action": self.action, "target": self.target,
                "depends_on": list(self.depends_on), "outcome": self.outcome, "error": self.error}


@dataclass
class ApplyReport:
    backend: str
    steps: list[Step]

    @property
    def ok(self) -> bool:
        return all(s.outcome == OK for s in self.steps)

    @property
    def failed(self) -> list[Step]:
        return [s for s in self.steps if s.outcome == FAILED]

    @property
    def skipped(self) -> list[Step]:
        return [s for s in self.steps if s.outcome == SKIPPED]

    @property
    def first_permission_failure(self) -> Step | None:
        return next((s for s in self.steps if s.permission_denied), None)

    def to_dict(self) -> dict:
        return {"backend": self.backend, "ok": self.ok, "steps": [s.to_dict() for s in self.steps]}

    def format(self) -> str:
        lines = []
        for s in self.steps:
            line = f"[{s.outcome or 'pending':7}] {s.id:<28} {s.target}"
            if s.error:
                line += f"  ({s.error})"
            lines.append(line)
        return "\n".join(lines)


def rt_irqs(plan: TuningPlan) -> dict[int, object]:
    """RT IRQ number -> the rule that selected it."""
    out = {}
    for rule in plan.irq_rules:
        for irq in rule.select(plan.irq_names):
            out.setdefault(irq, rule)
    return out


def default_irqs(plan: TuningPlan) -> list[int]:
    if plan.isolation is None:
        return []
    rt = rt_irqs(plan)
    return sorted(irq for irq in plan.irq_names if irq not in rt)


def build_steps(plan: TuningPlan, pid: int | None = None) -> list[Step]:
    """Ordered steps: qdisc, VLAN map, IRQ affinity/priority, cpuset shield, process setup."""
    steps: list[Step] = []
    if plan.priority_map is not None:
        argv = mqprio_argv(plan.priority_map, plan.device)
        steps.append(Step("qdisc", "command", " ".join(argv), lambda b, a=argv: b.run(a)))
        if plan.shaper is not None:
            argv = tbf_argv(plan.shaper, plan.device)
            steps.append(Step("qdisc-tbf", "command", " ".join(argv), lambda b, a=argv: b.run(a),
                              depends_on=("qdisc",)))
    if plan.vlan_map is not None:
        argv = vlan_egress_argv(plan.vlan_map)
        steps.append(Step("vlan-egress", "command", " ".join(argv), lambda b, a=argv: b.run(a)))

    for irq, rule in rt_irqs(plan).items():
        sid = f"irq-affinity:{irq}"
        steps.append(Step(sid, "irq-affinity", f"/proc/irq/{irq}/smp_affinity <- {format_cpulist(rule.cpus)}",
                          lambda b, i=irq, c=rule.cpus: b.write_irq_affinity(i, c)))
        if rule.thread_priority is not None:
            steps.append(Step(f"irq-priority:{irq}", "irq-priority",
                              f"irq/{irq} SCHED_FIFO {rule.thread_priority}",
                              lambda b, i=irq, p=rule.thread_priority: b.set_irq_thread_priority(i, p),
                              depends_on=(sid,)))

    iso = plan.isolation
    if iso is not None:
        for irq in default_irqs(plan):
            steps.append(Step(f"irq-affinity:{irq}", "irq-affinity",
                              f"/proc/irq/{irq}/smp_affinity <- {format_cpulist(iso.irq_default_cpus)}",
                              lambda b, i=irq, c=iso.irq_default_cpus: b.write_irq_affinity(i, c)))
        sid = f"cpuset:{iso.cpuset_name}"
        steps.append(Step(sid, "cpuset", f"{iso.cpuset_name} cpus={format_cpulist(iso.isolated_cpus)}",
                          lambda b: b.create_cpuset(iso.cpuset_name, iso.isolated_cpus)))
        if iso.migrate_existing_tasks:
            steps.append(Step("cpuset:migrate", "cpuset-migrate",
                              f"system tasks -> cpus {format_cpulist(iso.irq_default_cpus)}",
                              lambda b: b.migrate_tasks("system", iso.irq_default_cpus),
                              depends_on=(sid,)))

    if pid is not None:
        if plan.rt_sched is not None and plan.rt_sched.realtime:
            steps.append(Step("task-sched", "sched", f"pid {pid} SCHED_FIFO {plan.rt_sched.priority}",
                              lambda b: b.set_task_sched(pid, "fifo", plan.rt_sched.priority)))
        if plan.app_cpus:
            steps.append(Step("task-affinity", "affinity", f"pid {pid} -> {format_cpulist(plan.app_cpus)}",
                              lambda b: b.set_task_affinity(pid, plan.app_cpus)))
        if iso is not None:
            sid = f"cpuset:{iso.cpuset_name}"
            steps.append(Step("task-cpuset", "cpuset-attach", f"pid {pid} -> {iso.cpuset_name}",
                              lambda b: b.attach_task(iso.cpuset_name, pid), depends_on=(sid,)))
    return steps


def apply(plan: TuningPlan, backend: SystemBackend, pid: int | None = None) -> ApplyReport:
    """Execute plan steps in order. A failed step causes its dependents to be skipped."""
    steps = build_steps(plan, pid)
    state: dict[str, str] = {}
    for step in steps:
        blocked = [d for d in step.depends_on if state.get(d) != OK]
        if blocked:
            step.outcome = SKIPPED
            step.error = f"depends on {', '.join(blocked)}"
        else:
            try:
                step.do(backend)
                step.outcome = OK
            except PermissionError as exc:
                step.outcome = FAILED
                step.permission_denied = True
                step.error = f"permission denied: {exc}"
            except (OSError, ValueError, RuntimeError) as exc:
                step.outcome = FAILED
                step.error = str(exc)
        state[step.id] = step.outcome
    return ApplyReport(backend.name, steps)


@dataclass
class VerifyItem:
    id: str
    expected: str
    actual: str
    status: str


@dataclass
class VerifyReport:
    backend: str
    items: list[VerifyItem]

    @property
    def mismatches(self) -> list[VerifyItem]:
        return [i for i in self.items if i.status == MISMATCH]

    @property
    def unknown(self) -> list[VerifyItem]:
        return [i for i in self.items if i.status == UNKNOWN]

    @property
    def consistent(self) -> bool:
        return all(i.status == MATCH for i in self.items)

    def to_dict(self) -> dict:
        return {"backend": self.backend, "consistent": self.consistent,
                "items": [vars(i) for i in self.items]}

    def format(self) -> str:
        return "\n".join(f"[{i.status:8}] {i.id:<28} expected {i.expected}; actual {i.actual}"
                         for i in self.items)


def _check(items: list[VerifyItem], id: str, expected, read: Callable[[], object], show=str) -> None:
    try:
        actual = read()
    except (OSError, ValueError, RuntimeError) as exc:
        items.append(VerifyItem(id, show(expected), f"unreadable: {exc}", UNKNOWN))
        return
    status = MATCH if actual == expected else MISMATCH
    items.append(VerifyItem(id, show(expected), "none" if actual is None else show(actual), status))


def verify(plan: TuningPlan, backend: SystemBackend, pid: int | None = None) -> VerifyReport:
    items: list[VerifyItem] = []
    if plan.priority_map is not None:
        pm = plan.priority_map

        def read_qdisc():
            state = parse_qdisc_show(backend.qdisc_show(plan.device))
            if state is None:
                return None
            # a real mqprio root always has one child per class
            if len(state.children) != state.priority_map.num_tc:
                return ("children", len(state.children))
            return state.priority_map

        _check(items, "qdisc", pm, read_qdisc,
               show=lambda m: " ".join(map(str, m.prio_tc_map)) if hasattr(m, "prio_tc_map") else str(m))
    if plan.vlan_map is not None:
        vm = plan.vlan_map
        _check(items, "vlan-egress", vm,
               lambda: parse_ip_link_egress(backend.link_show(vm.device), vm.device),
               show=lambda m: " ".join(f"{i}:{p}" for i, p in enumerate(m.mapping)))

    cpus_show = format_cpulist
    for irq, rule in rt_irqs(plan).items():
        _check(items, f"irq-affinity:{irq}", rule.cpus, lambda i=irq: backend.read_irq_affinity(i), cpus_show)
        if rule.thread_priority is not None:
            _check(items, f"irq-priority:{irq}", rule.thread_priority,
                   lambda i=irq: backend.read_irq_thread_priority(i))
    iso = plan.isolation
    if iso is not None:
        for irq in default_irqs(plan):
            _check(items, f"irq-affinity:{irq}", iso.irq_default_cpus,
                   lambda i=irq: backend.read_irq_affinity(i), cpus_show)
        _check(items, f"cpuset:{iso.cpuset_name}", iso.isolated_cpus,
               lambda: backend.read_cpuset(iso.cpuset_name), cpus_show)
    if pid is not None:
        if plan.rt_sched is not None and plan.rt_sched.realtime:
            _check(items, "task-sched", ("fifo", plan.rt_sched.priority), lambda: backend.read_task_sched(pid))
        if plan.app_cpus:
            _check(items, "task-affinity", plan.app_cpus, lambda: backend.read_task_affinity(pid), cpus_show)
    return VerifyReport(backend.name, items)
