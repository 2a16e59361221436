from .apply import ApplyReport, VerifyReport, apply, build_steps, verify
from .backend import DryRunBackend, LinuxBackend, SystemBackend
from .commands import (
    classify,
    mqprio_command,
    parse_mqprio_command,
    parse_qdisc_show,
    parse_vlan_egress_command,
    vlan_egress_command,
)
from .model import (
    BOARD_PRIORITY_MAP,
    CpuIsolationPlan,
    IrqAffinityRule,
    Mode,
    PriorityMap,
    RtSchedParams,
    ShaperSpec,
    TuningPlan,
    VlanEgressMap,
)
from .plan import CapabilityError, SystemInventory, plan_for_mode
from .sched import RtPermissionError, enter_rt

__all__ = [
    "ApplyReport", "VerifyReport", "apply", "build_steps", "verify",
    "DryRunBackend", "LinuxBackend", "SystemBackend",
    "classify", "mqprio_command", "parse_mqprio_command", "parse_qdisc_show",
    "parse_vlan_egress_command", "vlan_egress_command",
    "BOARD_PRIORITY_MAP", "CpuIsolationPlan", "IrqAffinityRule", "Mode", "PriorityMap",
    "RtSchedParams", "ShaperSpec", "TuningPlan", "VlanEgressMap",
    "CapabilityError", "SystemInventory", "plan_for_mode",
    "RtPermissionError", "enter_rt",
]
