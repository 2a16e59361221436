"""Classification lookups, command emission and the matching parsers.

Emitters produce single-line ``tc``/``ip`` commands. The parsers accept what
the emitters produce plus shell line continuations and repeated blanks, so
hand-written listings parse too.
"""

from __future__ import annotations

import re
import shlex
from dataclasses import dataclass

from .model import NUM_SKB_PRIORITIES, PriorityMap, ShaperSpec, VlanEgressMap


class CommandParseError(ValueError):
    pass


def classify(priority_map: PriorityMap, skb_priority: int) -> tuple[int, int]:
    """(traffic class, hardware TX queue) for an SKB priority."""
    if not isinstance(skb_priority, int) or not 0 <= skb_priority < NUM_SKB_PRIORITIES:
        raise ValueError(f"SKB priority must be in 0..15, got {skb_priority!r}")
    tc = priority_map.prio_tc_map[skb_priority]
    count, offset = priority_map.queues[tc]
    return tc, offset


def mqprio_argv(priority_map: PriorityMap, device: str, hw: int = 0) -> list[str]:
    return [
        "tc", "qdisc", "replace", "dev", device, "root", "mqprio",
        "num_tc", str(priority_map.num_tc),
        "map", *(str(tc) for tc in priority_map.prio_tc_map),
        "queues", *(f"{c}@{o}" for c, o in priority_map.queues),
        "hw", str(hw),
    ]


def mqprio_command(priority_map: PriorityMap, device: str, hw: int = 0) -> str:
    return " ".join(mqprio_argv(priority_map, device, hw))


def _tokens(command: str) -> list[str]:
    return shlex.split(command.replace("\\\n", " "))


def parse_mqprio_command(command: str) -> tuple[str, PriorityMap]:
    """Inverse of :func:`mqprio_command`: returns ``(device, map)``."""
    toks = _tokens(command)
    head = ["tc", "qdisc"]
    if toks[:2] != head or len(toks) < 3 or toks[2] not in ("add", "replace", "change"):
        raise CommandParseError(f"not a tc qdisc add/replace command: {command!r}")
    try:
        device = toks[toks.index("dev") + 1]
        i = toks.index("mqprio")
        if "root" not in toks[3:i]:
            raise CommandParseError("mqprio must be attached at root")
        rest = toks[i + 1:]
        num_tc = int(rest[rest.index("num_tc") + 1])
        m = rest.index("map")
        prio_map = tuple(int(t) for t in rest[m + 1:m + 1 + NUM_SKB_PRIORITIES])
        q = rest.index("queues")
        spans = []
        for tok in rest[q + 1:q + 1 + num_tc]:
            c, o = tok.split("@")
            spans.append((int(c), int(o)))
    except (ValueError, IndexError) as exc:
        raise CommandParseError(f"malformed mqprio command: {exc}") from exc
    return device, PriorityMap(prio_map, num_tc, tuple(spans))


def vlan_egress_argv(vlan_map: VlanEgressMap) -> list[str]:
    return ["ip", "link", "set", vlan_map.device, "type", "vlan", "egress",
            *(f"{skb}:{pcp}" for skb, pcp in enumerate(vlan_map.mapping))]


def vlan_egress_command(vlan_map: VlanEgressMap) -> str:
    return " ".join(vlan_egress_argv(vlan_map))


def parse_vlan_egress_command(command: str) -> VlanEgressMap:
    toks = _tokens(command)
    if toks[:3] != ["ip", "link", "set"] or "egress" not in toks:
        raise CommandParseError(f"not an ip link vlan egress command: {command!r}")
    device = toks[3]
    mapping = [0] * 8
    for tok in toks[toks.index("egress") + 1:]:
        if ":" not in tok:
            break
        skb, pcp = tok.split(":")
        mapping[int(skb)] = int(pcp)
    return VlanEgressMap(device, tuple(mapping))


def tbf_argv(shaper: ShaperSpec, device: str, parent_handle: str = "8001") -> list[str]:
    return ["tc", "qdisc", "replace", "dev", device, "parent",
            f"{parent_handle}:{shaper.traffic_class + 1}", "tbf",
            "rate", shaper.rate, "burst", shaper.burst, "latency", shaper.latency]


# -- read-back parsing -----------------------------------------------------


@dataclass(frozen=True)
class QdiscState:
    """What ``tc -g qdisc show dev X`` reports for an mqprio root."""

    handle: str
    priority_map: PriorityMap
    children: tuple[tuple[str, str], ...]  # (kind, parent)


_MQPRIO_LINE = re.compile(r"qdisc mqprio (\S+): root\s+tc (\d+) map ((?:\d+\s+){15}\d+)")
_QUEUE_SPAN = re.compile(r"\((\d+):(\d+)\)")
_CHILD_LINE = re.compile(r"qdisc (\S+) \S+: parent (\S+)")


def parse_qdisc_show(text: str) -> QdiscState | None:
    """Parse an mqprio root from ``tc qdisc show`` output; None if there is none."""
    m = _MQPRIO_LINE.search(text)
    if not m:
        return None
    num_tc = int(m.group(2))
    prio_map = tuple(int(x) for x in m.group(3).split())
    after = text[m.end():]
    qline = re.search(r"queues:((?:\s*\(\d+:\d+\))+)", after)
    if not qline:
        raise CommandParseError("mqprio output without a queues: line")
    spans = tuple((int(last) - int(first) + 1, int(first))
                  for first, last in _QUEUE_SPAN.findall(qline.group(1)))
    children = tuple((kind, parent) for kind, parent in _CHILD_LINE.findall(text)
                     if parent.startswith(m.group(1) + ":"))
    return QdiscState(m.group(1), PriorityMap(prio_map, num_tc, spans), children)


def render_qdisc_show(priority_map: PriorityMap, device: str, handle: str = "8001") -> str:
    """Expected ``tc -g qdisc show`` text for a freshly applied mqprio root."""
    lines = [
        f"qdisc mqprio {handle}: root  tc {priority_map.num_tc} map "
        + " ".join(str(x) for x in priority_map.prio_tc_map),
        "             queues:" + " ".join(f"({o}:{o + c - 1})" for c, o in priority_map.queues),
    ]
    for tc in range(priority_map.num_tc, 0, -1):
        lines.append(f"qdisc pfifo_fast 0: parent {handle}:{tc} bands 3 priomap  "
                     "1 2 2 2 1 2 0 0 1 1 1 1 1 1 1 1")
    return "\n".join(lines) + "\n"


_EGRESS_QOS = re.compile(r"egress-qos-map \{([^}]*)\}")


def parse_ip_link_egress(text: str, device: str) -> VlanEgressMap | None:
    """Egress map from ``ip -d link show``; entries the kernel omits map to 0."""
    m = _EGRESS_QOS.search(text)
    if not m:
        return None
    mapping = [0] * 8
    for tok in m.group(1).split():
        skb, pcp = tok.split(":")
        if int(skb) < 8:
            mapping[int(skb)] = int(pcp)
    return VlanEgressMap(device, tuple(mapping))
