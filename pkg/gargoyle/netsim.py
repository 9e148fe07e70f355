# gargoyle/netsim.py
# Deterministic model of the organisation network: topology, attachments,
# the packet-in driven location table, routing with recorded trajectories,
# and the network-level rules the enforcement point installs.

import heapq
import itertools
import json
from dataclasses import dataclass, field
from enum import Enum

import networkx as nx
import structlog
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from gargoyle.config import NOMINAL_HOP_MS
from gargoyle.errors import (
    MediumMismatch, NotAttached, PortOutOfRange, SchemaError, TopologyError,
    UnknownDevice, UnknownTarget, Unreachable,
)

log = structlog.get_logger(__name__)


class DeviceKind(str, Enum):
    CORE = "core"
    EDGE = "edge"


class Medium(str, Enum):
    WIRED = "wired"
    WIRELESS = "wireless"


class FaultAction(str, Enum):
    DROP = "drop"
    DELAY = "delay"
    MISROUTE = "misroute"


class RuleAction(str, Enum):
    QUARANTINE = "quarantine"
    BLOCK = "block"
    RESTRICT_TO_ZONE = "restrict_to_zone"
    REROUTE_AVOIDING = "reroute_avoiding"


# ---- topology document schema ----

class _DeviceDoc(BaseModel):
    model_config = ConfigDict(extra="forbid")

    id: str = Field(min_length=1)
    kind: DeviceKind
    medium: Medium
    ports: int = Field(ge=1)


class _CompromisedDoc(BaseModel):
    model_config = ConfigDict(extra="forbid")

    id: str = Field(min_length=1)
    action: FaultAction
    magnitude_ms: int | None = Field(default=None, ge=1)

    @model_validator(mode="after")
    def _magnitude_iff_delay(self) -> "_CompromisedDoc":
        if (self.action is FaultAction.DELAY) != (self.magnitude_ms is not None):
            raise ValueError("magnitude_ms is required for delay and forbidden otherwise")
        return self


class _TopologyDoc(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str | None = None
    counts: dict[DeviceKind, int] | None = None
    devices: list[_DeviceDoc]
    links: list[tuple[str, str]] = Field(default_factory=list)
    zones: dict[str, str] = Field(default_factory=dict)
    compromised: list[_CompromisedDoc] = Field(default_factory=list)


# ---- domain types ----

@dataclass(frozen=True)
class Behavior:
    action: FaultAction
    magnitude: int | None = None

    def __post_init__(self):
        if (self.action is FaultAction.DELAY) != (self.magnitude is not None):
            raise ValueError("magnitude present iff action is delay")


@dataclass(frozen=True)
class ForwardingDevice:
    id: str
    kind: DeviceKind
    medium: Medium
    ports: int
    compromised_behavior: Behavior | None = None


@dataclass(frozen=True)
class Topology:
    forwarding_devices: tuple[ForwardingDevice, ...]
    links: tuple[tuple[str, str], ...]
    zones: dict[str, str]
    name: str | None = None
    graph: nx.Graph = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "_by_id", {d.id: d for d in self.forwarding_devices})
        if self.graph is None:
            g = nx.Graph()
            g.add_nodes_from(sorted(self._by_id))
            g.add_edges_from(self.links)
            object.__setattr__(self, "graph", g)

    def device(self, fd_id: str) -> ForwardingDevice:
        try:
            return self._by_id[fd_id]
        except KeyError:
            raise UnknownDevice(f"unknown forwarding device {fd_id!r}") from None

    def has_device(self, fd_id: str) -> bool:
        return fd_id in self._by_id

    def zone_of(self, fd_id: str) -> str:
        # unzoned (typically wired core) devices form a zone of their own
        return self.zones.get(fd_id, fd_id)

    @property
    def zone_ids(self) -> frozenset[str]:
        return frozenset(self.zone_of(d.id) for d in self.forwarding_devices)

    def count(self, kind: DeviceKind) -> int:
        return sum(1 for d in self.forwarding_devices if d.kind is kind)


@dataclass(frozen=True)
class Attachment:
    device_ip: str
    user_id: str
    fd_id: str
    port_id: int
    medium: Medium


@dataclass(frozen=True)
class PacketInEvent:
    time: int
    device_ip: str
    user_id: str
    fd_id: str
    port_id: int
    medium: Medium
    flow_id: str | None = None


@dataclass(frozen=True)
class LocationEntry:
    fd_id: str
    port_id: int
    zone: str
    last_seen: int
    medium: Medium
    user_id: str


@dataclass
class LocationTable:
    entries: dict[str, LocationEntry] = field(default_factory=dict)

    def update(self, ip: str, entry: LocationEntry) -> None:
        self.entries[ip] = entry  # last write wins

    def get(self, ip: str) -> LocationEntry | None:
        return self.entries.get(ip)


@dataclass(frozen=True)
class FlowDescriptor:
    flow_id: str
    src_ip: str
    dst_ip: str
    time: int


@dataclass(frozen=True)
class Trajectory:
    flow_id: str
    hops: tuple[tuple[str, int], ...]
    delivered: bool
    sent_at: int = 0
    delivered_at: int | None = None

    @property
    def path(self) -> list[str]:
        return [fd for fd, _ in self.hops]

    @property
    def hop_count(self) -> int:
        return max(len(self.hops) - 1, 0)


@dataclass(frozen=True)
class NetworkRule:
    action: RuleAction
    target: str | None = None
    zones: frozenset[str] = frozenset()
    devices: frozenset[str] = frozenset()
    device_ip: str | None = None

    @classmethod
    def quarantine(cls, user_id):
        return cls(RuleAction.QUARANTINE, target=user_id)

    @classmethod
    def quarantine_device(cls, ip):
        return cls(RuleAction.QUARANTINE, device_ip=ip)

    @classmethod
    def block(cls, fd_id):
        return cls(RuleAction.BLOCK, target=fd_id)

    @classmethod
    def restrict_to_zone(cls, user_id, zones):
        return cls(RuleAction.RESTRICT_TO_ZONE, target=user_id, zones=frozenset(zones))

    @classmethod
    def reroute_avoiding(cls, devices):
        return cls(RuleAction.REROUTE_AVOIDING, devices=frozenset(devices))

    def to_dict(self) -> dict:
        out = {"action": self.action.value}
        if self.target is not None:
            out["target"] = self.target
        if self.zones:
            out["zones"] = sorted(self.zones)
        if self.devices:
            out["devices"] = sorted(self.devices)
        if self.device_ip is not None:
            out["device_ip"] = self.device_ip
        return out


# ---- loading ----

def load_topology(doc) -> Topology:
    """Parse a topology document (JSON text or already-decoded dict) and check its invariants."""
    if isinstance(doc, (str, bytes)):
        try:
            doc = json.loads(doc)
        except json.JSONDecodeError as e:
            raise SchemaError(f"topology is not valid JSON: {e}") from e
    try:
        parsed = _TopologyDoc.model_validate(doc)
    except ValidationError as e:
        raise SchemaError(f"topology schema: {e}") from e

    ids = [d.id for d in parsed.devices]
    dupes = sorted({i for i in ids if ids.count(i) > 1})
    if dupes:
        raise TopologyError(f"duplicate device ids: {dupes}")
    if not ids:
        raise TopologyError("topology has no forwarding devices")
    known = set(ids)

    links = set()
    for a, b in parsed.links:
        if a not in known or b not in known:
            raise TopologyError(f"link ({a}, {b}) references an unknown device")
        if a == b:
            raise TopologyError(f"self-loop on {a}")
        links.add(tuple(sorted((a, b))))

    for ap in parsed.zones:
        if ap not in known:
            raise TopologyError(f"zone entry references unknown device {ap!r}")

    behaviors = {}
    for c in parsed.compromised:
        if c.id not in known:
            raise TopologyError(f"compromised entry references unknown device {c.id!r}")
        behaviors[c.id] = Behavior(c.action, c.magnitude_ms)

    devices = tuple(
        ForwardingDevice(d.id, d.kind, d.medium, d.ports, behaviors.get(d.id))
        for d in sorted(parsed.devices, key=lambda d: d.id)
    )
    missing = [d.id for d in devices if d.medium is Medium.WIRELESS and d.id not in parsed.zones]
    if missing:
        raise TopologyError(f"wireless access points without a zone: {missing}")

    topo = Topology(devices, tuple(sorted(links)), dict(sorted(parsed.zones.items())), parsed.name)
    if not nx.is_connected(topo.graph):
        raise TopologyError("topology graph is not connected")
    if parsed.counts:
        for kind, n in parsed.counts.items():
            if topo.count(kind) != n:
                raise TopologyError(f"expected {n} {kind.value} devices, found {topo.count(kind)}")
    return topo


def resolve_location(table: LocationTable, ip: str) -> str:
    entry = table.get(ip)
    if entry is None:
        raise NotAttached(f"{ip} has no attachment")
    return entry.zone


# ---- event loop ----

class EventQueue:
    """Time-ordered event heap; equal times pop in scheduling order."""

    def __init__(self):
        self._heap = []
        self._seq = itertools.count()

    def schedule(self, time: int, kind: str, payload=None) -> None:
        heapq.heappush(self._heap, (int(time), next(self._seq), kind, payload))

    def __len__(self):
        return len(self._heap)

    def pop(self):
        time, _, kind, payload = heapq.heappop(self._heap)
        return time, kind, payload

    def drain(self):
        while self._heap:
            yield self.pop()


# ---- the simulated network ----

class Network:
    def __init__(self, topology: Topology, nominal_hop_ms: int = NOMINAL_HOP_MS):
        self.topology = topology
        self.nominal_hop_ms = nominal_hop_ms
        self.table = LocationTable()
        self.attachment_log: list[tuple[int, Attachment]] = []
        self.rules: list[NetworkRule] = []
        self._behaviors = {d.id: d.compromised_behavior for d in topology.forwarding_devices if d.compromised_behavior}
        self._seen_flows: set[str] = set()
        self._subscribers = []
        self._users: set[str] = set()
        self._quarantined: set[str] = set()
        self._quarantined_ips: set[str] = set()
        self._blocked: set[str] = set()
        self._zone_limits: dict[str, frozenset[str]] = {}
        self._avoid: set[str] = set()

    # -- subscriptions --

    def subscribe(self, callback) -> None:
        self._subscribers.append(callback)

    def _emit(self, event: PacketInEvent) -> None:
        for cb in list(self._subscribers):
            cb(event)

    # -- attachments --

    def attach_device(self, attachment: Attachment, time: int) -> PacketInEvent:
        fd = self.topology.device(attachment.fd_id)
        if not 1 <= attachment.port_id <= fd.ports:
            raise PortOutOfRange(f"port {attachment.port_id} outside 1..{fd.ports} on {fd.id}")
        if attachment.medium is not fd.medium:
            raise MediumMismatch(f"{attachment.medium.value} attachment on {fd.medium.value} device {fd.id}")
        self.attachment_log.append((time, attachment))
        self._users.add(attachment.user_id)
        entry = LocationEntry(fd.id, attachment.port_id, self.topology.zone_of(fd.id), time,
                              attachment.medium, attachment.user_id)
        self.table.update(attachment.device_ip, entry)
        event = PacketInEvent(time, attachment.device_ip, attachment.user_id, fd.id,
                              attachment.port_id, attachment.medium)
        log.debug("packet_in", ip=attachment.device_ip, fd_id=fd.id, port=attachment.port_id)
        self._emit(event)
        return event

    def location(self, ip: str) -> LocationEntry:
        entry = self.table.get(ip)
        if entry is None:
            raise NotAttached(f"{ip} has no attachment")
        return entry

    def occupants(self, zone: str) -> list[tuple[str, LocationEntry]]:
        return sorted((ip, e) for ip, e in self.table.entries.items() if e.zone == zone)

    # -- faults and rules --

    def set_behavior(self, fd_id: str, behavior: Behavior | None) -> None:
        self.topology.device(fd_id)
        if behavior is None:
            self._behaviors.pop(fd_id, None)
        else:
            self._behaviors[fd_id] = behavior

    def behavior(self, fd_id: str) -> Behavior | None:
        return self._behaviors.get(fd_id)

    def apply_network_rule(self, rule: NetworkRule) -> None:
        action = rule.action
        if action in (RuleAction.QUARANTINE, RuleAction.RESTRICT_TO_ZONE) and rule.device_ip is None:
            if rule.target not in self._users:
                raise UnknownTarget(f"no user {rule.target!r} has ever attached")
        if action is RuleAction.QUARANTINE and rule.device_ip is not None:
            if self.table.get(rule.device_ip) is None:
                raise UnknownTarget(f"no device {rule.device_ip!r} has ever attached")
            self._quarantined_ips.add(rule.device_ip)
        elif action is RuleAction.QUARANTINE:
            self._quarantined.add(rule.target)
        elif action is RuleAction.BLOCK:
            if not self.topology.has_device(rule.target or ""):
                raise UnknownTarget(f"no forwarding device {rule.target!r}")
            self._blocked.add(rule.target)
        elif action is RuleAction.RESTRICT_TO_ZONE:
            unknown = rule.zones - self.topology.zone_ids
            if unknown or not rule.zones:
                raise UnknownTarget(f"unknown zones {sorted(unknown)}")
            prior = self._zone_limits.get(rule.target)
            self._zone_limits[rule.target] = rule.zones if prior is None else prior & rule.zones
        elif action is RuleAction.REROUTE_AVOIDING:
            unknown = [d for d in rule.devices if not self.topology.has_device(d)]
            if unknown:
                raise UnknownTarget(f"unknown devices {sorted(unknown)}")
            self._avoid |= rule.devices
        self.rules.append(rule)
        log.info("network_rule", **rule.to_dict())

    def is_quarantined(self, user_id: str) -> bool:
        return user_id in self._quarantined

    def is_device_quarantined(self, ip: str) -> bool:
        return ip in self._quarantined_ips

    # -- paths --

    def shortest_path(self, src_fd: str, dst_fd: str, avoid=frozenset()) -> list[str] | None:
        """Shortest path with the lexicographically smallest device sequence, or None."""
        excluded = self._blocked | set(avoid)
        g = nx.subgraph_view(self.topology.graph, filter_node=lambda n: n not in excluded)
        if src_fd not in g or dst_fd not in g:
            return None
        dist = nx.single_source_shortest_path_length(g, dst_fd)
        if src_fd not in dist:
            return None
        path = [src_fd]
        node = src_fd
        while node != dst_fd:
            node = min(n for n in g.neighbors(node) if dist.get(n) == dist[node] - 1)
            path.append(node)
        return path

    def _planned_path(self, src_fd: str, dst_fd: str) -> list[str] | None:
        if self._avoid:
            detour = self.shortest_path(src_fd, dst_fd, avoid=self._avoid)
            if detour is not None:
                return detour
        return self.shortest_path(src_fd, dst_fd)

    def expected_path(self, flow: FlowDescriptor) -> list[str]:
        src, dst = self.location(flow.src_ip), self.location(flow.dst_ip)
        path = self._planned_path(src.fd_id, dst.fd_id)
        if path is None:
            raise Unreachable(f"no path {src.fd_id} -> {dst.fd_id}")
        return path

    def _admit(self, *entries: LocationEntry) -> None:
        for e in entries:
            if e.user_id in self._quarantined:
                raise Unreachable(f"user {e.user_id} is quarantined")
            zones = self._zone_limits.get(e.user_id)
            if zones is not None and e.zone not in zones:
                raise Unreachable(f"user {e.user_id} is confined to {sorted(zones)}")

    def _misroute_neighbor(self, node: str, exclude: set[str]) -> str | None:
        options = [n for n in self.topology.graph.neighbors(node) if n not in exclude and n not in self._blocked]
        return min(options) if options else None

    def route_flow(self, flow: FlowDescriptor) -> Trajectory:
        src, dst = self.location(flow.src_ip), self.location(flow.dst_ip)
        self._admit(src, dst)
        for ip in (flow.src_ip, flow.dst_ip):
            if ip in self._quarantined_ips:
                raise Unreachable(f"device {ip} is quarantined")
        plan = self._planned_path(src.fd_id, dst.fd_id)
        if plan is None:
            raise Unreachable(f"no path {src.fd_id} -> {dst.fd_id}")

        if flow.flow_id not in self._seen_flows:
            self._seen_flows.add(flow.flow_id)
            self._emit(PacketInEvent(flow.time, flow.src_ip, src.user_id, src.fd_id,
                                     src.port_id, src.medium, flow.flow_id))

        expected = set(plan)
        hops, visited = [], set()
        t = flow.time
        idx = 0
        limit = 4 * len(self.topology.forwarding_devices)

        def done(delivered, at=None):
            return Trajectory(flow.flow_id, tuple(hops), delivered, flow.time, at)

        while True:
            node = plan[idx]
            t += self.nominal_hop_ms
            hops.append((node, t))
            visited.add(node)
            last = idx == len(plan) - 1
            behavior = self._behaviors.get(node)
            if behavior is not None:
                if behavior.action is FaultAction.DROP:
                    return done(False)
                if behavior.action is FaultAction.DELAY:
                    t += behavior.magnitude
                elif behavior.action is FaultAction.MISROUTE:
                    detour = self._misroute_neighbor(node, expected | visited)
                    if detour is None:
                        # nothing unvisited; bounce out of any port but the planned one
                        wrong = self._misroute_neighbor(node, set() if last else {plan[idx + 1]})
                        if wrong is not None:
                            hops.append((wrong, t + self.nominal_hop_ms))
                        return done(False)
                    rest = None if last else self.shortest_path(detour, plan[-1], avoid=visited)
                    if rest is None:
                        t += self.nominal_hop_ms
                        hops.append((detour, t))
                        return done(False)
                    plan = plan[:idx + 1] + rest
                    last = False
            if last:
                return done(True, t + self.nominal_hop_ms)
            if len(hops) >= limit:
                return done(False)
            idx += 1


def attach_device(state: Network, attachment: Attachment, time: int) -> PacketInEvent:
    return state.attach_device(attachment, time)


def route_flow(state: Network, flow: FlowDescriptor) -> Trajectory:
    return state.route_flow(flow)


def apply_network_rule(state: Network, rule: NetworkRule) -> Network:
    state.apply_network_rule(rule)
    return state
