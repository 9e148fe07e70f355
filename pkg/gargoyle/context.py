# gargoyle/context.py
# Traffic Context Analyzer + Flow Stats Analyzer + Context Repository.
# Flow events in, Network Context Attributes (NCAs) out; detectors are pure
# functions, the analyzer only keeps their sliding windows and dedup keys.

import ipaddress
import json
from bisect import bisect_left, bisect_right, insort
from collections import defaultdict, deque
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from pathlib import Path
from typing import Any

import structlog
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_serializer, model_validator

from gargoyle.config import ORG_NETWORKS, DetectorConfig
from gargoyle.errors import SchemaError

log = structlog.get_logger(__name__)


class NCAKind(str, Enum):
    DEVICE_CAPABILITY = "DeviceCapability"
    SECURITY_LEVEL = "SecurityLevel"
    INTERACTION = "Interaction"
    CONNECTION_STATUS = "ConnectionStatus"
    SUSPICIOUS_ACTIVITY = "SuspiciousActivity"
    LOCATION = "Location"
    RATE_ANOMALY = "RateAnomaly"


# fixed detail payload per kind; SuspiciousActivity varies with its "activity"
_DETAIL_SCHEMA = {
    NCAKind.DEVICE_CAPABILITY: {"tool", "hacking"},
    NCAKind.SECURITY_LEVEL: {"level"},
    NCAKind.INTERACTION: {"peer"},
    NCAKind.CONNECTION_STATUS: {"medium", "fd_id", "port_id"},
    NCAKind.LOCATION: {"zone", "fd_id", "port_id"},
    NCAKind.RATE_ANOMALY: {"rate"},
}
_ACTIVITY_SCHEMA = {
    "port-scan": {"activity", "count"},
    "restricted-domain": {"activity", "target"},
    "malware": {"activity", "signature"},
}
SECURITY_LEVELS = ("high", "medium", "low")


@dataclass(frozen=True)
class NetworkContextAttribute:
    kind: NCAKind
    user_id: str
    device_ip: str
    detail: dict[str, Any]
    time: int
    source: str

    def __post_init__(self):
        if self.kind is NCAKind.SUSPICIOUS_ACTIVITY:
            expected = _ACTIVITY_SCHEMA.get(self.detail.get("activity"))
        else:
            expected = _DETAIL_SCHEMA[self.kind]
        if expected is None or set(self.detail) != expected:
            raise ValueError(f"bad {self.kind.value} detail: {self.detail}")

    def key(self):
        return (self.kind.value, self.user_id, self.device_ip,
                tuple(sorted(self.detail.items())), self.time, self.source)

    def __hash__(self):
        return hash(self.key())

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "user_id": self.user_id, "device_ip": self.device_ip,
                "detail": dict(self.detail), "time": self.time, "source": self.source}


NCA = NetworkContextAttribute


class FlowEvent(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    time: int = Field(ge=0)
    flow_id: str = Field(min_length=1)
    src_ip: str
    dst_ip: str
    dst_port: int = Field(ge=0, le=65535)
    user_id: str = Field(min_length=1)
    bytes: int = Field(ge=1)
    packets: int = Field(ge=1)
    annotations: frozenset[str] = frozenset()
    dst_domain: str | None = None

    @model_validator(mode="after")
    def _bytes_cover_packets(self) -> "FlowEvent":
        if self.bytes < self.packets:
            raise ValueError("bytes must be >= packets")
        return self

    @field_serializer("annotations")
    def _sorted_annotations(self, v):
        return sorted(v)


# ---- repository ----

class ContextRepository:
    """Append-only NCA log indexed by user and time, plus the data-plane report log."""

    def __init__(self):
        self._seq = 0
        self._entries: dict[str, list[tuple[int, int, NCA]]] = defaultdict(list)
        self._times: dict[str, list[int]] = defaultdict(list)
        self._reports: list = []
        self._subscribers = []

    def subscribe(self, callback) -> None:
        self._subscribers.append(callback)

    def _notify(self, update) -> None:
        for cb in list(self._subscribers):
            cb(update)

    def append(self, nca: NCA) -> None:
        item = (nca.time, self._seq, nca)
        self._seq += 1
        entries, times = self._entries[nca.user_id], self._times[nca.user_id]
        if not times or nca.time >= times[-1]:
            entries.append(item)
            times.append(nca.time)
        else:
            insort(entries, item, key=lambda x: (x[0], x[1]))
            insort(times, nca.time)
        self._notify(nca)

    def append_report(self, report) -> None:
        self._reports.append((self._seq, report))
        self._seq += 1
        self._notify(report)

    def query(self, user_id: str, t0: int, t1: int, kinds=None, device_ip=None, limit=None) -> list[NCA]:
        if t0 > t1:
            raise ValueError("query window needs t0 <= t1")
        times = self._times.get(user_id)
        if not times:
            return []
        entries = self._entries[user_id]
        lo, hi = bisect_left(times, t0), bisect_right(times, t1)
        out = []
        for _, seq, nca in entries[lo:hi]:
            if limit is not None and seq >= limit:
                continue
            if kinds and nca.kind not in kinds:
                continue
            if device_ip is not None and nca.device_ip != device_ip:
                continue
            out.append(nca)
        return out

    def reports(self, t0=None, t1=None, fd_ids=None, limit=None) -> list:
        out = []
        for seq, r in self._reports:
            if limit is not None and seq >= limit:
                continue
            if t0 is not None and r.time < t0:
                continue
            if t1 is not None and r.time > t1:
                continue
            if fd_ids is not None and r.fd_id not in fd_ids:
                continue
            out.append(r)
        return out

    def flagged_devices(self, limit=None) -> frozenset[str]:
        # flagged for the rest of the run; no expiry
        return frozenset(r.fd_id for r in self.reports(limit=limit))

    def subjects(self) -> list[str]:
        return sorted(u for u, t in self._times.items() if t)

    def all(self) -> list[NCA]:
        items = [item for entries in self._entries.values() for item in entries]
        return [nca for _, _, nca in sorted(items, key=lambda x: (x[0], x[1]))]

    def __len__(self):
        return sum(len(t) for t in self._times.values())

    def view(self) -> "RepositoryView":
        return RepositoryView(self, self._seq)


class RepositoryView:
    """Read-only prefix of a repository: later appends are invisible to it."""

    def __init__(self, repo: ContextRepository, limit: int):
        self._repo = repo
        self._limit = limit

    def query(self, user_id, t0, t1, kinds=None, device_ip=None):
        return self._repo.query(user_id, t0, t1, kinds, device_ip, limit=self._limit)

    def reports(self, t0=None, t1=None, fd_ids=None):
        return self._repo.reports(t0, t1, fd_ids, limit=self._limit)

    def flagged_devices(self):
        return self._repo.flagged_devices(limit=self._limit)


def query(repo, subject: str, window: tuple[int, int], kinds=None) -> list[NCA]:
    t0, t1 = window
    return repo.query(subject, t0, t1, kinds)


# ---- detectors ----

@lru_cache(maxsize=32)
def _networks(cidrs: tuple[str, ...]):
    return tuple(ipaddress.ip_network(c) for c in cidrs)


def is_internal(ip: str, networks=ORG_NETWORKS) -> bool:
    try:
        addr = ipaddress.ip_address(ip)
    except ValueError:
        return False
    return any(addr in n for n in _networks(tuple(networks)))


def detect_signatures(event: FlowEvent, hacking_tools=frozenset()) -> list[NCA]:
    out = []
    for tag in sorted(event.annotations):
        prefix, _, value = tag.partition(":")
        if not value:
            continue
        if prefix in ("os-fingerprint", "tool"):
            out.append(NCA(NCAKind.DEVICE_CAPABILITY, event.user_id, event.src_ip,
                           {"tool": value, "hacking": value in hacking_tools}, event.time, "signature"))
        elif prefix == "malware-sig":
            out.append(NCA(NCAKind.SUSPICIOUS_ACTIVITY, event.user_id, event.src_ip,
                           {"activity": "malware", "signature": value}, event.time, "signature"))
    return out


def _in_window(events, window_ms, now):
    if now is None:
        now = max(e.time for e in events)
    return now, [e for e in events if now - window_ms < e.time <= now]


def detect_port_scan(events, threshold: int, window_ms: int, now=None) -> NCA | None:
    """Port-scan finding iff the distinct destination ports inside (now-W, now] reach the threshold."""
    if not events:
        return None
    now, recent = _in_window(events, window_ms, now)
    ports = {e.dst_port for e in recent}
    if not recent or len(ports) < threshold:
        return None
    last = recent[-1]
    return NCA(NCAKind.SUSPICIOUS_ACTIVITY, last.user_id, last.src_ip,
               {"activity": "port-scan", "count": len(ports)}, now, "port-scan")


def analyze_flow_stats(events, threshold_pps: float, window_ms: int, now=None) -> NCA | None:
    if not events:
        return None
    now, recent = _in_window(events, window_ms, now)
    if not recent:
        return None
    rate = sum(e.packets for e in recent) * 1000.0 / window_ms
    if rate < threshold_pps:
        return None
    last = recent[-1]
    return NCA(NCAKind.RATE_ANOMALY, last.user_id, last.src_ip, {"rate": rate}, now, "flow-stats")


def detect_restricted_access(event: FlowEvent, blocklist) -> NCA | None:
    hit = None
    if event.dst_domain and event.dst_domain in blocklist:
        hit = event.dst_domain
    elif event.dst_ip in blocklist:
        hit = event.dst_ip
    if hit is None:
        return None
    return NCA(NCAKind.SUSPICIOUS_ACTIVITY, event.user_id, event.src_ip,
               {"activity": "restricted-domain", "target": hit}, event.time, "blocklist")


def record_interaction(repo, event: FlowEvent, networks=ORG_NETWORKS) -> NCA | None:
    if not (is_internal(event.src_ip, networks) and is_internal(event.dst_ip, networks)):
        return None
    nca = NCA(NCAKind.INTERACTION, event.user_id, event.src_ip, {"peer": event.dst_ip}, event.time, "interaction")
    if repo is not None:
        repo.append(nca)
    return nca


def derive_security_level(ncas) -> str:
    level = "high"
    for n in ncas:
        if n.kind in (NCAKind.SUSPICIOUS_ACTIVITY, NCAKind.RATE_ANOMALY):
            return "low"
        if n.kind is NCAKind.DEVICE_CAPABILITY and n.detail.get("hacking"):
            level = "medium"
    return level


# ---- the stateful analyzer ----

class TrafficContextAnalyzer:
    def __init__(self, repo: ContextRepository, config: DetectorConfig | None = None,
                 blocklist=frozenset(), zone_of=None):
        self.repo = repo
        self.config = config or DetectorConfig()
        self.blocklist = frozenset(blocklist)
        self._zone_of = zone_of or (lambda fd: fd)
        self._scan = defaultdict(deque)
        self._rate = defaultdict(deque)
        self._last_emit: dict[tuple, int] = {}
        self._flow_time: dict[str, int] = {}
        self._levels: dict[str, str] = {}
        self._ports: dict[str, tuple] = {}

    def _fresh(self, key, now, window) -> bool:
        prev = self._last_emit.get(key)
        if prev is not None and now - prev < window:
            return False
        self._last_emit[key] = now
        return True

    def ingest(self, event: FlowEvent) -> list[NCA]:
        cfg = self.config
        prev = self._flow_time.get(event.flow_id)
        if prev is not None and event.time < prev:
            raise SchemaError(f"flow {event.flow_id} goes back in time ({event.time} < {prev})")
        self._flow_time[event.flow_id] = event.time

        found = []
        per_flow = detect_signatures(event, cfg.hacking_tools)
        restricted = detect_restricted_access(event, self.blocklist)
        if restricted:
            per_flow.append(restricted)
        interaction = record_interaction(None, event, cfg.org_networks)
        if interaction:
            per_flow.append(interaction)
        for nca in per_flow:
            key = (event.flow_id, nca.source, tuple(sorted(nca.detail.items())))
            if self._fresh(key, event.time, cfg.recent_window_ms):
                found.append(nca)

        scan = self._slide(self._scan[event.src_ip], event, cfg.port_scan_window_ms)
        nca = detect_port_scan(scan, cfg.port_scan_threshold, cfg.port_scan_window_ms, event.time)
        if nca and self._fresh((event.src_ip, "port-scan"), event.time, cfg.port_scan_window_ms):
            found.append(nca)

        rate = self._slide(self._rate[event.user_id], event, cfg.rate_window_ms)
        nca = analyze_flow_stats(rate, cfg.rate_threshold_pps, cfg.rate_window_ms, event.time)
        if nca and self._fresh((event.user_id, "flow-stats"), event.time, cfg.rate_window_ms):
            found.append(nca)

        for nca in found:
            self.repo.append(nca)
        level = self._update_level(event.user_id, event.src_ip, event.time)
        if level:
            found.append(level)
        return found

    @staticmethod
    def _slide(window: deque, event, window_ms):
        window.append(event)
        while window and window[0].time <= event.time - window_ms:
            window.popleft()
        return window

    def _update_level(self, user_id, ip, now) -> NCA | None:
        t0 = max(0, now - self.config.recent_window_ms)
        level = derive_security_level(self.repo.query(user_id, t0, now))
        if level == self._levels.get(user_id, "high"):
            return None
        self._levels[user_id] = level
        nca = NCA(NCAKind.SECURITY_LEVEL, user_id, ip, {"level": level}, now, "security-level")
        self.repo.append(nca)
        return nca

    def on_packet_in(self, event) -> list[NCA]:
        """Location + connection-status NCAs whenever a device shows up on a new port or medium."""
        where = (event.fd_id, event.port_id, event.medium.value)
        if self._ports.get(event.device_ip) == where:
            return []
        self._ports[event.device_ip] = where
        out = [
            NCA(NCAKind.LOCATION, event.user_id, event.device_ip,
                {"zone": self._zone_of(event.fd_id), "fd_id": event.fd_id, "port_id": event.port_id},
                event.time, "packet-in"),
            NCA(NCAKind.CONNECTION_STATUS, event.user_id, event.device_ip,
                {"medium": event.medium.value, "fd_id": event.fd_id, "port_id": event.port_id},
                event.time, "packet-in"),
        ]
        for nca in out:
            self.repo.append(nca)
        return out


def ingest(analyzer: TrafficContextAnalyzer, event: FlowEvent) -> list[NCA]:
    return analyzer.ingest(event)


# ---- file formats ----

def load_flow_events(path) -> list[FlowEvent]:
    events = []
    with open(path, encoding="utf-8") as f:
        for n, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                events.append(FlowEvent.model_validate(json.loads(line)))
            except (json.JSONDecodeError, ValidationError) as e:
                raise SchemaError(f"{path}:{n}: {e}") from e
    return events


def parse_blocklist(text: str) -> frozenset[str]:
    entries = set()
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            entries.add(line)
    return frozenset(entries)


def load_blocklist(path) -> frozenset[str]:
    return parse_blocklist(Path(path).read_text(encoding="utf-8"))
