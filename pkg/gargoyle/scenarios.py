# gargoyle/scenarios.py
# Insider scenarios: the scripted timeline one run replays, and the seeded
# generator that fills the four categories (own device / proximity / on-path
# forwarding device / compound).

import json
import random
from pathlib import Path
from typing import Literal

import structlog
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from gargoyle.agents._resources import get_map, get_policies
from gargoyle.config import HACKING_TOOLS, PROVIDER_IP, SEED, GeneratorConfig
from gargoyle.context import FlowEvent
from gargoyle.errors import ConfigError, SchemaError
from gargoyle.netsim import FaultAction, Medium, Network

log = structlog.get_logger(__name__)

# ------------- CONFIG -------------
HORIZON_MS       = 90_000
HISTORIC_AT_MS   = (2_000, 5_000)   # historic injections land here
INJECT_AT_MS     = 70_000           # recent injections start here
FAULT_AT_MS      = 60_000
REQUEST_AT_MS    = 75_000
BACKGROUND_MS    = (10_000, 60_000)
SCAN_PORTS       = 30
SCAN_SPACING_MS  = 100
DOS_EVENTS       = 10
DOS_PACKETS      = 1_500
PROVIDER_FD      = "P3"
PROVIDER_USER    = "provider"
GOAL_FUNCTIONS   = ("Email", "Print", "Copy")
GOAL_LABEL       = "sensitive"
EXTERNAL_IP      = "198.51.100.20"
RESTRICTED_SITES = ("pastebin.example", "filedrop.example", "anon-proxy.example", "torrent-tracker.example")
MALWARE_SIGS     = ("emotet", "trickbot", "mimikatz-dropper")
# ----------------------------------

# where a request for each object passes the org gate, and where it does not
ALLOWED_EDGES = {
    "F1": ("R1", "R2", "R3", "P1", "P2"),
    "F2": ("R1", "R2", "R3", "P1", "P2", "P4"),
    "F3": ("R1", "R2", "P1", "P2"),
    "F4": ("R1", "R2", "R3", "R4", "P1", "P2", "P4"),
}
MISMATCH_EDGES = {"F1": ("R4", "P4"), "F2": ("R4",), "F3": ("R3", "R4", "P4")}
ROLE_RANGE = {"F1": (2, 9), "F2": (1, 6), "F3": (1, 4), "F4": (1, 12)}
USER_EDGES = ("R1", "R2", "R3", "R4", "P1", "P2", "P4")


class UserSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")
    user_id: str
    role: str


class AttachSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")
    time: int = Field(ge=0)
    user_id: str
    device_ip: str
    fd_id: str
    port_id: int = Field(ge=1)
    medium: Medium


class FaultSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")
    time: int = Field(ge=0)
    fd_id: str
    action: FaultAction
    magnitude_ms: int | None = Field(default=None, ge=1)

    @model_validator(mode="after")
    def _magnitude_iff_delay(self) -> "FaultSpec":
        if (self.action is FaultAction.DELAY) != (self.magnitude_ms is not None):
            raise ValueError("magnitude_ms is required for delay and forbidden otherwise")
        return self


class RequestSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")
    time: int = Field(ge=0)
    request_id: str
    user_id: str
    device_ip: str
    object_id: str


class GoalSpec(BaseModel):
    """The insider's exfiltration step: `function` on every segment labelled `label`."""

    model_config = ConfigDict(extra="forbid")
    request_id: str
    function: str
    label: str = GOAL_LABEL


class ScenarioSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    scenario_id: str
    category: Literal[1, 2, 3, 4]
    org_map: int = Field(ge=1, le=7)
    subtypes: list[str] = Field(default_factory=list)
    traits: list[str] = Field(default_factory=list)
    users: list[UserSpec]
    attachments: list[AttachSpec] = Field(default_factory=list)
    flows: list[FlowEvent] = Field(default_factory=list)
    faults: list[FaultSpec] = Field(default_factory=list)
    requests: list[RequestSpec] = Field(default_factory=list)
    goal: GoalSpec | None = None
    expected: Literal["protected", "benign"] = "protected"
    horizon_ms: int = HORIZON_MS

    @property
    def user_count(self) -> int:
        return len(self.users)

    @model_validator(mode="after")
    def _check(self) -> "ScenarioSpec":
        times = ([a.time for a in self.attachments] + [f.time for f in self.flows]
                 + [f.time for f in self.faults] + [r.time for r in self.requests])
        if any(t > self.horizon_ms for t in times):
            raise ValueError("event after the run horizon")
        users = {u.user_id for u in self.users}
        if any(r.user_id not in users for r in self.requests):
            raise ValueError("request by an undeclared user")
        if self.goal and self.goal.request_id not in {r.request_id for r in self.requests}:
            raise ValueError("goal names an unknown request")
        if self.expected == "protected":
            self._check_category()
        return self

    def _data_requesters(self) -> set[str]:
        """The insider whose request the scenario is about: the goal's requester, else the first one."""
        if self.goal:
            return {r.user_id for r in self.requests if r.request_id == self.goal.request_id}
        return {self.requests[0].user_id} if self.requests else set()

    def _check_category(self) -> None:
        requesters = self._data_requesters()
        per_user: dict[str, int] = {}
        for f in self.flows:
            per_user[f.user_id] = per_user.get(f.user_id, 0) + 1
        own = any(u in requesters for u in per_user)
        # background traffic is one plain flow per user
        near = any(f.user_id not in requesters and (f.annotations or per_user[f.user_id] > 1) for f in self.flows)
        on_path = bool(self.faults)
        present = {1: own, 2: near, 3: on_path}
        if self.category in present and not present[self.category]:
            raise ValueError(f"category {self.category} scenario without its injection")
        if self.category == 4 and sum(present.values()) < 2:
            raise ValueError("compound scenario needs at least two injection kinds")


def load_scenarios(path) -> list[ScenarioSpec]:
    """A file holds one scenario object or a list of them."""
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        items = raw if isinstance(raw, list) else [raw]
        return [ScenarioSpec.model_validate(x) for x in items]
    except OSError as e:
        raise ConfigError(f"could not read scenarios {path}: {e}") from e
    except (json.JSONDecodeError, ValidationError) as e:
        raise SchemaError(f"invalid scenario file {path}: {e}") from e


def dump_scenarios(specs, path) -> None:
    data = [s.model_dump(mode="json") for s in specs]
    Path(path).write_text(json.dumps(data, indent=1), encoding="utf-8")


# ---- generator ----

def _quotas(n: int, shares: dict[int, float]) -> dict[int, int]:
    """largest-remainder apportionment; exact for shares that divide n"""
    raw = {c: n * s for c, s in shares.items()}
    counts = {c: int(v) for c, v in raw.items()}
    left = n - sum(counts.values())
    for c in sorted(raw, key=lambda c: (-(raw[c] - counts[c]), c))[:left]:
        counts[c] += 1
    return counts


def _pick(rng: random.Random, weights: dict[str, float]) -> str:
    keys = sorted(weights)
    return rng.choices(keys, weights=[weights[k] for k in keys])[0]


class _Builder:
    """Accumulates one scenario's timeline."""

    def __init__(self, scenario_id, category, org_map, rng):
        self.id = scenario_id
        self.category = category
        self.org_map = org_map
        self.rng = rng
        self.users, self.attachments, self.flows, self.faults = [], [], [], []
        self.subtypes, self.traits = [], []
        self._ports: dict[str, int] = {}
        self._flow_ids = 0

    def ip(self, n: int) -> str:
        return f"10.0.{1 + n // 200}.{1 + n % 200}"

    def attach(self, user_id, ip, fd_id, t=0):
        port = self._ports.get(fd_id, 1) + 1
        self._ports[fd_id] = port
        medium = Medium.WIRELESS if fd_id.startswith("R") else Medium.WIRED
        self.attachments.append(AttachSpec(time=t, user_id=user_id, device_ip=ip, fd_id=fd_id,
                                           port_id=port, medium=medium))

    def flow(self, t, user_id, src, dst, port, packets=1, annotations=(), domain=None):
        self._flow_ids += 1
        self.flows.append(FlowEvent(time=t, flow_id=f"{self.id}-f{self._flow_ids}", src_ip=src, dst_ip=dst,
                                    dst_port=port, user_id=user_id, bytes=packets * 512, packets=packets,
                                    annotations=frozenset(annotations), dst_domain=domain))


def _inject_requester(b: _Builder, kind: str, user, ip, rng):
    b.subtypes.append(f"requester:{kind}")
    if kind == "restricted-domain":
        b.flow(INJECT_AT_MS, user, ip, "203.0.113.7", 443, domain=rng.choice(RESTRICTED_SITES))
    elif kind == "hacking-tool":
        b.flow(INJECT_AT_MS, user, ip, EXTERNAL_IP, 443, annotations=[f"os-fingerprint:{rng.choice(HACKING_TOOLS)}"])
    elif kind == "port-scan":
        for i in range(SCAN_PORTS):
            b.flow(INJECT_AT_MS + i * SCAN_SPACING_MS, user, ip, PROVIDER_IP, 1 + i)
    elif kind == "historic-malware":
        b.flow(rng.randint(*HISTORIC_AT_MS), user, ip, EXTERNAL_IP, 80,
               annotations=[f"malware-sig:{rng.choice(MALWARE_SIGS)}"])
    elif kind == "dos":
        for i in range(DOS_EVENTS):
            b.flow(INJECT_AT_MS + i * 100, user, ip, PROVIDER_IP, 80, packets=DOS_PACKETS)


def _inject_proximity(b: _Builder, kind: str, user, ip, target_ip, rng):
    b.subtypes.append(f"proximity:{kind}")
    if kind == "hacking-tool":
        b.flow(INJECT_AT_MS, user, ip, target_ip, 22, annotations=[f"os-fingerprint:{rng.choice(HACKING_TOOLS)}"])
    elif kind == "port-scan":
        for i in range(SCAN_PORTS):
            b.flow(INJECT_AT_MS + i * SCAN_SPACING_MS, user, ip, target_ip, 1 + i)
    elif kind == "malware":
        b.flow(INJECT_AT_MS, user, ip, EXTERNAL_IP, 80, annotations=[f"malware-sig:{rng.choice(MALWARE_SIGS)}"])


def _inject_on_path(b: _Builder, network: Network, src_fd: str, rng, reroute_share: float):
    path = network.shortest_path(src_fd, PROVIDER_FD)
    avoidable = [d for d in path[1:-1] if network.shortest_path(src_fd, PROVIDER_FD, avoid={d})]
    if avoidable and rng.random() < reroute_share:
        site, where = rng.choice(avoidable), "interior"
    else:
        site, where = path[0], "ingress"
    action = rng.choice(list(FaultAction))
    magnitude = rng.randint(20, 200) if action is FaultAction.DELAY else None
    b.faults.append(FaultSpec(time=FAULT_AT_MS, fd_id=site, action=action, magnitude_ms=magnitude))
    b.subtypes.append(f"on-path:{action.value}@{where}")


def _components(category: int, rng, config: GeneratorConfig) -> list[int]:
    if category < 4:
        return [category]
    return [int(c) for c in _pick(rng, config.compound_mix).split("+")]


def _build(index: int, category: int, rng: random.Random, config: GeneratorConfig, roles) -> ScenarioSpec:
    sid = f"S{index:04d}"
    org_map = rng.choice(config.maps)
    b = _Builder(sid, category, org_map, rng)
    n_users = int(min(config.users_max, max(config.users_min, round(rng.gauss(config.users_mean, config.users_sd)))))
    parts = _components(category, rng, config)

    # the data requester
    object_id = "F1" if rng.random() < config.war_object_share else rng.choice(("F2", "F3", "F4"))
    lo, hi = ROLE_RANGE[object_id]
    edges = ALLOWED_EDGES[object_id]
    if object_id in MISMATCH_EDGES and rng.random() < config.role_mismatch_rate:
        outside = [i for i in range(1, len(roles) + 1) if not lo <= i <= hi]
        role_idx = rng.choice(outside)
        b.traits.append("role-mismatch")
    else:
        role_idx = rng.randint(lo, hi)
    if object_id in MISMATCH_EDGES and rng.random() < config.zone_mismatch_rate:
        edges = MISMATCH_EDGES[object_id]
        b.traits.append("zone-mismatch")
    if role_idx >= 7:
        b.traits.append("junior-role")
    requester, req_ip, req_fd = "U0", b.ip(0), rng.choice(edges)
    b.users.append(UserSpec(user_id=requester, role=roles[role_idx - 1]))

    network = Network(get_map(org_map))
    b.users.append(UserSpec(user_id=PROVIDER_USER, role=roles[-1]))
    b.attach(PROVIDER_USER, PROVIDER_IP, PROVIDER_FD)
    b.attach(requester, req_ip, req_fd)

    others = []
    for n in range(1, n_users):
        uid = f"U{n}"
        b.users.append(UserSpec(user_id=uid, role=rng.choice(roles)))
        fd = req_fd if (n == 1 and 2 in parts) else rng.choice(USER_EDGES)
        b.attach(uid, b.ip(n), fd)
        others.append((uid, b.ip(n)))

    for uid, ip in others:
        b.flow(rng.randint(*BACKGROUND_MS), uid, ip, PROVIDER_IP, 445)

    if 1 in parts:
        _inject_requester(b, _pick(rng, config.requester_mix), requester, req_ip, rng)
    if 2 in parts:
        if not others:
            raise ConfigError("a proximity scenario needs at least two users")
        uid, ip = others[0]
        _inject_proximity(b, _pick(rng, config.proximity_mix), uid, ip, req_ip, rng)
    if 3 in parts:
        _inject_on_path(b, network, req_fd, rng, config.reroute_share)

    rid = f"{sid}-r1"
    b.flows.sort(key=lambda f: (f.time, f.flow_id))
    return ScenarioSpec(
        scenario_id=sid, category=category, org_map=org_map, subtypes=b.subtypes, traits=b.traits,
        users=b.users, attachments=b.attachments, flows=b.flows, faults=b.faults,
        requests=[RequestSpec(time=REQUEST_AT_MS, request_id=rid, user_id=requester,
                              device_ip=req_ip, object_id=object_id)],
        goal=GoalSpec(request_id=rid, function=rng.choice(GOAL_FUNCTIONS)),
    )


def generate_scenarios(config: GeneratorConfig | None = None, seed: int = SEED) -> list[ScenarioSpec]:
    config = config or GeneratorConfig()
    if config.scenarios == 0:
        return []
    rng = random.Random(seed)
    quotas = _quotas(config.scenarios, config.category_shares)
    categories = [c for c in sorted(quotas) for _ in range(quotas[c])]
    rng.shuffle(categories)
    roles = list(get_policies().vocab.roles)
    specs = [_build(i + 1, c, rng, config, roles) for i, c in enumerate(categories)]
    log.info("scenarios_generated", n=len(specs), quotas=quotas, seed=seed)
    return specs
