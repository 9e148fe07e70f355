# gargoyle/harness.py
# Replays scenarios through netsim -> context -> ips -> decision agent, classifies
# every access request, and rolls the outcomes up into a run report.
#
# Usage (via the CLI):
#   python -m gargoyle run --scenarios fixtures/scenarios/sample_scenario_1.json --out report.json
#   python -m gargoyle run --scenarios scenarios.json --out rbac.json --baseline rbac

import json
import random
import time as _time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import pandas as pd
import structlog
from joblib import Parallel, delayed
from pydantic import BaseModel, Field, ValidationError

from gargoyle.agents import REGISTRY
from gargoyle.agents._resources import get_baselines, get_blocklist, get_catalog, get_map, get_policies
from gargoyle.config import PROVIDER_IP, SEED, DetectorConfig, EngineConfig
from gargoyle.context import NCA, ContextRepository, NCAKind, TrafficContextAnalyzer
from gargoyle.engine import AccessRequest, decide, snapshot_context
from gargoyle.errors import GargoyleError, SchemaError
from gargoyle.fbac import AccessControlTensor
from gargoyle.ips import inspect_flow
from gargoyle.netsim import Attachment, Behavior, EventQueue, FlowDescriptor, Medium, Network
from gargoyle.policy import parse_policies
from gargoyle.scenarios import PROVIDER_FD, PROVIDER_USER, USER_EDGES, ScenarioSpec

log = structlog.get_logger(__name__)

# ------------- CONFIG -------------
BASELINE_ALIASES = {"rbac": "rbac", "fbac": "fbac", "fbac_static": "fbac", "ucon": "ucon", "ucon_like": "ucon"}
ROWS = (
    "denied-current-suspicious",
    "denied-historic-suspicious",
    "denied-compromised-path",
    "granted-restricted",
    "denied-role-mismatch",
    "denied-blacklisted",
    "granted-full",
)
BENCH_POLICY_COUNTS = (0, 100, 300, 500, 700, 900)
BENCH_USERS = (10, 30, 90)
BENCH_REPEATS = 3
# ----------------------------------


@dataclass
class ScenarioOutcome:
    scenario_id: str
    category: int
    agent: str
    status: str = "ok"                 # ok | aborted
    diagnostic: str | None = None
    subtypes: list[str] = field(default_factory=list)
    requests: list[dict] = field(default_factory=list)
    protected: bool | None = None      # None when the scenario scripts no goal
    trace: list[dict] = field(default_factory=list)
    latencies_ms: list[float] = field(default_factory=list)

    def to_dict(self, with_trace: bool = False) -> dict:
        out = asdict(self)
        if not with_trace:
            out.pop("trace")
        return out


class LatencyStats(BaseModel):
    decisions: int = 0
    mean_ms: float = 0.0
    p95_ms: float = 0.0


class RunReport(BaseModel):
    agent: str
    scenarios: int
    requests: int
    counts: dict[str, int]
    protected: dict[str, int]
    by_category: dict[str, dict[str, int]]
    latency: LatencyStats
    aborted: list[str] = Field(default_factory=list)
    outcomes: list[dict] = Field(default_factory=list)


# ---- classification ----

def classify(record: dict, universe) -> str:
    """Table row of one decision record."""
    if record["outcome"] == "deny":
        return f"denied-{record['reason']}"
    functions = record["functions"] or {}
    if any(set(fs) != set(universe) for fs in functions.values()):
        return "granted-restricted"
    return "granted-full"


def goal_blocked(record: dict, spec: ScenarioSpec, catalog) -> bool:
    """True when the scripted exfiltration step cannot happen under this decision."""
    if record["outcome"] == "deny":
        return True
    goal = spec.goal
    obj = catalog.get(record["object_id"])
    segments = [s.segment_id for s in obj.segments if goal.label in s.labels]
    functions = record["functions"] or {}
    return all(goal.function not in functions.get(seg, ()) for seg in segments)


# ---- one scenario ----

def _build_network(spec: ScenarioSpec, topology) -> Network:
    return Network(topology or get_map(spec.org_map))


def _schedule(spec: ScenarioSpec) -> EventQueue:
    queue = EventQueue()
    for a in spec.attachments:
        queue.schedule(a.time, "attach", a)
    for f in spec.faults:
        queue.schedule(f.time, "fault", f)
    for e in spec.flows:
        queue.schedule(e.time, "flow", e)
    for r in spec.requests:
        queue.schedule(r.time, "request", r)
    return queue


def _route(network: Network, repo, event, routed: set, tolerance_ms: int) -> None:
    """Carry a flow's first event through the data plane when both ends are inside the network."""
    if event.flow_id in routed:
        return
    routed.add(event.flow_id)
    if network.table.get(event.src_ip) is None or network.table.get(event.dst_ip) is None:
        return
    flow = FlowDescriptor(event.flow_id, event.src_ip, event.dst_ip, event.time)
    try:
        trajectory = network.route_flow(flow)
    except GargoyleError as e:
        log.debug("flow_not_routed", flow_id=event.flow_id, error=str(e))
        return
    inspect_flow(network, repo, flow, trajectory, tolerance_ms)


def run_scenario(spec: ScenarioSpec, policies=None, detectors: DetectorConfig | None = None,
                 agent: str = "gargoyle", topology=None, catalog=None, baselines=None,
                 blocklist=None, engine_config: EngineConfig | None = None) -> ScenarioOutcome:
    """Replay one scenario end to end; a GargoyleError aborts it with a diagnostic."""
    policies = policies or get_policies()
    catalog = catalog or get_catalog()
    outcome = ScenarioOutcome(spec.scenario_id, spec.category, agent, subtypes=list(spec.subtypes))
    try:
        cls = REGISTRY[agent]
    except KeyError:
        outcome.status, outcome.diagnostic = "aborted", f"unknown agent {agent!r}"
        return outcome

    try:
        network = _build_network(spec, topology)
        repo = ContextRepository()
        analyzer = None
        if cls.USES_NETWORK_CONTEXT:
            words = set(get_blocklist() if blocklist is None else blocklist) | set(policies.vocab.blocklist)
            analyzer = TrafficContextAnalyzer(repo, detectors, words, network.topology.zone_of)
            network.subscribe(analyzer.on_packet_in)
        runner = cls(network, repo, policies, catalog, baselines=baselines or get_baselines(),
                     config=engine_config)
        roles = {u.user_id: u.role for u in spec.users}
        for uid, role in roles.items():
            runner.register(uid, role)

        routed: set[str] = set()
        tolerance = (engine_config or EngineConfig()).tolerance_ms
        for t, kind, item in _schedule(spec).drain():
            if kind == "attach":
                network.attach_device(Attachment(item.device_ip, item.user_id, item.fd_id, item.port_id,
                                                 item.medium), t)
            elif kind == "fault":
                network.set_behavior(item.fd_id, Behavior(item.action, item.magnitude_ms))
            elif kind == "flow" and analyzer is not None:
                analyzer.ingest(item)
                _route(network, repo, item, routed, tolerance)
            elif kind == "flow":
                # context-blind models only see what the sending device reports about itself
                runner.observe(item)
            else:
                runner.handle(AccessRequest(item.request_id, item.user_id, item.device_ip,
                                            roles[item.user_id], item.object_id, t))
    except GargoyleError as e:
        log.warning("scenario_aborted", scenario_id=spec.scenario_id, agent=agent, error=str(e))
        outcome.status, outcome.diagnostic = "aborted", f"{type(e).__name__}: {e}"
        return outcome

    outcome.trace = list(runner.trace)
    outcome.latencies_ms = [round(x * 1000, 4) for x in runner.latencies]
    for rec in runner.trace:
        if rec["kind"] != "decision":
            continue
        session = runner.sessions.get(rec["session_id"]) if rec["session_id"] else None
        outcome.requests.append({
            "request_id": rec["request_id"],
            "user_id": rec["user_id"],
            "object_id": rec["object_id"],
            "time": rec["time"],
            "outcome": rec["outcome"],
            "reason": rec["reason"],
            "row": classify(rec, catalog.functions),
            "final_status": session.status.value if session else None,
            "trace_seq": rec["seq"],
        })
        if spec.goal and rec["request_id"] == spec.goal.request_id:
            outcome.protected = goal_blocked(rec, spec, catalog)
    log.debug("scenario_done", scenario_id=spec.scenario_id, agent=agent, requests=len(outcome.requests))
    return outcome


def run_baseline(model: str, spec: ScenarioSpec, **kwargs) -> ScenarioOutcome:
    if model not in BASELINE_ALIASES:
        raise ValueError(f"unknown baseline {model!r}; pick one of {sorted(BASELINE_ALIASES)}")
    return run_scenario(spec, agent=BASELINE_ALIASES[model], **kwargs)


def run_many(specs, agent: str = "gargoyle", jobs: int = 1, **kwargs) -> list[ScenarioOutcome]:
    """Scenarios are independent; with jobs > 1 they fan out over joblib workers."""
    if jobs == 1:
        outcomes = [run_scenario(s, agent=agent, **kwargs) for s in specs]
    else:
        outcomes = Parallel(n_jobs=jobs)(delayed(run_scenario)(s, agent=agent, **kwargs) for s in specs)
    return sorted(outcomes, key=lambda o: o.scenario_id)


# ---- aggregation ----

def _latency(values_ms) -> LatencyStats:
    if not values_ms:
        return LatencyStats()
    s = pd.Series(values_ms, dtype=float)
    return LatencyStats(decisions=len(s), mean_ms=round(float(s.mean()), 4),
                        p95_ms=round(float(s.quantile(0.95)), 4))


def aggregate(outcomes, baselines: dict | None = None) -> RunReport:
    """Counts per table row, protection per model and per scenario category."""
    outcomes = sorted(outcomes, key=lambda o: o.scenario_id)
    if not outcomes:
        raise ValueError("nothing to aggregate")
    baselines = baselines or {}
    agent = outcomes[0].agent

    counts = dict.fromkeys(ROWS, 0)
    for o in outcomes:
        for r in o.requests:
            counts[r["row"]] = counts.get(r["row"], 0) + 1

    models = {agent: outcomes, **baselines}
    protected = {m: sum(1 for o in outs if o.protected) for m, outs in models.items()}

    by_category: dict[str, dict[str, int]] = {}
    for m, outs in models.items():
        for o in outs:
            cell = by_category.setdefault(str(o.category), {"scenarios": 0})
            if m == agent:
                cell["scenarios"] += 1
            cell[m] = cell.get(m, 0) + int(bool(o.protected))

    return RunReport(
        agent=agent,
        scenarios=len(outcomes),
        requests=sum(len(o.requests) for o in outcomes),
        counts=counts,
        protected=protected,
        by_category=dict(sorted(by_category.items())),
        latency=_latency([x for o in outcomes for x in o.latencies_ms]),
        aborted=[o.scenario_id for o in outcomes if o.status == "aborted"],
        outcomes=[o.to_dict() for o in outcomes],
    )


def write_report(report: RunReport, path) -> None:
    Path(path).write_text(report.model_dump_json(indent=1), encoding="utf-8")


def write_trace(outcomes, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for o in outcomes:
            for rec in o.trace:
                f.write(json.dumps({"scenario_id": o.scenario_id, **rec}) + "\n")


def load_report(path) -> RunReport:
    try:
        return RunReport.model_validate_json(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise SystemExit(f"Could not read report {path}: {e}")
    except ValidationError as e:
        raise SchemaError(f"{path} is not a run report: {e}") from e


def compare(paths) -> pd.DataFrame:
    """One row per report: table counts, protection and latency side by side."""
    rows = []
    for p in paths:
        rep = load_report(p)
        row = {"report": Path(p).name, "agent": rep.agent, "scenarios": rep.scenarios, "requests": rep.requests}
        row.update(rep.counts)
        row["protected"] = rep.protected.get(rep.agent, 0)
        row["mean_ms"] = rep.latency.mean_ms
        row["p95_ms"] = rep.latency.p95_ms
        rows.append(row)
    return pd.DataFrame(rows).set_index("report")


# ---- policy-scaling benchmark ----

def _filler_rule(i: int, vocab, rng: random.Random) -> dict:
    lo = rng.randint(1, len(vocab.roles))
    hi = rng.randint(lo, len(vocab.roles))
    return {
        "id": f"bench-{i}",
        "kind": "fbac-context",
        "priority": -(i + 1),
        "condition": {"op": "and", "args": [
            {"op": "role_index", "min": lo, "max": hi},
            {"op": "zone_in", "zones": [rng.choice(vocab.zones)]},
            {"op": "nca", "kind": rng.choice([k.value for k in NCAKind]),
             "subject": rng.choice(["requester", "proximity"])},
        ]},
        "effect": {"type": "restrict", "functions": rng.sample(list(vocab.functions), 2),
                   "segments": {"label": rng.choice(vocab.labels)}},
    }


def _bench_world(n_users: int, rng: random.Random):
    network = Network(get_map(1))
    repo = ContextRepository()
    network.attach_device(Attachment(PROVIDER_IP, PROVIDER_USER, PROVIDER_FD, 2, Medium.WIRED), 0)
    users = []
    for n in range(n_users):
        uid, ip, fd = f"B{n}", f"10.0.{1 + n // 200}.{1 + n % 200}", rng.choice(USER_EDGES)
        medium = Medium.WIRELESS if fd.startswith("R") else Medium.WIRED
        network.attach_device(Attachment(ip, uid, fd, 3 + n % 60, medium), 0)
        repo.append(NCA(NCAKind.INTERACTION, uid, ip, {"peer": PROVIDER_IP}, rng.randint(1, 9_000), "flow"))
        users.append((uid, ip))
    return network, repo, users


def bench_policy_scaling(policy_counts=BENCH_POLICY_COUNTS, users=BENCH_USERS, seed: int = SEED,
                         repeats: int = BENCH_REPEATS) -> pd.DataFrame:
    """Mean and 95th-percentile decide() latency per (policy count, user count) cell."""
    base = get_policies()
    catalog = get_catalog()
    tensor = AccessControlTensor(catalog)
    rng = random.Random(seed)
    rows = []
    for n_users in users:
        network, repo, members = _bench_world(n_users, rng)
        roles = {uid: rng.choice(base.vocab.roles) for uid, _ in members}
        for n_rules in policy_counts:
            doc = base.to_dict()
            doc["rules"] = doc["rules"] + [_filler_rule(i, base.vocab, rng) for i in range(n_rules)]
            policies = parse_policies(doc)
            samples = []
            for _ in range(repeats):
                for uid, ip in members:
                    req = AccessRequest(f"bench-{uid}", uid, ip, roles[uid], rng.choice(catalog.ids()), 10_000)
                    snap = snapshot_context(repo, network, req, policies, catalog, roles)
                    t0 = _time.perf_counter()
                    decide(req, snap, policies, tensor)
                    samples.append((_time.perf_counter() - t0) * 1000)
            s = pd.Series(samples, dtype=float)
            rows.append({"policies": len(policies.rules), "extra_policies": n_rules, "users": n_users,
                         "decisions": len(s), "mean_ms": float(s.mean()), "p95_ms": float(s.quantile(0.95))})
            log.info("bench_cell", policies=len(policies.rules), users=n_users, mean_ms=rows[-1]["mean_ms"])
    return pd.DataFrame(rows)
