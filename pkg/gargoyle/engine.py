# gargoyle/engine.py
# Risk-management PDP + advanced enforcement point.
# snapshot -> decide -> enforce, with sessions that keep being re-checked as context changes.

import itertools
import time as _time
from collections import OrderedDict, deque
from dataclasses import dataclass, field, replace
from enum import Enum

import structlog

from gargoyle.config import EngineConfig
from gargoyle.context import derive_security_level
from gargoyle.errors import SessionOnDeny, Unreachable, UnknownVocabularyReference
from gargoyle.fbac import AccessControlTensor, SegmentSelector
from gargoyle.ips import DataPlaneReport, inspect_flow
from gargoyle.netsim import FlowDescriptor, Medium, Network, NetworkRule, RuleAction
from gargoyle.policy import (
    REASON_PRECEDENCE, Blacklist, Deny, DenyReason, Evidence, NetworkAction, PolicyDocument,
    matching_rules,
)

log = structlog.get_logger(__name__)


@dataclass(frozen=True)
class AccessRequest:
    request_id: str
    user_id: str
    device_ip: str
    role: str
    object_id: str
    time: int


@dataclass(frozen=True)
class ContextSnapshot:
    time: int
    user_id: str
    role: str
    role_index: int
    zone: str
    medium: Medium
    object_id: str
    object_labels: frozenset[str]
    recent: tuple = ()
    historical: tuple = ()
    proximity: dict[str, tuple] = field(default_factory=dict)
    path: tuple[str, ...] = ()
    path_reports: tuple[DataPlaneReport, ...] = ()
    safe_path: tuple[str, ...] | None = ()
    supervisor_present: bool = False
    security_level: str = "high"
    blacklisted: bool = False
    blacklisted_by: tuple[str, ...] = ()


@dataclass(frozen=True)
class AccessDecision:
    outcome: str
    reason: DenyReason | None = None
    functions: dict[str, frozenset[str]] | None = None
    network_actions: tuple[NetworkRule, ...] = ()
    triggering_rules: tuple[str, ...] = ()
    blacklist: tuple[tuple[str, str], ...] = ()

    @property
    def granted(self) -> bool:
        return self.outcome == "grant"

    def restricted(self, universe) -> bool:
        return self.granted and any(fs != universe for fs in self.functions.values())

    def to_dict(self) -> dict:
        return {
            "outcome": self.outcome,
            "reason": self.reason.value if self.reason else None,
            "functions": None if self.functions is None else {s: sorted(f) for s, f in self.functions.items()},
            "actions": [a.to_dict() for a in self.network_actions],
            "triggering_rules": list(self.triggering_rules),
            "blacklisted": sorted({u for u, _ in self.blacklist}),
        }


class SessionStatus(str, Enum):
    ACTIVE = "active"
    REVOKED = "revoked"
    DOWNGRADED = "downgraded"


@dataclass
class Session:
    session_id: str
    request: AccessRequest
    decision: AccessDecision
    tensor: AccessControlTensor | None = None
    status: SessionStatus = SessionStatus.ACTIVE
    path: tuple[str, ...] = ()

    @property
    def live(self) -> bool:
        return self.status is not SessionStatus.REVOKED

    def view(self) -> dict[str, frozenset[str]]:
        if self.tensor is not None:
            return self.tensor.render_view(self.request.user_id, self.request.object_id)
        if not self.live:
            return {seg: frozenset() for seg in self.decision.functions or {}}
        return dict(self.decision.functions)


@dataclass(frozen=True)
class Enforcement:
    view: dict[str, frozenset[str]] | None
    applied: tuple[NetworkRule, ...] = ()


# ---- snapshot ----

def snapshot_context(repo, network: Network, request: AccessRequest, policies: PolicyDocument,
                     catalog, roles=None, blacklist=None, config: EngineConfig | None = None) -> ContextSnapshot:
    cfg = config or EngineConfig()
    roles = roles or {}
    blacklist = blacklist or {}
    now = request.time
    entry = network.location(request.device_ip)
    provider = network.table.get(cfg.provider_ip)
    obj = catalog.get(request.object_id)

    t0 = max(0, now - cfg.recent_window_ms)
    recent = tuple(repo.query(request.user_id, t0, now))
    historical = tuple(repo.query(request.user_id, 0, t0 - 1)) if t0 > 0 else ()

    proximity, supervisors = {}, set(policies.defaults.supervisor_roles)
    supervisor_present = False
    for _, occ in network.occupants(entry.zone):
        if occ.user_id == request.user_id:
            continue
        if roles.get(occ.user_id) in supervisors:
            supervisor_present = True
        if occ.user_id not in proximity:
            proximity[occ.user_id] = tuple(repo.query(occ.user_id, t0, now))

    path = ()
    if provider is None:
        # no reply path to judge; path rules stay silent
        log.warning("provider_unattached", request_id=request.request_id, provider_ip=cfg.provider_ip)
    else:
        flow = FlowDescriptor(f"{request.request_id}/ctx", request.device_ip, cfg.provider_ip, now)
        try:
            path = tuple(network.expected_path(flow))
        except Unreachable:
            pass
    reports = tuple(repo.reports(fd_ids=set(path))) if path else ()
    safe_path = path
    if reports:
        safe = network.shortest_path(entry.fd_id, provider.fd_id, avoid=repo.flagged_devices())
        safe_path = tuple(safe) if safe else None

    return ContextSnapshot(
        time=now, user_id=request.user_id, role=request.role,
        role_index=policies.vocab.role_index(request.role), zone=entry.zone, medium=entry.medium,
        object_id=obj.object_id, object_labels=obj.labels, recent=recent, historical=historical,
        proximity=proximity, path=path, path_reports=reports, safe_path=safe_path,
        supervisor_present=supervisor_present, security_level=derive_security_level(recent),
        blacklisted=request.user_id in blacklist, blacklisted_by=tuple(blacklist.get(request.user_id, ())),
    )


# ---- decision ----

def _reason(ev: Evidence, declared: DenyReason) -> DenyReason:
    if ev.reports:
        return DenyReason.COMPROMISED_PATH
    if "recent" in ev.windows:
        return DenyReason.CURRENT_SUSPICIOUS
    if "historical" in ev.windows:
        return DenyReason.HISTORIC_SUSPICIOUS
    return declared


def _scoped(scope: str, requester: str, ev: Evidence) -> list[str]:
    users = [requester]
    if scope == "requester-and-trigger":
        users += sorted(ev.users - {requester})
    return users


def _network(effect: NetworkAction, request: AccessRequest, snap: ContextSnapshot, ev: Evidence):
    """-> (network rules, denied)"""
    users = _scoped(effect.scope, request.user_id, ev)
    if effect.action is RuleAction.QUARANTINE:
        return [NetworkRule.quarantine(u) for u in users], False
    if effect.action is RuleAction.RESTRICT_TO_ZONE:
        return [NetworkRule.restrict_to_zone(u, effect.zone_set) for u in users], False
    devices = sorted({r.fd_id for r in ev.reports or snap.path_reports})
    if not devices:
        return [], False
    if effect.action is RuleAction.BLOCK:
        return [NetworkRule.block(d) for d in devices], False
    if snap.safe_path:
        return [NetworkRule.reroute_avoiding(devices)], False
    # no safe path left
    if effect.fallback == "quarantine":
        return [NetworkRule.quarantine_device(request.device_ip)], True
    return [], True


def decide(request: AccessRequest, snap: ContextSnapshot, policies: PolicyDocument,
           tensor: AccessControlTensor) -> AccessDecision:
    obj = tensor.catalog.get(request.object_id)
    if snap.blacklisted:
        return AccessDecision("deny", DenyReason.BLACKLISTED, triggering_rules=snap.blacklisted_by)

    reasons, actions, restrictions, fired, blacklist = [], [], [], [], []
    for rule, ev in matching_rules(policies, obj.object_id, snap):
        fired.append(rule.id)
        effect = rule.effect
        if isinstance(effect, Deny):
            reasons.append(_reason(ev, effect.reason))
        elif isinstance(effect, Blacklist):
            blacklist += [(u, rule.id) for u in _scoped(effect.scope, request.user_id, ev)]
            reasons.append(_reason(ev, DenyReason.CURRENT_SUSPICIOUS))
        elif isinstance(effect, NetworkAction):
            rules, denied = _network(effect, request, snap, ev)
            actions += [r for r in rules if r not in actions]
            if denied:
                reasons.append(DenyReason.COMPROMISED_PATH)
        else:
            restrictions.append(effect)

    if reasons:
        reason = min(reasons, key=REASON_PRECEDENCE.index)
        return AccessDecision("deny", reason, None, tuple(actions), tuple(fired), tuple(blacklist))

    view = tensor
    for r in restrictions:
        view = view.restrict(request.user_id, obj, r.selector, r.functions)
    return AccessDecision("grant", None, view.render_view(request.user_id, obj), tuple(actions), tuple(fired))


# ---- sessions and enforcement ----

_session_ids = itertools.count(1)


def open_session(decision: AccessDecision, request: AccessRequest, session_id: str | None = None,
                 path=()) -> Session:
    if not decision.granted:
        raise SessionOnDeny(f"request {request.request_id} was denied; no session")
    return Session(session_id or f"S{next(_session_ids)}", request, decision, path=tuple(path))


def fold_decision(session: Session, decision: AccessDecision) -> tuple[SessionStatus, bool]:
    """Fold a fresh decision into a live session: deny revokes, tighter sets downgrade, nothing ever widens."""
    if not session.live:
        return session.status, False
    if not decision.granted:
        session.status = SessionStatus.REVOKED
        session.decision = decision
        return session.status, True
    old = session.decision.functions
    merged = {seg: old[seg] & decision.functions.get(seg, frozenset()) for seg in old}
    if merged == old:
        return session.status, False
    session.status = SessionStatus.DOWNGRADED
    session.decision = replace(decision, functions=merged)
    return session.status, True


def enforce(decision: AccessDecision, session: Session | None, network: Network,
            base: AccessControlTensor | None = None, host: bool = True) -> Enforcement:
    view = None
    if host and session is not None:
        tensor = session.tensor or base
        if tensor is not None:
            user, obj = session.request.user_id, session.request.object_id
            if not session.live:
                tensor = tensor.revoke(user, obj)
            else:
                for seg, fs in session.decision.functions.items():
                    tensor = tensor.restrict(user, obj, SegmentSelector.one(seg), tensor.allowed(user, obj, seg) - fs)
            session.tensor = tensor
        view = session.view()
    for rule in decision.network_actions:
        network.apply_network_rule(rule)
    return Enforcement(view, tuple(decision.network_actions))


# ---- the running system ----

class SessionStore:
    """Live sessions by id plus the most recent closed ones; the oldest closed session is dropped first."""

    def __init__(self, keep_closed: int):
        self.keep_closed = keep_closed
        self.live: dict[str, Session] = {}
        self.closed: OrderedDict[str, Session] = OrderedDict()

    def add(self, session: Session) -> None:
        self.live[session.session_id] = session

    def close(self, session: Session) -> None:
        if self.live.pop(session.session_id, None) is None:
            return
        self.closed[session.session_id] = session
        while len(self.closed) > self.keep_closed:
            self.closed.popitem(last=False)

    def settle(self, session: Session) -> None:
        if not session.live:
            self.close(session)

    def get(self, session_id: str, default=None) -> Session | None:
        return self.live.get(session_id) or self.closed.get(session_id, default)

    def __getitem__(self, session_id: str) -> Session:
        session = self.get(session_id)
        if session is None:
            raise KeyError(session_id)
        return session

    def __contains__(self, session_id) -> bool:
        return self.get(session_id) is not None

    def __len__(self) -> int:
        return len(self.live)

    def values(self) -> list[Session]:
        """Live sessions in opening order, copied so callers may close while iterating."""
        return list(self.live.values())


class Gargoyle:
    """Owns blacklist, sessions and the decision trace; re-evaluates sessions on every relevant repository append."""

    NAME = "gargoyle"

    def __init__(self, network: Network, repo, policies: PolicyDocument, catalog,
                 tensor: AccessControlTensor | None = None, config: EngineConfig | None = None,
                 host_enforcement: bool = True):
        self.network = network
        self.repo = repo
        self.policies = policies
        self.catalog = catalog
        self.tensor = tensor or AccessControlTensor(catalog)
        self.config = config or EngineConfig()
        self.host_enforcement = host_enforcement
        self.blacklist: dict[str, list[str]] = {}
        self.roles: dict[str, str] = {}
        self.sessions = SessionStore(self.config.closed_sessions_kept)
        self.trace: list[dict] = []
        self.latencies: deque[float] = deque(maxlen=self.config.latency_samples)
        self._ids = itertools.count(1)
        self._now = 0
        self._in_flight: set[str] = set()
        repo.subscribe(self._on_update)

    def register(self, user_id: str, role: str) -> None:
        self.roles[user_id] = role

    def snapshot(self, request: AccessRequest) -> ContextSnapshot:
        return snapshot_context(self.repo, self.network, request, self.policies, self.catalog,
                                self.roles, self.blacklist, self.config)

    def _decide(self, request: AccessRequest):
        snap = self.snapshot(request)
        t0 = _time.perf_counter()
        decision = decide(request, snap, self.policies, self.tensor)
        latency = _time.perf_counter() - t0
        self.latencies.append(latency)
        for user, rule_id in decision.blacklist:
            ids = self.blacklist.setdefault(user, [])
            if rule_id not in ids:
                ids.append(rule_id)
        return snap, decision, latency

    def _path_of(self, request: AccessRequest) -> tuple[str, ...]:
        if self.network.table.get(self.config.provider_ip) is None:
            return ()
        flow = FlowDescriptor(f"{request.request_id}/path", request.device_ip, self.config.provider_ip, request.time)
        try:
            return tuple(self.network.expected_path(flow))
        except Unreachable:
            return ()

    def _send_reply_check(self, request: AccessRequest) -> str:
        if self.network.table.get(self.config.provider_ip) is None:
            return "unreachable"
        flow = FlowDescriptor(f"{request.request_id}/check", request.device_ip, self.config.provider_ip, request.time)
        try:
            trajectory = self.network.route_flow(flow)
        except Unreachable:
            return "unreachable"
        inspect_flow(self.network, self.repo, flow, trajectory, self.config.tolerance_ms)
        return "delivered" if trajectory.delivered else "dropped"

    def request(self, request: AccessRequest) -> AccessDecision:
        if request.role not in self.policies.vocab.roles:
            raise UnknownVocabularyReference(f"role {request.role!r} is not declared")
        self._now = max(self._now, request.time)
        self.register(request.user_id, request.role)
        flow = self._send_reply_check(request)
        snap, decision, latency = self._decide(request)
        session = None
        if decision.granted:
            session = open_session(decision, request, f"S{next(self._ids)}", snap.path)
            self.sessions.add(session)
        applied = enforce(decision, session, self.network, self.tensor, self.host_enforcement).applied
        if session is not None and applied:
            session.path = self._path_of(request)
        log.info("decision", request_id=request.request_id, outcome=decision.outcome,
                 reason=decision.reason.value if decision.reason else None, rules=list(decision.triggering_rules))
        self._record("decision", request, decision, session, latency, flow=flow)
        return decision

    def _touches(self, session: Session, update) -> bool:
        if isinstance(update, DataPlaneReport):
            return update.fd_id in session.path
        if update.user_id == session.request.user_id:
            return True
        mine = self.network.table.get(session.request.device_ip)
        theirs = self.network.table.get(update.device_ip)
        return mine is not None and theirs is not None and mine.zone == theirs.zone

    def _on_update(self, update) -> None:
        self._now = max(self._now, update.time)
        for session in self.sessions.values():
            if session.live and session.session_id not in self._in_flight and self._touches(session, update):
                self.reevaluate(session, update)

    def reevaluate(self, session: Session, update=None) -> AccessDecision:
        self._in_flight.add(session.session_id)
        try:
            request = replace(session.request, time=self._now)
            snap, decision, latency = self._decide(request)
            status, changed = fold_decision(session, decision)
            # network actions apply even when the session itself is unchanged
            fresh = replace(decision, network_actions=tuple(
                r for r in decision.network_actions if r not in self.network.rules))
            applied = ()
            if changed:
                applied = enforce(fresh, session, self.network, self.tensor, self.host_enforcement).applied
                log.info("session_changed", session_id=session.session_id, status=status.value,
                         rules=list(decision.triggering_rules))
            elif fresh.network_actions:
                applied = enforce(fresh, None, self.network, host=False).applied
                log.info("session_rerouted", session_id=session.session_id, actions=[a.to_dict() for a in applied])
            if applied:
                session.path = self._path_of(request)
            elif changed:
                session.path = snap.path
            self.sessions.settle(session)
            self._record("reevaluation", request, decision, session, latency, applied=applied,
                         blacklisted=decision.blacklist if changed else ())
            return decision
        finally:
            self._in_flight.discard(session.session_id)

    def _record(self, kind, request, decision, session, latency, flow=None, applied=None, blacklisted=None):
        if kind == "decision":
            functions = decision.functions
            applied = decision.network_actions
            blacklisted = decision.blacklist
        else:
            functions = session.view()
        self.trace.append(trace_record(len(self.trace) + 1, kind, request, decision, session, functions,
                                       applied, blacklisted, latency, flow))


def trace_record(seq, kind, request, decision, session=None, functions=None, actions=(),
                 blacklisted=(), latency=0.0, flow=None) -> dict:
    """One decision-trace line; every agent writes the same shape."""
    return {
        "seq": seq,
        "time": request.time,
        "kind": kind,
        "request_id": request.request_id,
        "session_id": session.session_id if session else None,
        "user_id": request.user_id,
        "object_id": request.object_id,
        "outcome": decision.outcome,
        "reason": decision.reason.value if decision.reason else None,
        "status": session.status.value if session else None,
        "triggering_rules": list(decision.triggering_rules),
        "actions": [a.to_dict() for a in actions],
        "blacklisted": sorted({u for u, _ in blacklisted}),
        "functions": None if functions is None else {s: sorted(f) for s, f in functions.items()},
        "latency_ms": round(latency * 1000, 3),
        "flow": flow,
    }
