# gargoyle/agents/rbac.py
import itertools
import time
from collections import deque

from gargoyle.agents._resources import get_baselines
from gargoyle.config import EngineConfig
from gargoyle.engine import AccessDecision, SessionStore, open_session, trace_record
from gargoyle.policy import DenyReason


class RBACAgent:
    NAME = "rbac"
    DESCRIPTION = "Role-based access control: every function or nothing, decided by the requester's role."
    USES_NETWORK_CONTEXT = False

    def __init__(self, network, repo, policies, catalog, baselines=None, config=None, **_):
        self.network = network
        self.repo = repo
        self.policies = policies
        self.catalog = catalog
        self.baselines = baselines or get_baselines()
        self.config = config or EngineConfig()
        self.roles: dict[str, str] = {}
        self.sessions = SessionStore(self.config.closed_sessions_kept)
        self.trace: list[dict] = []
        self.latencies: deque[float] = deque(maxlen=self.config.latency_samples)
        self._ids = itertools.count(1)

    def register(self, user_id: str, role: str) -> None:
        self.roles[user_id] = role

    def observe(self, event) -> None:
        """Device telemetry; a static role model has no use for it."""

    def _assignment(self, object_id: str) -> dict:
        return self.baselines["assignments"].get(object_id) or {}

    def _permits(self, request) -> bool:
        return request.role in (self._assignment(request.object_id).get("roles") or ())

    def _refusal(self, request) -> DenyReason:
        return DenyReason.ROLE_MISMATCH

    def _functions(self, request, obj) -> dict:
        return {seg: self.catalog.functions for seg in obj.segment_ids}

    def handle(self, request) -> AccessDecision:
        self.register(request.user_id, request.role)
        obj = self.catalog.get(request.object_id)
        t0 = time.perf_counter()
        if self._permits(request):
            decision = AccessDecision("grant", functions=self._functions(request, obj))
        else:
            decision = AccessDecision("deny", self._refusal(request))
        latency = time.perf_counter() - t0
        self.latencies.append(latency)

        session = None
        if decision.granted:
            session = open_session(decision, request, f"S{next(self._ids)}")
            self.sessions.add(session)
        self.trace.append(trace_record(len(self.trace) + 1, "decision", request, decision, session,
                                       decision.functions, latency=latency))
        return decision
