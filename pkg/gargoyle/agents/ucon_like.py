# gargoyle/agents/ucon_like.py
# Usage control over role, location, time of day and the integrity the device reports about itself.
# Pre-conditions are checked on request. Ongoing conditions are re-checked whenever the
# requester's device shows up somewhere new or reports a change of state.

import time
from dataclasses import replace

import structlog

from gargoyle.agents.rbac import RBACAgent
from gargoyle.config import CLOCK_ORIGIN_HOUR, HACKING_TOOLS
from gargoyle.context import NCAKind, detect_signatures
from gargoyle.engine import AccessDecision, SessionStatus, trace_record
from gargoyle.policy import DenyReason

log = structlog.get_logger(__name__)

MS_PER_HOUR = 3_600_000


class UCONLikeAgent(RBACAgent):
    NAME = "ucon"
    DESCRIPTION = "UCON-style pre and ongoing conditions on role, location, working hours and device integrity."
    USES_NETWORK_CONTEXT = False

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.hacking_tools = frozenset(HACKING_TOOLS)
        # device ip -> the tool or signature it reported
        self.compromised: dict[str, str] = {}
        self.network.subscribe(self._on_packet_in)

    def observe(self, event) -> None:
        if event.src_ip in self.compromised:
            return
        for finding in detect_signatures(event, self.hacking_tools):
            if finding.kind is NCAKind.DEVICE_CAPABILITY and not finding.detail["hacking"]:
                continue
            self.compromised[event.src_ip] = finding.detail.get("tool") or finding.detail["signature"]
            log.debug("device_compromised", device_ip=event.src_ip, marker=self.compromised[event.src_ip])
            self._recheck(event.src_ip, event.time)
            return

    def _zone_ok(self, request) -> bool:
        zones = self._assignment(request.object_id).get("zones")
        if zones is None:
            return True
        entry = self.network.table.get(request.device_ip)
        return entry is not None and entry.zone in self.policies.vocab.resolve_zones(zones)

    def _hours_ok(self, t_ms: int) -> bool:
        start, end = self.baselines["working_hours"]
        hour = CLOCK_ORIGIN_HOUR + t_ms / MS_PER_HOUR
        return start <= hour < end

    def _device_ok(self, request) -> bool:
        return request.device_ip not in self.compromised

    def _permits(self, request) -> bool:
        return (self._device_ok(request) and super()._permits(request)
                and self._zone_ok(request) and self._hours_ok(request.time))

    def _refusal(self, request) -> DenyReason:
        if not self._device_ok(request):
            return DenyReason.CURRENT_SUSPICIOUS
        return DenyReason.ROLE_MISMATCH

    def _on_packet_in(self, event) -> None:
        if event.flow_id is None:
            self._recheck(event.device_ip, event.time)

    def _recheck(self, device_ip: str, t: int) -> None:
        for session in self.sessions.values():
            if not session.live or session.request.device_ip != device_ip:
                continue
            request = replace(session.request, time=t)
            if self._device_ok(request) and self._zone_ok(request) and self._hours_ok(t):
                continue
            t0 = time.perf_counter()
            decision = AccessDecision("deny", self._refusal(request))
            session.status = SessionStatus.REVOKED
            latency = time.perf_counter() - t0
            self.sessions.close(session)
            self.trace.append(trace_record(len(self.trace) + 1, "reevaluation", request, decision, session,
                                           session.view(), latency=latency))
