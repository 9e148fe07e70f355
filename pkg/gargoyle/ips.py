# gargoyle/ips.py
# Data-plane verifier: expected vs. actual trajectories -> reports naming the
# misbehaving forwarding device and what it did.

from dataclasses import dataclass

import structlog

from gargoyle.config import NOMINAL_HOP_MS, TOLERANCE_MS
from gargoyle.netsim import FaultAction, FlowDescriptor, Network, Trajectory

log = structlog.get_logger(__name__)


@dataclass(frozen=True)
class DataPlaneReport:
    fd_id: str
    action: FaultAction
    flow_id: str
    expected: tuple[str, ...]
    actual: tuple[tuple[str, int], ...]
    time: int

    @property
    def evidence(self):
        return self.flow_id, self.expected, self.actual

    def to_dict(self) -> dict:
        return {"fd_id": self.fd_id, "action": self.action.value, "flow_id": self.flow_id,
                "expected": list(self.expected), "actual": [list(h) for h in self.actual],
                "time": self.time}


def expected_trajectory(network: Network, flow: FlowDescriptor) -> list[str]:
    return network.expected_path(flow)


def _divergence(expected, path):
    for i, fd in enumerate(path):
        if i >= len(expected) or fd != expected[i]:
            return i
    return None


def verify(expected, actual: Trajectory, tolerance_ms: int = TOLERANCE_MS,
           nominal_hop_ms: int = NOMINAL_HOP_MS) -> list[DataPlaneReport]:
    if not expected:
        raise ValueError("expected path must not be empty")
    expected = tuple(expected)
    hops = actual.hops
    path = [fd for fd, _ in hops]
    limit = nominal_hop_ms + tolerance_ms
    reports = []

    def report(i, action):
        reports.append(DataPlaneReport(path[i], action, actual.flow_id, expected, hops, hops[i][1]))

    split = _divergence(expected, path)
    matched = len(path) if split is None else split
    # gap after hop k is charged to the device at hop k
    for k in range(matched - 1):
        if hops[k + 1][1] - hops[k][1] > limit:
            report(k, FaultAction.DELAY)
    if split is None:
        if actual.delivered:
            if actual.delivered_at is not None and actual.delivered_at - hops[-1][1] > limit:
                report(len(hops) - 1, FaultAction.DELAY)
        elif path:
            report(len(path) - 1, FaultAction.DROP)
    elif split > 0:
        report(split - 1, FaultAction.MISROUTE)
    return reports


def inspect_flow(network: Network, repo, flow: FlowDescriptor, trajectory: Trajectory,
                 tolerance_ms: int = TOLERANCE_MS) -> list[DataPlaneReport]:
    """Verify one routed flow and append whatever it finds to the context repository."""
    expected = expected_trajectory(network, flow)
    reports = verify(expected, trajectory, tolerance_ms, network.nominal_hop_ms)
    for r in reports:
        log.info("data_plane_report", fd_id=r.fd_id, action=r.action.value, flow_id=r.flow_id)
        repo.append_report(r)
    return reports
