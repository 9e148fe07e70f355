# tests/conftest.py
import json

import pytest

from gargoyle.agents._resources import get_baselines, get_catalog, get_map, get_policies
from gargoyle.config import FIXTURES
from gargoyle.context import ContextRepository
from gargoyle.engine import ContextSnapshot
from gargoyle.netsim import Attachment, Medium, Network, load_topology


@pytest.fixture
def policies():
    return get_policies()


@pytest.fixture
def catalog():
    return get_catalog()


@pytest.fixture
def baselines():
    return get_baselines()


@pytest.fixture
def org1():
    return get_map(1)


@pytest.fixture
def network(org1):
    return Network(org1)


@pytest.fixture
def repo():
    return ContextRepository()


def attach(net, ip, user, fd, port=2, t=0):
    medium = Medium.WIRELESS if fd.startswith("R") else Medium.WIRED
    return net.attach_device(Attachment(ip, user, fd, port, medium), t)


def chain_topology(*ids, zones=None):
    """Wired core devices linked in a line."""
    doc = {
        "devices": [{"id": i, "kind": "core", "medium": "wired", "ports": 8} for i in ids],
        "links": [[a, b] for a, b in zip(ids, ids[1:])],
        "zones": zones or {},
    }
    return load_topology(doc)


def snapshot(**over):
    base = dict(time=10_000, user_id="U1", role="R2", role_index=2, zone="Z1", medium=Medium.WIRED,
                object_id="F4", object_labels=frozenset({"public", "sensitive"}))
    base.update(over)
    return ContextSnapshot(**base)


def read_golden(name):
    path = FIXTURES / "golden" / name
    return [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]
