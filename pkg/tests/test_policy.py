# tests/test_policy.py
import copy
import json
import random

import pytest

from conftest import snapshot
from gargoyle.context import NCA, NCAKind
from gargoyle.engine import AccessRequest
from gargoyle.config import FIXTURES
from gargoyle.errors import DuplicatePriority, PolicyError, SchemaError, UnknownVocabularyReference
from gargoyle.fbac import SegmentSelector
from gargoyle.ips import DataPlaneReport
from gargoyle.netsim import FaultAction, Medium, RuleAction
from gargoyle.policy import (
    MAX_DEPTH, Blacklist, DenyReason, NetworkAction, RestrictFunctions, RuleKind, Target, applicable_rules,
    evaluate_condition, explain_condition, load_policies, matching_rules, parse_condition, parse_policies,
    serialize_policies,
)

DENY = {"type": "deny", "reason": "role-mismatch"}
PEERS = [f"10.0.7.{i}" for i in range(1, 11)]


def pack(*rules, **vocab):
    v = {"roles": ["R1", "R2", "R3"], "zones": ["Z1", "Z2"], "zone_groups": {"Front": ["Z1"]},
         "labels": ["public", "sensitive"]}
    v.update(vocab)
    return {"vocab": v, "defaults": {"supervisor_roles": ["R1"]}, "rules": list(rules)}


KIND_FOR = {"deny": "org", "restrict": "fbac-context"}


def rule(rid, priority, condition=None, effect=None, **extra):
    effect = effect or DENY
    kind = extra.pop("kind", KIND_FOR.get(effect["type"], "generic"))
    return {"id": rid, "kind": kind, "priority": priority, "condition": condition or {"op": "true"},
            "effect": effect, **extra}


@pytest.fixture
def vocab():
    return parse_policies(pack()).vocab


def cond(raw, vocab):
    return parse_condition(raw, vocab)


def nca(kind, detail, user="U1", t=9_000):
    return NCA(kind, user, "10.0.2.1", detail, t, "test")


def interaction(peer, user="U1"):
    return nca(NCAKind.INTERACTION, {"peer": peer}, user)


HACKER = nca(NCAKind.DEVICE_CAPABILITY, {"tool": "kali", "hacking": True}, user="U2")
SCAN = nca(NCAKind.SUSPICIOUS_ACTIVITY, {"activity": "port-scan", "count": 20})


# ---- parsing ----

def test_shipped_pack(policies):
    assert len(policies.rules) == 17
    prios = [r.priority for r in policies.ordered]
    assert prios == sorted(prios, reverse=True)
    assert isinstance(policies.rule("GP1").effect, Blacklist)
    assert policies.rule("GP2").effect.fallback == "quarantine"
    assert policies.rule("FB-wireless").effect == RestrictFunctions(frozenset({"Copy"}),
                                                                    SegmentSelector.label("sensitive"))
    gate = policies.rule("PF1-gate").condition
    assert gate.children[0].children[1].zone_set == {"Z1", "Z2", "Z3", "Z5"}
    assert policies.rule("GP1-zone").effect.zone_set == {"Z6"}
    assert policies.vocab.role_index("R12") == 12
    assert policies.vocab.role_index("R99") == 0
    assert policies.defaults.supervisor_roles == ("R1",)


def test_serialize_round_trip(policies):
    again = parse_policies(serialize_policies(policies))
    assert again.to_dict() == policies.to_dict()
    assert [r.id for r in again.rules] == [r.id for r in policies.rules]


def test_round_trip_of_a_small_pack():
    doc = pack(rule("a", 3, {"op": "zone_in", "zones": ["Front"]},
                    {"type": "network", "action": "restrict_to_zone", "zones": ["Front"]}, target={"labels": ["public"]}),
               rule("b", 2, {"op": "path_report", "actions": ["drop"]},
                    {"type": "restrict", "functions": ["Copy"], "segments": {"one": "s1"}}, target={"objects": ["F4"]}))
    parsed = parse_policies(json.dumps(doc))
    assert parse_policies(parsed.to_dict()).to_dict() == parsed.to_dict()
    assert parsed.rule("b").condition.atom.actions == [FaultAction.DROP]


def test_duplicate_priority():
    with pytest.raises(DuplicatePriority):
        parse_policies(pack(rule("a", 1), rule("b", 1)))


@pytest.mark.parametrize("doc", [
    pack(rule("a", 1, {"op": "role_in", "roles": ["R9"]})),
    pack(rule("a", 1, {"op": "role_index", "min": 1, "max": 4})),
    pack(rule("a", 1, {"op": "role_index", "min": 3, "max": 2})),
    pack(rule("a", 1, {"op": "zone_in", "zones": ["Z9"]})),
    pack(rule("a", 1, {"op": "label_in", "labels": ["secret"]})),
    pack(rule("a", 1, effect={"type": "restrict", "functions": ["Delete"]})),
    pack(rule("a", 1, effect={"type": "restrict", "functions": ["Copy"], "segments": {"label": "secret"}})),
    pack(rule("a", 1, target={"labels": ["secret"]})),
    pack(zone_groups={"Front": ["Z9"]}),
    {"vocab": {"roles": ["R1"], "zones": ["Z1"]}, "defaults": {"supervisor_roles": ["R7"]}},
])
def test_unknown_vocabulary(doc):
    with pytest.raises(UnknownVocabularyReference):
        parse_policies(doc)


@pytest.mark.parametrize("doc", [
    "{not json",
    pack(rule("a", 1), rule("a", 2)),
    pack(rule("a", 1, {"op": "xor", "args": [{"op": "true"}]})),
    pack(rule("a", 1, {"op": "and", "args": []})),
    pack(rule("a", 1, {"op": "not"})),
    pack(rule("a", 1, {"op": "role_in", "roles": ["R1"], "extra": 1})),
    pack(rule("a", 1, {"kind": "Location"})),
    pack(rule("a", 1, effect={"type": "network", "action": "restrict_to_zone"})),
    pack(rule("a", 1, effect={"type": "network", "action": "quarantine", "zones": ["Z1"]})),
    pack(rule("a", 1, effect={"type": "network", "action": "quarantine", "fallback": "deny"})),
    pack(rule("a", 1, effect={"type": "restrict", "functions": ["Copy"], "segments": {"all": True, "one": "s1"}})),
    pack(rule("a", 1, effect={"type": "explode"})),
    pack(rule("a", 1, target={"any": True, "objects": ["F1"]})),
    pack(rule("a", 1, target={})),
    pack(zone_groups={"Z1": ["Z2"]}),
    {"vocab": {"roles": [], "zones": ["Z1"]}},
    {**pack(), "owner": "me"},
])
def test_schema_errors(doc):
    with pytest.raises(SchemaError):
        parse_policies(doc)


def test_depth_limit(vocab):
    raw = {"op": "true"}
    for _ in range(MAX_DEPTH):
        raw = {"op": "not", "arg": raw}
    assert cond(raw, vocab).depth() == MAX_DEPTH + 1
    with pytest.raises(SchemaError):
        cond({"op": "not", "arg": raw}, vocab)


def test_load_policies_missing_file(tmp_path):
    with pytest.raises(SchemaError):
        load_policies(tmp_path / "nope.json")


def test_target_matching():
    assert Target().matches("F1", frozenset())
    assert Target(objects=frozenset({"F1"})).matches("F1", frozenset())
    assert not Target(objects=frozenset({"F1"})).matches("F2", frozenset())
    assert not Target(labels=frozenset({"hr"})).matches("F1", frozenset({"public"}))
    assert not Target(frozenset({"F1"}), frozenset({"hr"})).matches("F1", frozenset({"public"}))


# ---- evaluation ----

@pytest.mark.parametrize("raw, over, want", [
    ({"op": "role_in", "roles": ["R2"]}, {}, True),
    ({"op": "role_index", "min": 1, "max": 1}, {}, False),
    ({"op": "zone_in", "zones": ["Front"]}, {}, True),
    ({"op": "zone_in", "zones": ["Front"]}, {"zone": "Z2"}, False),
    ({"op": "medium", "medium": "wireless"}, {}, False),
    ({"op": "medium", "medium": "wireless"}, {"medium": Medium.WIRELESS}, True),
    ({"op": "label_in", "labels": ["sensitive"]}, {}, True),
    ({"op": "supervisor_present"}, {"supervisor_present": True}, True),
    ({"op": "blacklisted"}, {}, False),
    ({"op": "security_level", "levels": ["low", "medium"]}, {"security_level": "medium"}, True),
    ({"op": "nca", "kind": "SuspiciousActivity", "match": {"activity": ["port-scan", "malware"]}},
     {"recent": (SCAN,)}, True),
    ({"op": "nca", "kind": "SuspiciousActivity", "match": {"activity": "malware"}}, {"recent": (SCAN,)}, False),
    ({"op": "nca", "kind": "SuspiciousActivity"}, {"historical": (SCAN,)}, False),
    ({"op": "nca", "kind": "SuspiciousActivity", "window": "historical"}, {"historical": (SCAN,)}, True),
    ({"op": "nca", "kind": "SuspiciousActivity", "window": "any"}, {"historical": (SCAN,)}, True),
    ({"op": "nca", "kind": "DeviceCapability", "subject": "proximity"}, {"proximity": {"U2": (HACKER,)}}, True),
    ({"op": "nca", "kind": "DeviceCapability", "subject": "proximity", "window": "historical"},
     {"proximity": {"U2": (HACKER,)}}, False),
    ({"op": "nca", "kind": "DeviceCapability"}, {"proximity": {"U2": (HACKER,)}}, False),
])
def test_atoms(vocab, raw, over, want):
    assert evaluate_condition(cond(raw, vocab), snapshot(**over)) is want


def test_path_report_atom(vocab):
    report = DataPlaneReport("C1", FaultAction.DELAY, "f", ("R2", "C1"), (("R2", 1), ("C1", 2)), 2)
    snap = snapshot(path_reports=(report,))
    assert evaluate_condition(cond({"op": "path_report"}, vocab), snap)
    assert not evaluate_condition(cond({"op": "path_report", "actions": ["drop"]}, vocab), snap)
    ok, ev = explain_condition(cond({"op": "path_report"}, vocab), snap)
    assert ev.reports == (report,)


def test_evidence_under_not_is_dropped(vocab):
    c = cond({"op": "and", "args": [
        {"op": "nca", "kind": "Interaction", "match": {"peer": PEERS[0]}},
        {"op": "not", "arg": {"op": "nca", "kind": "Interaction", "match": {"peer": PEERS[1]}}},
    ]}, vocab)
    snap = snapshot(recent=(interaction(PEERS[0]),))
    ok, ev = explain_condition(c, snap)
    assert ok and [n.detail["peer"] for n, _ in ev.ncas] == [PEERS[0]]
    assert ev.windows == {"recent"} and ev.users == {"U1"}


def test_or_collects_every_true_branch(vocab):
    c = cond({"op": "or", "args": [
        {"op": "nca", "kind": "Interaction", "match": {"peer": p}} for p in PEERS[:3]
    ]}, vocab)
    ok, ev = explain_condition(c, snapshot(recent=(interaction(PEERS[0]), interaction(PEERS[2]))))
    assert ok and sorted(n.detail["peer"] for n, _ in ev.ncas) == [PEERS[0], PEERS[2]]


def test_matching_rules_respects_target_and_priority():
    doc = parse_policies(pack(rule("low", 1), rule("high", 5), rule("hr-only", 3, target={"objects": ["F3"]})))
    hits = matching_rules(doc, "F4", snapshot())
    assert [r.id for r, _ in hits] == ["high", "low"]


@pytest.mark.parametrize("seed", range(20))
def test_applicable_rules_ignore_document_order(seed):
    rules = [rule(f"r{p}", p) for p in range(1, 8)]
    random.Random(seed).shuffle(rules)
    doc = parse_policies(pack(*rules))
    req = AccessRequest("q1", "U1", "10.0.1.5", "R2", "F4", 10_000)
    hits = applicable_rules(doc, req, snapshot())
    assert [r.id for r, _ in hits] == [f"r{p}" for p in range(7, 0, -1)]
    assert all(effect is r.effect for r, effect in hits)


def test_effects_parse():
    doc = parse_policies(pack(
        rule("q", 3, effect={"type": "network", "action": "quarantine", "scope": "requester-and-trigger"}),
        rule("bl", 2, effect={"type": "blacklist"}),
        rule("d", 1, effect={"type": "deny", "reason": "historic-suspicious"}),
    ))
    assert doc.rule("q").effect == NetworkAction(RuleAction.QUARANTINE, (), "requester-and-trigger")
    assert doc.rule("bl").effect == Blacklist("requester")
    assert doc.rule("d").effect.reason is DenyReason.HISTORIC_SUSPICIOUS
    assert doc.rule("d").kind is RuleKind.ORG


@pytest.mark.parametrize("kind, effect", [
    ("org", {"type": "restrict", "functions": ["Copy"]}),
    ("org", {"type": "blacklist"}),
    ("fbac-context", DENY),
    ("fbac-context", {"type": "network", "action": "quarantine"}),
])
def test_rule_kind_limits_effects(kind, effect):
    with pytest.raises(SchemaError, match=f"{kind} rule"):
        parse_policies(pack(rule("a", 1, effect=effect, kind=kind)))


def test_generic_rules_carry_any_effect():
    doc = parse_policies(pack(
        rule("r", 2, effect={"type": "restrict", "functions": ["Copy"]}, kind="generic"),
        rule("d", 1, kind="generic"),
    ))
    assert {r.kind for r in doc.rules} == {RuleKind.GENERIC}


JUNK = [None, 0, -1, 3.5, True, "", "R99", "zzz", [], {}, [1], {"op": "nope"}, {"op": "and", "args": []},
        {"type": "deny"}]


def _paths(node, prefix=()):
    if prefix:
        yield prefix
    if isinstance(node, dict):
        items = node.items()
    elif isinstance(node, list):
        items = enumerate(node)
    else:
        return
    for k, v in items:
        yield from _paths(v, prefix + (k,))


def _at(doc, path):
    for k in path:
        doc = doc[k]
    return doc


def _mutate(doc, rng):
    paths = list(_paths(doc))
    path = rng.choice(paths)
    parent, key = _at(doc, path[:-1]), path[-1]
    op = rng.randrange(3)
    if op == 0:
        del parent[key]
    elif op == 1:
        parent[key] = copy.deepcopy(rng.choice(JUNK))
    else:
        parent[key] = copy.deepcopy(_at(doc, rng.choice(paths)))


@pytest.fixture(scope="module")
def shipped_doc():
    return json.loads((FIXTURES / "policies.json").read_text(encoding="utf-8"))


@pytest.mark.parametrize("seed", range(1000))
def test_mutated_pack_parses_or_fails_cleanly(seed, shipped_doc):
    rng = random.Random(seed)
    doc = copy.deepcopy(shipped_doc)
    for _ in range(rng.randint(1, 3)):
        _mutate(doc, rng)
    try:
        parsed = parse_policies(doc)
    except (PolicyError, SchemaError):
        return
    assert len(json.loads(serialize_policies(parsed))["rules"]) == len(parsed.rules)


# ---- truth table ----

def _random_tree(rng, depth):
    if depth == 0 or rng.random() < 0.3:
        i = rng.randrange(len(PEERS))
        return {"op": "nca", "kind": "Interaction", "match": {"peer": PEERS[i]}}, ("atom", i)
    op = rng.choice(["and", "or", "not"])
    if op == "not":
        raw, tree = _random_tree(rng, depth - 1)
        return {"op": "not", "arg": raw}, ("not", tree)
    kids = [_random_tree(rng, depth - 1) for _ in range(rng.randint(1, 3))]
    return {"op": op, "args": [k[0] for k in kids]}, (op, [k[1] for k in kids])


def _truth(tree, present):
    op, arg = tree
    if op == "atom":
        return arg in present
    if op == "not":
        return not _truth(arg, present)
    results = [_truth(t, present) for t in arg]
    return all(results) if op == "and" else any(results)


def _positive_atoms(tree, negated=False):
    op, arg = tree
    if op == "atom":
        return set() if negated else {arg}
    if op == "not":
        return _positive_atoms(arg, True)
    return set().union(*(_positive_atoms(t, negated) for t in arg))


def _has_not(tree):
    op, arg = tree
    return op == "not" or (op in ("and", "or") and any(_has_not(t) for t in arg))


@pytest.mark.parametrize("seed", range(200))
def test_condition_matches_truth_table(seed, vocab):
    rng = random.Random(seed)
    raw, tree = _random_tree(rng, rng.randint(0, 4))
    present = {i for i in range(len(PEERS)) if rng.random() < 0.5}
    snap = snapshot(recent=tuple(interaction(PEERS[i]) for i in sorted(present)))

    ok, ev = explain_condition(cond(raw, vocab), snap)
    assert ok is _truth(tree, present)
    allowed_peers = {PEERS[i] for i in _positive_atoms(tree) & present}
    assert {n.detail["peer"] for n, _ in ev.ncas} <= allowed_peers
    if not ok:
        assert not ev.ncas
    elif not _has_not(tree):
        assert ev.ncas
