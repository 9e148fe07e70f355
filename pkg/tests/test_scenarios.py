# tests/test_scenarios.py
import copy
import json

import pytest
from pydantic import ValidationError

from gargoyle.config import FIXTURES, GeneratorConfig, load_generator_config
from gargoyle.errors import ConfigError, SchemaError
from gargoyle.scenarios import (
    FaultSpec, ScenarioSpec, _quotas, dump_scenarios, generate_scenarios, load_scenarios,
)

SAMPLE_1 = FIXTURES / "scenarios" / "sample_scenario_1.json"
SAMPLE_2 = FIXTURES / "scenarios" / "sample_scenario_2.json"
SHARES = GeneratorConfig().category_shares


@pytest.fixture
def sample_doc():
    return json.loads(SAMPLE_1.read_text(encoding="utf-8"))


def dumps(specs):
    return json.dumps([s.model_dump(mode="json") for s in specs], sort_keys=True)


# ---- quotas and generation ----

def test_quotas_for_a_thousand():
    assert _quotas(1000, SHARES) == {1: 200, 2: 300, 3: 100, 4: 400}


@pytest.mark.parametrize("n", [1, 7, 13, 99])
def test_quotas_always_sum_to_n(n):
    assert sum(_quotas(n, SHARES).values()) == n


def test_empty_run():
    assert generate_scenarios(GeneratorConfig(scenarios=0)) == []


@pytest.fixture(scope="module")
def hundred():
    return generate_scenarios(GeneratorConfig(scenarios=100), seed=7)


def test_category_counts(hundred):
    counts = {c: sum(1 for s in hundred if s.category == c) for c in (1, 2, 3, 4)}
    assert counts == {1: 20, 2: 30, 3: 10, 4: 40}
    assert [s.scenario_id for s in hundred] == [f"S{i:04d}" for i in range(1, 101)]


def test_same_seed_same_scenarios(hundred):
    again = generate_scenarios(GeneratorConfig(scenarios=100), seed=7)
    assert dumps(again) == dumps(hundred)
    assert dumps(generate_scenarios(GeneratorConfig(scenarios=100), seed=8)) != dumps(hundred)


def test_every_scenario_has_one_goal_request(hundred):
    for s in hundred:
        assert s.expected == "protected"
        assert len(s.requests) == 1 and s.requests[0].user_id == "U0"
        assert s.goal.request_id == s.requests[0].request_id
        assert s.goal.function in ("Email", "Print", "Copy")
        assert s.subtypes


def test_injections_follow_category(hundred):
    for s in hundred:
        kinds = {t.split(":")[0] for t in s.subtypes}
        if s.category == 1:
            assert kinds == {"requester"}
        elif s.category == 2:
            assert kinds == {"proximity"}
            at = {a.user_id: a.fd_id for a in s.attachments}
            assert at["U1"] == at["U0"]
        elif s.category == 3:
            assert kinds == {"on-path"} and len(s.faults) == 1
        else:
            assert len(kinds) >= 2


def test_user_counts_within_bounds(hundred):
    for s in hundred:
        # the provider is not an org user
        assert 3 <= s.user_count - 1 <= 90


def test_fixed_population():
    specs = generate_scenarios(GeneratorConfig(scenarios=10, users_min=5, users_max=5), seed=1)
    assert {s.user_count for s in specs} == {6}


def test_flows_are_time_ordered(hundred):
    for s in hundred:
        times = [f.time for f in s.flows]
        assert times == sorted(times)


# ---- scenario validation ----

@pytest.mark.parametrize("mutate", [
    lambda d: d.update(category=1),
    lambda d: d.update(category=3),
    lambda d: d.update(category=4),
    lambda d: d["requests"][0].update(user_id="U_Z"),
    lambda d: d.update(goal={"request_id": "nope", "function": "Email"}),
    lambda d: d["attachments"][0].update(time=95_000),
    lambda d: d.update(vlan=3),
    lambda d: d.update(org_map=9),
])
def test_invalid_scenarios(sample_doc, mutate):
    doc = copy.deepcopy(sample_doc)
    mutate(doc)
    with pytest.raises(ValidationError):
        ScenarioSpec.model_validate(doc)


def test_benign_scenarios_skip_the_injection_check(sample_doc):
    sample_doc.update(category=1, expected="benign")
    assert ScenarioSpec.model_validate(sample_doc).expected == "benign"


def test_fault_magnitude_only_for_delay():
    with pytest.raises(ValidationError):
        FaultSpec(time=0, fd_id="C1", action="delay")
    with pytest.raises(ValidationError):
        FaultSpec(time=0, fd_id="C1", action="drop", magnitude_ms=5)
    assert FaultSpec(time=0, fd_id="C1", action="delay", magnitude_ms=5).magnitude_ms == 5


# ---- files ----

def test_load_samples():
    one, = load_scenarios(SAMPLE_1)
    two, = load_scenarios(SAMPLE_2)
    assert (one.scenario_id, one.category, len(one.flows)) == ("sample-1", 2, 30)
    assert (two.scenario_id, two.category, len(two.faults)) == ("sample-2", 3, 1)


def test_dump_then_load(tmp_path, hundred):
    path = tmp_path / "scenarios.json"
    dump_scenarios(hundred[:5], path)
    assert dumps(load_scenarios(path)) == dumps(hundred[:5])


def test_load_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_scenarios(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("[{", encoding="utf-8")
    with pytest.raises(SchemaError):
        load_scenarios(bad)
    bad.write_text(json.dumps([{"scenario_id": "x"}]), encoding="utf-8")
    with pytest.raises(SchemaError):
        load_scenarios(bad)


# ---- generator config ----

def test_shipped_generator_config():
    config = load_generator_config(FIXTURES / "generator.json")
    assert config.scenarios == 1000 and config.category_shares == SHARES


@pytest.mark.parametrize("raw", [
    {"category_shares": {"1": 0.5, "2": 0.5}},
    {"category_shares": {"1": 0.5, "2": 0.5, "3": 0.5, "4": 0.5}},
    {"maps": [8]},
    {"users_min": 10, "users_max": 5},
    {"requester_mix": {"phishing": 1.0}},
    {"compound_mix": {}},
    {"scenarios": -1},
    {"colour": "red"},
])
def test_bad_generator_config(tmp_path, raw):
    path = tmp_path / "gen.json"
    path.write_text(json.dumps(raw), encoding="utf-8")
    with pytest.raises(ConfigError):
        load_generator_config(path)


def test_unreadable_generator_config(tmp_path):
    with pytest.raises(ConfigError):
        load_generator_config(tmp_path / "nope.json")
