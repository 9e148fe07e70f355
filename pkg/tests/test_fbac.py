# tests/test_fbac.py
import random

import pytest

from gargoyle.errors import SchemaError, UnknownObject
from gargoyle.fbac import (
    FUNCTIONS, UNIVERSE, AccessControlTensor, SegmentSelector, allowed, function_set, load_catalog, render_view,
    restrict,
)

SUBJECTS = ("U1", "U2")


def views(tensor, catalog):
    return {(s, o): render_view(tensor, s, o) for s in SUBJECTS for o in catalog.ids()}


def random_selector(rng, catalog, object_id):
    kind = rng.choice(["all", "label", "one"])
    if kind == "all":
        return SegmentSelector.all()
    if kind == "label":
        return SegmentSelector.label(rng.choice(sorted(catalog.labels)))
    return SegmentSelector.one(rng.choice(catalog.get(object_id).segment_ids))


def random_step(rng, catalog):
    object_id = rng.choice(catalog.ids())
    fs = frozenset(rng.sample(FUNCTIONS, rng.randint(0, 3)))
    return rng.choice(SUBJECTS), object_id, random_selector(rng, catalog, object_id), fs


def test_shipped_catalog(catalog):
    assert catalog.ids() == ["F1", "F2", "F3", "F4"]
    assert catalog.functions == UNIVERSE
    assert catalog.get("F1").labels == {"war-related", "top-secret", "sensitive", "public"}
    assert "F9" not in catalog
    with pytest.raises(UnknownObject):
        catalog.get("F9")


def test_default_is_the_whole_universe(catalog):
    t = AccessControlTensor(catalog)
    assert render_view(t, "anyone", "F4") == {"s1": UNIVERSE, "s2": UNIVERSE}
    assert len(t) == 0


def test_restrict_by_label(catalog):
    t = restrict(AccessControlTensor(catalog), "U1", "F1", SegmentSelector.label("top-secret"), {"Email", "Print"})
    view = t.render_view("U1", "F1")
    assert view["s1"] == view["s4"] == UNIVERSE
    assert view["s2"] == view["s3"] == UNIVERSE - {"Email", "Print"}
    # other subjects keep their cells
    assert t.render_view("U2", "F1")["s2"] == UNIVERSE


def test_restrict_returns_new_version(catalog):
    base = AccessControlTensor(catalog)
    t = base.restrict("U1", "F4", SegmentSelector.one("s2"), {"Copy"})
    assert base.allowed("U1", "F4", "s2") == UNIVERSE
    assert allowed(t, "U1", catalog.get("F4"), "s2") == UNIVERSE - {"Copy"}
    assert t.version == base.version + 1
    # nothing left to remove: same object back
    assert t.restrict("U1", "F4", SegmentSelector.one("s2"), {"Copy"}) is t
    assert t.restrict("U1", "F4", SegmentSelector.all(), set()) is t


def test_revoke_empties_every_segment(catalog):
    t = AccessControlTensor(catalog).revoke("U1", "F2")
    assert set(t.render_view("U1", "F2").values()) == {frozenset()}


def test_allow_list_seed(catalog):
    t = AccessControlTensor.allowing(catalog, [("U1", "F4", SegmentSelector.label("public"), {"View"})])
    assert t.render_view("U1", "F4") == {"s1": {"View"}, "s2": UNIVERSE}


def test_unknown_functions_rejected(catalog):
    with pytest.raises(ValueError):
        function_set({"Delete"})
    with pytest.raises(ValueError):
        AccessControlTensor(catalog).restrict("U1", "F4", SegmentSelector.all(), {"Delete"})


def test_selectors():
    with pytest.raises(ValueError):
        SegmentSelector("some", "x")
    with pytest.raises(ValueError):
        SegmentSelector("one")
    with pytest.raises(ValueError):
        SegmentSelector("all", "x")
    assert SegmentSelector.from_dict(None) == SegmentSelector.all()
    assert SegmentSelector.from_dict({"label": "hr"}) == SegmentSelector.label("hr")
    assert SegmentSelector.label("hr").to_dict() == {"label": "hr"}
    assert SegmentSelector.all().to_dict() == {"all": True}


def test_selector_one_needs_a_real_segment(catalog):
    with pytest.raises(UnknownObject):
        SegmentSelector.one("s9").select(catalog.get("F4"))


def test_label_selector_may_match_nothing(catalog):
    t = AccessControlTensor(catalog)
    assert t.restrict("U1", "F4", SegmentSelector.label("hr"), {"View"}) is t


@pytest.mark.parametrize("doc", [
    "{oops",
    {"labels": ["a"], "objects": [{"id": "X", "segments": []}]},
    {"labels": ["a"], "objects": [{"id": "X", "segments": [{"id": "s1", "labels": ["b"]}]}]},
    {"labels": ["a"], "objects": [{"id": "X", "segments": [{"id": "s1"}, {"id": "s1"}]}]},
    {"labels": ["a"], "objects": [{"id": "X", "segments": [{"id": "s1"}]},
                                  {"id": "X", "segments": [{"id": "s1"}]}]},
    {"labels": ["a"], "objects": [], "owner": "me"},
])
def test_bad_catalogs(doc):
    with pytest.raises(SchemaError):
        load_catalog(doc)


@pytest.mark.parametrize("seed", range(200))
def test_restriction_algebra(seed, catalog):
    rng = random.Random(seed)
    t = AccessControlTensor(catalog)
    for _ in range(rng.randint(0, 5)):
        t = t.restrict(*random_step(rng, catalog))

    subject, object_id, selector, _ = random_step(rng, catalog)
    a = frozenset(rng.sample(FUNCTIONS, rng.randint(0, 4)))
    b = frozenset(rng.sample(FUNCTIONS, rng.randint(0, 4)))

    ab = t.restrict(subject, object_id, selector, a).restrict(subject, object_id, selector, b)
    ba = t.restrict(subject, object_id, selector, b).restrict(subject, object_id, selector, a)
    both = t.restrict(subject, object_id, selector, a | b)
    once = t.restrict(subject, object_id, selector, a)
    twice = once.restrict(subject, object_id, selector, a)

    assert views(ab, catalog) == views(ba, catalog) == views(both, catalog)
    assert views(once, catalog) == views(twice, catalog)
    before, after = views(t, catalog), views(ab, catalog)
    for key, segs in after.items():
        for seg, fs in segs.items():
            assert fs <= before[key][seg]
