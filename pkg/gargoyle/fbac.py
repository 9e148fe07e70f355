# gargoyle/fbac.py
# Function-Based Access Control: segment-structured objects and the
# (subject, object, segment) -> allowed-functions tensor.

import json
from dataclasses import dataclass
from typing import Iterable

import structlog
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from gargoyle.errors import SchemaError, UnknownObject

log = structlog.get_logger(__name__)

FUNCTIONS = ("View", "Search", "Copy", "Paste", "Email", "Print")
UNIVERSE = frozenset(FUNCTIONS)
EMPTY = frozenset()


def function_set(names: Iterable[str], universe=UNIVERSE) -> frozenset[str]:
    fs = frozenset(names)
    extra = fs - universe
    if extra:
        raise ValueError(f"unknown functions {sorted(extra)}")
    return fs


@dataclass(frozen=True)
class Segment:
    segment_id: str
    labels: frozenset[str] = frozenset()


@dataclass(frozen=True)
class DataObject:
    object_id: str
    segments: tuple[Segment, ...]

    def __post_init__(self):
        ids = [s.segment_id for s in self.segments]
        if len(ids) != len(set(ids)):
            raise SchemaError(f"duplicate segment ids in {self.object_id}")

    @property
    def segment_ids(self) -> list[str]:
        return [s.segment_id for s in self.segments]

    @property
    def labels(self) -> frozenset[str]:
        return frozenset().union(*(s.labels for s in self.segments))


@dataclass(frozen=True)
class SegmentSelector:
    """one segment, every segment carrying a label, or the whole object"""

    kind: str = "all"
    value: str | None = None

    def __post_init__(self):
        if self.kind not in ("one", "label", "all"):
            raise ValueError(f"bad selector kind {self.kind!r}")
        if (self.kind == "all") != (self.value is None):
            raise ValueError("selector value required for one/label, forbidden for all")

    @classmethod
    def one(cls, segment_id):
        return cls("one", segment_id)

    @classmethod
    def label(cls, label):
        return cls("label", label)

    @classmethod
    def all(cls):
        return cls("all")

    def select(self, obj: DataObject) -> list[str]:
        if self.kind == "all":
            return obj.segment_ids
        if self.kind == "label":
            return [s.segment_id for s in obj.segments if self.value in s.labels]
        if self.value not in obj.segment_ids:
            raise UnknownObject(f"{obj.object_id} has no segment {self.value!r}")
        return [self.value]

    def to_dict(self) -> dict:
        return {"all": True} if self.kind == "all" else {self.kind: self.value}

    @classmethod
    def from_dict(cls, d: dict | None) -> "SegmentSelector":
        if not d or d.get("all"):
            return cls.all()
        (kind, value), = d.items()
        return cls(kind, value)


# ---- catalog ----

class _SegmentDoc(BaseModel):
    model_config = ConfigDict(extra="forbid")
    id: str
    labels: list[str] = Field(default_factory=list)


class _ObjectDoc(BaseModel):
    model_config = ConfigDict(extra="forbid")
    id: str
    segments: list[_SegmentDoc] = Field(min_length=1)


class _CatalogDoc(BaseModel):
    model_config = ConfigDict(extra="forbid")
    labels: list[str]
    functions: list[str] = Field(default_factory=lambda: list(FUNCTIONS))
    objects: list[_ObjectDoc]


@dataclass(frozen=True)
class Catalog:
    labels: frozenset[str]
    objects: dict[str, DataObject]
    functions: frozenset[str] = UNIVERSE

    def get(self, object_id: str) -> DataObject:
        try:
            return self.objects[object_id]
        except KeyError:
            raise UnknownObject(f"object {object_id!r} is not in the catalog") from None

    def __contains__(self, object_id):
        return object_id in self.objects

    def ids(self) -> list[str]:
        return sorted(self.objects)


def load_catalog(doc) -> Catalog:
    try:
        raw = json.loads(doc) if isinstance(doc, str) else doc
        parsed = _CatalogDoc.model_validate(raw)
    except (json.JSONDecodeError, ValidationError) as e:
        raise SchemaError(f"invalid catalog: {e}") from e
    labels = frozenset(parsed.labels)
    objects = {}
    for o in parsed.objects:
        if o.id in objects:
            raise SchemaError(f"duplicate object id {o.id}")
        segs = []
        for s in o.segments:
            unknown = set(s.labels) - labels
            if unknown:
                raise SchemaError(f"{o.id}/{s.id}: undeclared labels {sorted(unknown)}")
            segs.append(Segment(s.id, frozenset(s.labels)))
        objects[o.id] = DataObject(o.id, tuple(segs))
    return Catalog(labels, objects, frozenset(parsed.functions))


# ---- the tensor ----

class AccessControlTensor:
    """Immutable; restrict() and friends return a new version."""

    def __init__(self, catalog: Catalog, cells=None, universe=None, version=0):
        self.catalog = catalog
        self.universe = universe or catalog.functions
        self._cells: dict[tuple[str, str, str], frozenset[str]] = dict(cells or {})
        self.version = version

    def _object(self, obj) -> DataObject:
        return obj if isinstance(obj, DataObject) else self.catalog.get(obj)

    def _with(self, updates: dict) -> "AccessControlTensor":
        if not updates:
            return self
        cells = dict(self._cells)
        cells.update(updates)
        return AccessControlTensor(self.catalog, cells, self.universe, self.version + 1)

    def allowed(self, subject: str, object_id: str, segment_id: str) -> frozenset[str]:
        return self._cells.get((subject, object_id, segment_id), self.universe)

    def restrict(self, subject: str, obj, selector: SegmentSelector, functions) -> "AccessControlTensor":
        o = self._object(obj)
        functions = function_set(functions, self.universe)
        if not functions:
            return self
        updates = {}
        for seg in selector.select(o):
            current = self.allowed(subject, o.object_id, seg)
            if current & functions:
                updates[(subject, o.object_id, seg)] = current - functions
        return self._with(updates)

    def revoke(self, subject: str, obj) -> "AccessControlTensor":
        o = self._object(obj)
        return self._with({(subject, o.object_id, seg): EMPTY for seg in o.segment_ids})

    def render_view(self, subject: str, obj) -> dict[str, frozenset[str]]:
        o = self._object(obj)
        return {seg: self.allowed(subject, o.object_id, seg) for seg in o.segment_ids}

    @classmethod
    def allowing(cls, catalog: Catalog, grants) -> "AccessControlTensor":
        """Allow-list seed: each (subject, object_id, selector, functions) grant pins exactly those functions."""
        cells = {}
        for subject, object_id, selector, functions in grants:
            o = catalog.get(object_id)
            fs = function_set(functions, catalog.functions)
            for seg in selector.select(o):
                cells[(subject, object_id, seg)] = fs
        return cls(catalog, cells)

    def __len__(self):
        return len(self._cells)


def allowed(tensor: AccessControlTensor, subject, obj, segment) -> frozenset[str]:
    object_id = obj.object_id if isinstance(obj, DataObject) else obj
    return tensor.allowed(subject, object_id, segment)


def restrict(tensor: AccessControlTensor, subject, obj, selector, functions) -> AccessControlTensor:
    return tensor.restrict(subject, obj, selector, functions)


def render_view(tensor: AccessControlTensor, subject, obj) -> dict[str, frozenset[str]]:
    return tensor.render_view(subject, obj)
