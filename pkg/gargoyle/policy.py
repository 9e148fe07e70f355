# gargoyle/policy.py
# Policy pack: vocabulary, rules (org / generic / fbac-context), the condition
# tree and its evaluator. Documents are JSON; parse -> serialize -> parse is the identity.

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Annotated, Any, Literal, Union

import structlog
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from gargoyle.context import SECURITY_LEVELS, NCAKind
from gargoyle.errors import DuplicatePriority, GargoyleError, SchemaError, UnknownVocabularyReference
from gargoyle.fbac import FUNCTIONS, SegmentSelector
from gargoyle.netsim import FaultAction, Medium, RuleAction

log = structlog.get_logger(__name__)

MAX_DEPTH = 32


class RuleKind(str, Enum):
    ORG = "org"
    GENERIC = "generic"
    FBAC_CONTEXT = "fbac-context"


class DenyReason(str, Enum):
    COMPROMISED_PATH = "compromised-path"
    CURRENT_SUSPICIOUS = "current-suspicious"
    HISTORIC_SUSPICIOUS = "historic-suspicious"
    ROLE_MISMATCH = "role-mismatch"
    BLACKLISTED = "blacklisted"


# most severe first
REASON_PRECEDENCE = (
    DenyReason.BLACKLISTED,
    DenyReason.COMPROMISED_PATH,
    DenyReason.CURRENT_SUSPICIOUS,
    DenyReason.HISTORIC_SUSPICIOUS,
    DenyReason.ROLE_MISMATCH,
)

Scope = Literal["requester", "requester-and-trigger"]


# ---- condition atoms ----

class _Atom(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class _NoParams(_Atom):
    pass


class _RoleIn(_Atom):
    roles: list[str] = Field(min_length=1)


class _RoleIndex(_Atom):
    min: int = Field(ge=1)
    max: int = Field(ge=1)


class _ZoneIn(_Atom):
    zones: list[str] = Field(min_length=1)


class _MediumIs(_Atom):
    medium: Medium


class _LabelIn(_Atom):
    labels: list[str] = Field(min_length=1)


class _NCAPresent(_Atom):
    kind: NCAKind
    match: dict[str, Any] = Field(default_factory=dict)
    window: Literal["recent", "historical", "any"] = "recent"
    subject: Literal["requester", "proximity"] = "requester"


class _PathReport(_Atom):
    actions: list[FaultAction] = Field(default_factory=list)


class _SecurityLevel(_Atom):
    levels: list[Literal["high", "medium", "low"]] = Field(min_length=1)


_ATOMS = {
    "true": _NoParams,
    "false": _NoParams,
    "role_in": _RoleIn,
    "role_index": _RoleIndex,
    "zone_in": _ZoneIn,
    "medium": _MediumIs,
    "label_in": _LabelIn,
    "nca": _NCAPresent,
    "path_report": _PathReport,
    "supervisor_present": _NoParams,
    "blacklisted": _NoParams,
    "security_level": _SecurityLevel,
}
_BRANCHES = ("and", "or", "not")


@dataclass(frozen=True)
class Condition:
    op: str
    children: tuple["Condition", ...] = ()
    atom: _Atom | None = None
    # zone_in only: groups expanded to zone ids
    zone_set: frozenset[str] = field(default=frozenset(), compare=False)

    def to_dict(self) -> dict:
        if self.op == "not":
            return {"op": "not", "arg": self.children[0].to_dict()}
        if self.op in ("and", "or"):
            return {"op": self.op, "args": [c.to_dict() for c in self.children]}
        return {"op": self.op, **self.atom.model_dump(mode="json")}

    def depth(self) -> int:
        return 1 + max((c.depth() for c in self.children), default=0)


TRUE = Condition("true", atom=_NoParams())


@dataclass(frozen=True)
class Evidence:
    """What made the positive leaves of a condition true: (nca, window) pairs and data-plane reports."""

    ncas: tuple = ()
    reports: tuple = ()

    def __or__(self, other: "Evidence") -> "Evidence":
        if not other.ncas and not other.reports:
            return self
        return Evidence(self.ncas + other.ncas, self.reports + other.reports)

    @property
    def users(self) -> frozenset[str]:
        return frozenset(n.user_id for n, _ in self.ncas)

    @property
    def windows(self) -> frozenset[str]:
        return frozenset(w for _, w in self.ncas)


NO_EVIDENCE = Evidence()


# ---- vocabulary, effects, rules ----

@dataclass(frozen=True)
class Vocabulary:
    roles: tuple[str, ...]
    zones: tuple[str, ...]
    labels: tuple[str, ...]
    zone_groups: dict[str, tuple[str, ...]] = field(default_factory=dict)
    functions: tuple[str, ...] = FUNCTIONS
    blocklist: tuple[str, ...] = ()

    def role_index(self, role: str) -> int:
        """1-based position of the role; 0 for undeclared roles"""
        try:
            return self.roles.index(role) + 1
        except ValueError:
            return 0

    def resolve_zones(self, names) -> frozenset[str]:
        out = set()
        for name in names:
            if name in self.zone_groups:
                out.update(self.zone_groups[name])
            elif name in self.zones:
                out.add(name)
            else:
                raise UnknownVocabularyReference(f"unknown zone or zone group {name!r}")
        return frozenset(out)

    def to_dict(self) -> dict:
        return {"roles": list(self.roles), "zones": list(self.zones),
                "zone_groups": {k: list(v) for k, v in self.zone_groups.items()},
                "labels": list(self.labels), "functions": list(self.functions),
                "blocklist": list(self.blocklist)}


@dataclass(frozen=True)
class Defaults:
    supervisor_roles: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {"supervisor_roles": list(self.supervisor_roles)}


@dataclass(frozen=True)
class Target:
    objects: frozenset[str] | None = None
    labels: frozenset[str] | None = None

    def matches(self, object_id: str, labels) -> bool:
        if self.objects is not None and object_id not in self.objects:
            return False
        if self.labels is not None and not self.labels & labels:
            return False
        return True

    def to_dict(self) -> dict:
        if self.objects is None and self.labels is None:
            return {"any": True}
        out = {}
        if self.objects is not None:
            out["objects"] = sorted(self.objects)
        if self.labels is not None:
            out["labels"] = sorted(self.labels)
        return out


@dataclass(frozen=True)
class Deny:
    reason: DenyReason

    def to_dict(self):
        return {"type": "deny", "reason": self.reason.value}


@dataclass(frozen=True)
class RestrictFunctions:
    functions: frozenset[str]
    selector: SegmentSelector = SegmentSelector("all")

    def to_dict(self):
        return {"type": "restrict", "functions": sorted(self.functions), "segments": self.selector.to_dict()}


@dataclass(frozen=True)
class NetworkAction:
    action: RuleAction
    zones: tuple[str, ...] = ()
    scope: str = "requester"
    fallback: str | None = None
    zone_set: frozenset[str] = field(default=frozenset(), compare=False)

    def to_dict(self):
        out = {"type": "network", "action": self.action.value, "scope": self.scope}
        if self.zones:
            out["zones"] = list(self.zones)
        if self.fallback:
            out["fallback"] = self.fallback
        return out


@dataclass(frozen=True)
class Blacklist:
    scope: str = "requester"

    def to_dict(self):
        return {"type": "blacklist", "scope": self.scope}


Effect = Union[Deny, RestrictFunctions, NetworkAction, Blacklist]

# effect types each rule kind may carry
KIND_EFFECTS = {
    RuleKind.ORG: (Deny,),
    RuleKind.FBAC_CONTEXT: (RestrictFunctions,),
    RuleKind.GENERIC: (Deny, RestrictFunctions, NetworkAction, Blacklist),
}


@dataclass(frozen=True)
class PolicyRule:
    id: str
    kind: RuleKind
    priority: int
    condition: Condition
    effect: Effect
    target: Target = Target()

    def to_dict(self) -> dict:
        return {"id": self.id, "kind": self.kind.value, "priority": self.priority,
                "target": self.target.to_dict(), "condition": self.condition.to_dict(),
                "effect": self.effect.to_dict()}


@dataclass(frozen=True)
class PolicyDocument:
    rules: tuple[PolicyRule, ...]
    vocab: Vocabulary
    defaults: Defaults = Defaults()

    @property
    def ordered(self) -> list[PolicyRule]:
        return sorted(self.rules, key=lambda r: -r.priority)

    def rule(self, rule_id: str) -> PolicyRule:
        for r in self.rules:
            if r.id == rule_id:
                return r
        raise KeyError(rule_id)

    def to_dict(self) -> dict:
        return {"vocab": self.vocab.to_dict(), "defaults": self.defaults.to_dict(),
                "rules": [r.to_dict() for r in self.rules]}


# ---- document shell ----

class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class _VocabDoc(_Strict):
    roles: list[str] = Field(min_length=1)
    zones: list[str] = Field(min_length=1)
    labels: list[str] = Field(default_factory=list)
    zone_groups: dict[str, list[str]] = Field(default_factory=dict)
    functions: list[str] = Field(default_factory=lambda: list(FUNCTIONS))
    blocklist: list[str] = Field(default_factory=list)


class _DefaultsDoc(_Strict):
    supervisor_roles: list[str] = Field(default_factory=list)


class _TargetDoc(_Strict):
    any: bool = False
    objects: list[str] | None = None
    labels: list[str] | None = None


class _SelectorDoc(_Strict):
    all: bool | None = None
    one: str | None = None
    label: str | None = None


class _DenyDoc(_Strict):
    type: Literal["deny"]
    reason: DenyReason


class _RestrictDoc(_Strict):
    type: Literal["restrict"]
    functions: list[str] = Field(min_length=1)
    segments: _SelectorDoc = Field(default_factory=lambda: _SelectorDoc(all=True))


class _NetworkDoc(_Strict):
    type: Literal["network"]
    action: RuleAction
    zones: list[str] = Field(default_factory=list)
    scope: Scope = "requester"
    fallback: Literal["deny", "quarantine"] | None = None


class _BlacklistDoc(_Strict):
    type: Literal["blacklist"]
    scope: Scope = "requester"


class _RuleDoc(_Strict):
    id: str = Field(min_length=1)
    kind: RuleKind
    priority: int
    target: _TargetDoc = Field(default_factory=lambda: _TargetDoc(any=True))
    condition: dict[str, Any]
    effect: Annotated[Union[_DenyDoc, _RestrictDoc, _NetworkDoc, _BlacklistDoc], Field(discriminator="type")]


class _PolicyDoc(_Strict):
    vocab: _VocabDoc
    defaults: _DefaultsDoc = Field(default_factory=_DefaultsDoc)
    rules: list[_RuleDoc] = Field(default_factory=list)


def _check_known(kind: str, names, declared) -> None:
    unknown = [n for n in names if n not in declared]
    if unknown:
        raise UnknownVocabularyReference(f"undeclared {kind}: {unknown}")


def parse_condition(raw, vocab: Vocabulary, depth: int = 0) -> Condition:
    if depth > MAX_DEPTH:
        raise SchemaError("condition nested too deeply")
    if not isinstance(raw, dict) or not isinstance(raw.get("op"), str):
        raise SchemaError(f"condition must be an object with an 'op': {raw!r}"[:200])
    op = raw["op"]
    params = {k: v for k, v in raw.items() if k != "op"}

    if op in ("and", "or"):
        args = params.pop("args", None)
        if params or not isinstance(args, list) or not args:
            raise SchemaError(f"'{op}' takes a non-empty 'args' list only")
        return Condition(op, tuple(parse_condition(a, vocab, depth + 1) for a in args))
    if op == "not":
        arg = params.pop("arg", None)
        if params or arg is None:
            raise SchemaError("'not' takes exactly one 'arg'")
        return Condition(op, (parse_condition(arg, vocab, depth + 1),))

    model = _ATOMS.get(op)
    if model is None:
        raise SchemaError(f"unknown condition op {op!r}")
    try:
        atom = model.model_validate(params)
    except ValidationError as e:
        raise SchemaError(f"bad '{op}' condition: {e}") from e

    zone_set = frozenset()
    if isinstance(atom, _RoleIn):
        _check_known("roles", atom.roles, vocab.roles)
    elif isinstance(atom, _RoleIndex):
        if atom.min > atom.max or atom.max > len(vocab.roles):
            raise UnknownVocabularyReference(f"role index range {atom.min}..{atom.max} outside 1..{len(vocab.roles)}")
    elif isinstance(atom, _ZoneIn):
        zone_set = vocab.resolve_zones(atom.zones)
    elif isinstance(atom, _LabelIn):
        _check_known("labels", atom.labels, vocab.labels)
    return Condition(op, atom=atom, zone_set=zone_set)


def _selector(doc: _SelectorDoc, vocab: Vocabulary) -> SegmentSelector:
    given = [(k, v) for k, v in (("one", doc.one), ("label", doc.label)) if v is not None]
    if doc.all and given or len(given) > 1:
        raise SchemaError("segment selector names more than one of all/one/label")
    if not given:
        return SegmentSelector("all")
    kind, value = given[0]
    if kind == "label":
        _check_known("labels", [value], vocab.labels)
    return SegmentSelector(kind, value)


def _effect(doc, vocab: Vocabulary) -> Effect:
    if isinstance(doc, _DenyDoc):
        return Deny(doc.reason)
    if isinstance(doc, _RestrictDoc):
        _check_known("functions", doc.functions, vocab.functions)
        return RestrictFunctions(frozenset(doc.functions), _selector(doc.segments, vocab))
    if isinstance(doc, _NetworkDoc):
        zone_set = frozenset()
        if doc.action is RuleAction.RESTRICT_TO_ZONE:
            if not doc.zones:
                raise SchemaError("restrict_to_zone needs zones")
            zone_set = vocab.resolve_zones(doc.zones)
        elif doc.zones:
            raise SchemaError(f"{doc.action.value} takes no zones")
        if doc.fallback and doc.action is not RuleAction.REROUTE_AVOIDING:
            raise SchemaError("only reroute_avoiding takes a fallback")
        return NetworkAction(doc.action, tuple(doc.zones), doc.scope, doc.fallback, zone_set)
    return Blacklist(doc.scope)


def _target(doc: _TargetDoc, vocab: Vocabulary) -> Target:
    if doc.any:
        if doc.objects is not None or doc.labels is not None:
            raise SchemaError("target 'any' excludes objects/labels")
        return Target()
    if doc.labels is not None:
        _check_known("labels", doc.labels, vocab.labels)
    if doc.objects is None and doc.labels is None:
        raise SchemaError("target must be 'any' or name objects/labels")
    return Target(None if doc.objects is None else frozenset(doc.objects),
                  None if doc.labels is None else frozenset(doc.labels))


def parse_policies(doc) -> PolicyDocument:
    """Parse a policy pack (JSON text or already-decoded dict); only GargoyleError escapes."""
    try:
        raw = json.loads(doc) if isinstance(doc, (str, bytes)) else doc
        shell = _PolicyDoc.model_validate(raw)
    except (json.JSONDecodeError, UnicodeDecodeError, ValidationError) as e:
        raise SchemaError(f"invalid policy document: {e}") from e

    v = shell.vocab
    for group, members in v.zone_groups.items():
        if group in v.zones:
            raise SchemaError(f"zone group {group!r} shadows a zone")
        _check_known("zones", members, v.zones)
    vocab = Vocabulary(tuple(v.roles), tuple(v.zones), tuple(v.labels),
                       {k: tuple(m) for k, m in v.zone_groups.items()},
                       tuple(v.functions), tuple(v.blocklist))
    _check_known("roles", shell.defaults.supervisor_roles, vocab.roles)
    defaults = Defaults(tuple(shell.defaults.supervisor_roles))

    rules, ids, priorities = [], set(), {}
    for r in shell.rules:
        if r.id in ids:
            raise SchemaError(f"duplicate rule id {r.id!r}")
        if r.priority in priorities:
            raise DuplicatePriority(f"rules {priorities[r.priority]!r} and {r.id!r} share priority {r.priority}")
        ids.add(r.id)
        priorities[r.priority] = r.id
        effect = _effect(r.effect, vocab)
        if not isinstance(effect, KIND_EFFECTS[r.kind]):
            raise SchemaError(f"{r.kind.value} rule {r.id!r} cannot carry a {r.effect.type} effect")
        rules.append(PolicyRule(r.id, r.kind, r.priority, parse_condition(r.condition, vocab),
                                effect, _target(r.target, vocab)))
    log.debug("policies_parsed", rules=len(rules))
    return PolicyDocument(tuple(rules), vocab, defaults)


def serialize_policies(doc: PolicyDocument) -> str:
    return json.dumps(doc.to_dict(), indent=2)


def load_policies(path) -> PolicyDocument:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise SchemaError(f"could not read policy pack {path}: {e}") from e
    return parse_policies(text)


# ---- evaluation ----

def _nca_pool(atom: _NCAPresent, snap):
    if atom.subject == "requester":
        if atom.window in ("recent", "any"):
            yield from ((n, "recent") for n in snap.recent)
        if atom.window in ("historical", "any"):
            yield from ((n, "historical") for n in snap.historical)
    elif atom.window != "historical":
        # proximity only carries the recent window
        for user in sorted(snap.proximity):
            yield from ((n, "recent") for n in snap.proximity[user])


def _detail_matches(nca, match: dict) -> bool:
    for key, want in match.items():
        have = nca.detail.get(key)
        if isinstance(want, list):
            if have not in want:
                return False
        elif have != want:
            return False
    return True


def _leaf(cond: Condition, snap) -> tuple[bool, Evidence]:
    op, a = cond.op, cond.atom
    if op == "true":
        return True, NO_EVIDENCE
    if op == "false":
        return False, NO_EVIDENCE
    if op == "role_in":
        return snap.role in a.roles, NO_EVIDENCE
    if op == "role_index":
        return a.min <= snap.role_index <= a.max, NO_EVIDENCE
    if op == "zone_in":
        return snap.zone in cond.zone_set, NO_EVIDENCE
    if op == "medium":
        return snap.medium == a.medium, NO_EVIDENCE
    if op == "label_in":
        return bool(snap.object_labels & set(a.labels)), NO_EVIDENCE
    if op == "nca":
        hits = tuple((n, w) for n, w in _nca_pool(a, snap)
                     if n.kind is a.kind and _detail_matches(n, a.match))
        return bool(hits), Evidence(ncas=hits) if hits else NO_EVIDENCE
    if op == "path_report":
        hits = tuple(r for r in snap.path_reports if not a.actions or r.action in a.actions)
        return bool(hits), Evidence(reports=hits) if hits else NO_EVIDENCE
    if op == "supervisor_present":
        return bool(snap.supervisor_present), NO_EVIDENCE
    if op == "blacklisted":
        return bool(snap.blacklisted), NO_EVIDENCE
    if op == "security_level":
        return snap.security_level in a.levels, NO_EVIDENCE
    raise GargoyleError(f"unknown condition op {op!r}")


def explain_condition(cond: Condition, snap) -> tuple[bool, Evidence]:
    """Truth value plus the evidence behind it (positive leaves only, never from under a NOT)."""
    if cond.op == "and":
        ev = NO_EVIDENCE
        for c in cond.children:
            ok, e = explain_condition(c, snap)
            if not ok:
                return False, NO_EVIDENCE
            ev = ev | e
        return True, ev
    if cond.op == "or":
        hit, ev = False, NO_EVIDENCE
        for c in cond.children:
            ok, e = explain_condition(c, snap)
            if ok:
                hit, ev = True, ev | e
        return hit, ev
    if cond.op == "not":
        ok, _ = explain_condition(cond.children[0], snap)
        return not ok, NO_EVIDENCE
    return _leaf(cond, snap)


def evaluate_condition(cond: Condition, snap) -> bool:
    return explain_condition(cond, snap)[0]


def matching_rules(doc: PolicyDocument, object_id: str, snap) -> list[tuple[PolicyRule, Evidence]]:
    out = []
    for rule in doc.ordered:
        if not rule.target.matches(object_id, snap.object_labels):
            continue
        ok, ev = explain_condition(rule.condition, snap)
        if ok:
            out.append((rule, ev))
    return out


def applicable_rules(doc: PolicyDocument, request, snap) -> list[tuple[PolicyRule, Effect]]:
    return [(r, r.effect) for r, _ in matching_rules(doc, request.object_id, snap)]
