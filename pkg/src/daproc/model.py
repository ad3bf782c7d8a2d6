"""Core model: relational schemas, actions, condition-action rules.

A process definition has a data layer (relations with key, foreign-key and
domain constraints) and a control layer (service signatures, parameterized
actions whose effects are SQL deletions/insertions, and CA rules whose
SELECT answers supply the actual parameters that enable an action).

Everything here is an immutable dataclass; `validate_spec` checks static
well-formedness and `normalize_rules` folds multiple rules per action into
one UNION rule.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterable, Iterator, Mapping, Optional, Union

from .errors import MergeArityMismatch

Value = Union[int, str]


class AttrType(enum.Enum):
    INT = "INT"
    STRING = "STRING"

    def check(self, v: Value) -> bool:
        # bool is an int subclass; it is never a legal attribute value
        if self is AttrType.INT:
            return isinstance(v, int) and not isinstance(v, bool)
        return isinstance(v, str)


def type_of_value(v: Value) -> AttrType:
    if isinstance(v, bool) or not isinstance(v, (int, str)):
        raise TypeError(f"unsupported value {v!r}")
    return AttrType.INT if isinstance(v, int) else AttrType.STRING


# --- terms and conditions ---------------------------------------------------


@dataclass(frozen=True)
class Const:
    value: Value


@dataclass(frozen=True)
class Param:
    name: str


@dataclass(frozen=True)
class Invocation:
    """A service call term; args are Const or Param, never nested calls."""

    service: str
    args: tuple = ()


Term = Union[Const, Param, Invocation]


@dataclass(frozen=True)
class AttrRef:
    """`alias.attr` or a bare `attr` (qualifier None)."""

    qualifier: Optional[str]
    name: str


Operand = Union[AttrRef, Const, Param]

COMPARISON_OPS = ("=", "<>", "<", "<=", ">", ">=")


@dataclass(frozen=True)
class Comparison:
    op: str
    left: Operand
    right: Operand


@dataclass(frozen=True)
class And:
    items: tuple


@dataclass(frozen=True)
class Or:
    items: tuple


@dataclass(frozen=True)
class Not:
    item: "Condition"


Condition = Union[Comparison, And, Or, Not]


# --- queries ----------------------------------------------------------------


@dataclass(frozen=True)
class FromItem:
    relation: str
    alias: str


@dataclass(frozen=True)
class SelectBranch:
    projection: tuple  # of Operand
    from_items: tuple
    where: Optional[Condition] = None


@dataclass(frozen=True)
class SelectQuery:
    """One or more SELECT branches combined by UNION (set semantics)."""

    branches: tuple

    def __post_init__(self):
        if not self.branches:
            raise ValueError("query needs at least one branch")

    @property
    def arity(self) -> int:
        return len(self.branches[0].projection)


# --- effects, actions, rules, services --------------------------------------


@dataclass(frozen=True)
class DeleteEffect:
    relation: str
    where: Optional[Condition] = None


@dataclass(frozen=True)
class InsertEffect:
    """INSERT INTO relation(columns) with either VALUES terms or a query."""

    relation: str
    columns: tuple
    source: Union[tuple, SelectQuery]  # tuple of Term, or a SelectQuery


Effect = Union[DeleteEffect, InsertEffect]


@dataclass(frozen=True)
class Action:
    name: str
    params: tuple  # of (name, AttrType)
    effects: tuple

    @property
    def param_names(self) -> tuple:
        return tuple(n for n, _ in self.params)

    @property
    def param_types(self) -> tuple:
        return tuple(t for _, t in self.params)


@dataclass(frozen=True)
class CARule:
    """Answers of `condition`, projected to `arg_attrs`, enable `action`."""

    condition: SelectQuery
    action: str
    arg_attrs: tuple

    def arg_indices(self) -> tuple:
        """Positions of arg_attrs within the first branch's projection."""
        names = []
        for item in self.condition.branches[0].projection:
            names.append(item.name if isinstance(item, AttrRef) else None)
        return tuple(names.index(a) for a in self.arg_attrs)


@dataclass(frozen=True)
class ServiceSignature:
    name: str
    param_types: tuple
    return_type: AttrType


# --- schema -----------------------------------------------------------------


@dataclass(frozen=True)
class FKConstraint:
    source_attrs: tuple
    target_relation: str
    target_attrs: tuple


@dataclass(frozen=True)
class DomainConstraint:
    attr: str
    values: tuple


@dataclass(frozen=True)
class RelationSchema:
    name: str
    attrs: tuple  # of (name, AttrType), declaration order
    key: tuple  # primary key attribute names
    foreign_keys: tuple = ()
    domains: tuple = ()

    def __post_init__(self):
        # constraint order carries no meaning; keep it canonical so that
        # structural equality (and the render/parse round trip) ignores it
        pos = {n: i for i, (n, _) in enumerate(self.attrs)}

        def fk_key(fk: FKConstraint):
            return (
                min((pos.get(a, len(pos)) for a in fk.source_attrs), default=len(pos)),
                fk.source_attrs,
                fk.target_relation,
                fk.target_attrs,
            )

        object.__setattr__(self, "foreign_keys", tuple(sorted(self.foreign_keys, key=fk_key)))
        object.__setattr__(
            self,
            "domains",
            tuple(sorted(self.domains, key=lambda d: (pos.get(d.attr, len(pos)), d.attr))),
        )

    @property
    def attr_names(self) -> tuple:
        return tuple(n for n, _ in self.attrs)

    def attr_type(self, name: str) -> AttrType:
        for n, t in self.attrs:
            if n == name:
                return t
        raise KeyError(name)

    @cached_property
    def fk_source_attrs(self) -> tuple:
        """FK source attributes outside the key, in declaration order."""
        sources = {a for fk in self.foreign_keys for a in fk.source_attrs}
        return tuple(n for n in self.attr_names if n in sources and n not in self.key)

    @cached_property
    def payload_attrs(self) -> tuple:
        """Attributes carried by raw rows: neither key nor FK source."""
        keyish = set(self.key) | {a for fk in self.foreign_keys for a in fk.source_attrs}
        return tuple(n for n in self.attr_names if n not in keyish)

    def domain_of(self, attr: str):
        for d in self.domains:
            if d.attr == attr:
                return d.values
        return None


@dataclass(frozen=True)
class Spec:
    relations: tuple = ()
    services: tuple = ()
    actions: tuple = ()
    rules: tuple = ()

    @cached_property
    def _relations(self) -> Mapping[str, RelationSchema]:
        return {r.name: r for r in self.relations}

    @cached_property
    def _services(self) -> Mapping[str, ServiceSignature]:
        return {s.name: s for s in self.services}

    @cached_property
    def _actions(self) -> Mapping[str, Action]:
        return {a.name: a for a in self.actions}

    def relation(self, name: str) -> RelationSchema:
        return self._relations[name]

    def service(self, name: str) -> ServiceSignature:
        return self._services[name]

    def action(self, name: str) -> Action:
        return self._actions[name]

    def rules_for(self, action: str) -> tuple:
        return tuple(r for r in self.rules if r.action == action)


# --- reference resolution ---------------------------------------------------


class ResolutionError(Exception):
    """An attribute reference cannot be resolved within its scope."""


class Scope:
    """Alias -> column layout for one SELECT branch (or one delete target)."""

    def __init__(self, items: Iterable):
        # items: (alias, attr_names, attr_types)
        self.items = list(items)
        seen = set()
        for alias, _, _ in self.items:
            if alias in seen:
                raise ResolutionError(f"duplicate alias '{alias}'")
            seen.add(alias)

    @classmethod
    def for_branch(cls, spec: Spec, branch: SelectBranch) -> "Scope":
        items = []
        for fi in branch.from_items:
            if fi.relation not in spec._relations:
                raise ResolutionError(f"unknown relation '{fi.relation}'")
            rel = spec.relation(fi.relation)
            items.append((fi.alias, rel.attr_names, tuple(t for _, t in rel.attrs)))
        return cls(items)

    def resolve(self, ref: AttrRef):
        """Return (item_index, column_index, AttrType) for a reference."""
        if ref.qualifier is not None:
            for i, (alias, names, types) in enumerate(self.items):
                if alias == ref.qualifier:
                    if ref.name not in names:
                        raise ResolutionError(
                            f"'{ref.qualifier}' has no attribute '{ref.name}'"
                        )
                    j = names.index(ref.name)
                    return i, j, types[j]
            raise ResolutionError(f"unknown alias '{ref.qualifier}'")
        hits = [
            (i, names.index(ref.name), types[names.index(ref.name)])
            for i, (alias, names, types) in enumerate(self.items)
            if ref.name in names
        ]
        if not hits:
            raise ResolutionError(f"unknown attribute '{ref.name}'")
        if len(hits) > 1:
            raise ResolutionError(f"ambiguous attribute '{ref.name}'")
        return hits[0]


def walk_conditions(cond: Optional[Condition]) -> Iterator[Comparison]:
    if cond is None:
        return
    if isinstance(cond, Comparison):
        yield cond
    elif isinstance(cond, (And, Or)):
        for item in cond.items:
            yield from walk_conditions(item)
    elif isinstance(cond, Not):
        yield from walk_conditions(cond.item)
    else:
        raise TypeError(f"not a condition: {cond!r}")


def spec_constants(spec: Spec):
    """All constants written in rules and effects (the spec's contribution
    to the active domain)."""
    out = set()

    def from_operand(op):
        if isinstance(op, Const):
            out.add(op.value)

    def from_query(q: SelectQuery):
        for b in q.branches:
            for item in b.projection:
                from_operand(item)
            for cmp_ in walk_conditions(b.where):
                from_operand(cmp_.left)
                from_operand(cmp_.right)

    for rule in spec.rules:
        from_query(rule.condition)
    for action in spec.actions:
        for eff in action.effects:
            if isinstance(eff, DeleteEffect):
                for cmp_ in walk_conditions(eff.where):
                    from_operand(cmp_.left)
                    from_operand(cmp_.right)
            else:
                if isinstance(eff.source, SelectQuery):
                    from_query(eff.source)
                else:
                    for term in eff.source:
                        from_operand(term)
                        if isinstance(term, Invocation):
                            for a in term.args:
                                from_operand(a)
    return out


# --- validation ---------------------------------------------------------------


@dataclass(frozen=True)
class Issue:
    severity: str  # "error" or "warning"
    message: str
    location: str

    def __str__(self):
        return f"{self.severity}: {self.location}: {self.message}"


@dataclass
class ValidationReport:
    issues: list = field(default_factory=list)

    @property
    def errors(self):
        return [i for i in self.issues if i.severity == "error"]

    @property
    def warnings(self):
        return [i for i in self.issues if i.severity == "warning"]

    @property
    def ok(self) -> bool:
        return not self.errors


class _Validator:
    def __init__(self, spec: Spec):
        self.spec = spec
        self.report = ValidationReport()

    def error(self, loc: str, msg: str):
        self.report.issues.append(Issue("error", msg, loc))

    def warn(self, loc: str, msg: str):
        self.report.issues.append(Issue("warning", msg, loc))

    def run(self) -> ValidationReport:
        self.check_relations()
        self.check_services()
        self.check_actions()
        self.check_rules()
        return self.report

    # - data layer -

    def check_relations(self):
        seen = set()
        for rel in self.spec.relations:
            loc = f"relation {rel.name}"
            if rel.name in seen:
                self.error(loc, "duplicate relation name")
                continue
            seen.add(rel.name)
            names = [n for n, _ in rel.attrs]
            if len(names) != len(set(names)):
                self.error(loc, "duplicate attribute names")
                continue
            if not rel.key:
                self.error(loc, "empty primary key")
            for a in rel.key:
                if a not in names:
                    self.error(loc, f"primary key attribute '{a}' not declared")
            if len(set(rel.key)) != len(rel.key):
                self.error(loc, "repeated attribute in primary key")
            dom_seen = set()
            for d in rel.domains:
                if d.attr not in names:
                    self.error(loc, f"domain constraint on unknown attribute '{d.attr}'")
                    continue
                if d.attr in dom_seen:
                    self.error(loc, f"two domain constraints on '{d.attr}'")
                dom_seen.add(d.attr)
                if not d.values:
                    self.error(loc, f"empty domain for '{d.attr}'")
                t = rel.attr_type(d.attr)
                for v in d.values:
                    if not t.check(v):
                        self.error(loc, f"domain value {v!r} is not {t.value}")
            for fk in rel.foreign_keys:
                self.check_fk(rel, fk, loc)

    def check_fk(self, rel: RelationSchema, fk: FKConstraint, loc: str):
        names = rel.attr_names
        for a in fk.source_attrs:
            if a not in names:
                self.error(loc, f"foreign key source attribute '{a}' not declared")
                return
        if fk.target_relation not in self.spec._relations:
            self.error(loc, f"foreign key targets unknown relation '{fk.target_relation}'")
            return
        target = self.spec.relation(fk.target_relation)
        if len(fk.source_attrs) != len(fk.target_attrs):
            self.error(loc, "foreign key source/target arity differs")
            return
        for a in fk.target_attrs:
            if a not in target.attr_names:
                self.error(loc, f"foreign key targets unknown attribute '{a}'")
                return
        # the referenced attribute list must be a key of the target
        if sorted(fk.target_attrs) != sorted(target.key):
            self.error(loc, f"foreign key target is not the key of {target.name}")
            return
        for s, t in zip(fk.source_attrs, fk.target_attrs):
            if rel.attr_type(s) is not target.attr_type(t):
                self.error(loc, f"foreign key '{s}' and '{t}' differ in type")

    # - control layer -

    def check_services(self):
        seen = set()
        for svc in self.spec.services:
            loc = f"service {svc.name}"
            if svc.name in seen:
                self.error(loc, "duplicate service name")
            seen.add(svc.name)
            if svc.name == "genpk" and (svc.param_types or svc.return_type is not AttrType.INT):
                self.error(loc, "genpk is built in and must have signature () : INT")

    def check_actions(self):
        seen = set()
        for action in self.spec.actions:
            loc = f"action {action.name}"
            if action.name in seen:
                self.error(loc, "duplicate action name")
                continue
            seen.add(action.name)
            if len(set(action.param_names)) != len(action.params):
                self.error(loc, "duplicate parameter names")
                continue
            params = dict(action.params)
            if len(action.effects) != len(set(action.effects)):
                self.warn(loc, "duplicate effects (collapsed by normalization)")
            for i, eff in enumerate(action.effects, start=1):
                self.check_effect(action, params, eff, f"{loc}, effect {i}")

    def check_effect(self, action, params, eff, loc):
        if eff.relation not in self.spec._relations:
            self.error(loc, f"unknown relation '{eff.relation}'")
            return
        rel = self.spec.relation(eff.relation)
        if isinstance(eff, DeleteEffect):
            scope = Scope([(rel.name, rel.attr_names, tuple(t for _, t in rel.attrs))])
            self.check_condition(eff.where, scope, params, loc, allow_params=True)
            return
        # insertion: columns must cover the whole relation
        if len(set(eff.columns)) != len(eff.columns):
            self.error(loc, "repeated column")
            return
        unknown = [c for c in eff.columns if c not in rel.attr_names]
        if unknown:
            self.error(loc, f"unknown column '{unknown[0]}'")
            return
        missing = [a for a in rel.attr_names if a not in eff.columns]
        if missing:
            self.error(loc, f"insert must supply every attribute (missing '{missing[0]}')")
            return
        col_types = tuple(rel.attr_type(c) for c in eff.columns)
        if isinstance(eff.source, SelectQuery):
            types = self.check_query(eff.source, params, loc, allow_params=True)
            if types is None:
                return
            if len(types) != len(eff.columns):
                self.error(loc, "projection arity differs from column list")
                return
            for c, have, want in zip(eff.columns, types, col_types):
                if have is not want:
                    self.error(loc, f"column '{c}' expects {want.value}, query yields {have.value}")
            return
        if len(eff.source) != len(eff.columns):
            self.error(loc, "VALUES arity differs from column list")
            return
        for c, term, want in zip(eff.columns, eff.source, col_types):
            t = self.term_type(term, params, loc)
            if t is not None and t is not want:
                self.error(loc, f"column '{c}' expects {want.value}, got {t.value}")

    def term_type(self, term, params, loc):
        if isinstance(term, Const):
            return type_of_value(term.value)
        if isinstance(term, Param):
            if term.name not in params:
                self.error(loc, f"undeclared parameter ':{term.name}'")
                return None
            return params[term.name]
        if isinstance(term, Invocation):
            if term.service not in self.spec._services:
                self.error(loc, f"unknown service '{term.service}'")
                return None
            sig = self.spec.service(term.service)
            if len(term.args) != len(sig.param_types):
                self.error(loc, f"service {sig.name} expects {len(sig.param_types)} arguments")
                return sig.return_type
            for arg, want in zip(term.args, sig.param_types):
                if isinstance(arg, Invocation):
                    self.error(loc, "nested service calls are not allowed")
                    continue
                have = self.term_type(arg, params, loc)
                if have is not None and have is not want:
                    self.error(loc, f"service {sig.name} argument expects {want.value}")
            return sig.return_type
        self.error(loc, f"bad term {term!r}")
        return None

    def operand_type(self, op, scope, params, loc, allow_params):
        if isinstance(op, AttrRef):
            try:
                _, _, t = scope.resolve(op)
                return t
            except ResolutionError as e:
                self.error(loc, str(e))
                return None
        if isinstance(op, Const):
            return type_of_value(op.value)
        if isinstance(op, Param):
            if not allow_params:
                self.error(loc, "parameters are not allowed in rule conditions")
                return None
            if op.name not in params:
                self.error(loc, f"undeclared parameter ':{op.name}'")
                return None
            return params[op.name]
        self.error(loc, f"bad operand {op!r}")
        return None

    def check_condition(self, cond, scope, params, loc, allow_params):
        try:
            comparisons = list(walk_conditions(cond))
        except TypeError:
            self.error(loc, "malformed condition")
            return
        for cmp_ in comparisons:
            if cmp_.op not in COMPARISON_OPS:
                self.error(loc, f"unknown comparison operator '{cmp_.op}'")
                continue
            lt = self.operand_type(cmp_.left, scope, params, loc, allow_params)
            rt = self.operand_type(cmp_.right, scope, params, loc, allow_params)
            if lt is not None and rt is not None and lt is not rt:
                self.error(loc, f"cannot compare {lt.value} with {rt.value}")

    def check_query(self, query, params, loc, allow_params):
        """Validate a SELECT query; return the branch type vector or None."""
        shape = None
        for k, branch in enumerate(query.branches):
            bloc = loc if len(query.branches) == 1 else f"{loc}, branch {k + 1}"
            try:
                scope = Scope.for_branch(self.spec, branch)
            except ResolutionError as e:
                self.error(bloc, str(e))
                return None
            if not branch.projection:
                self.error(bloc, "empty projection")
                return None
            types = []
            for item in branch.projection:
                t = self.operand_type(item, scope, params, bloc, allow_params)
                if isinstance(item, Invocation):
                    self.error(bloc, "service calls are not allowed in queries")
                types.append(t)
            self.check_condition(branch.where, scope, params, bloc, allow_params)
            if any(t is None for t in types):
                return None
            types = tuple(types)
            if shape is None:
                shape = types
            elif types != shape:
                self.error(loc, "UNION branches differ in arity or types")
                return None
        return shape

    def check_rules(self):
        ruled = set()
        for k, rule in enumerate(self.spec.rules, start=1):
            loc = f"rule {k} ({rule.action})"
            if rule.action not in self.spec._actions:
                self.error(loc, f"unknown action '{rule.action}'")
                continue
            ruled.add(rule.action)
            action = self.spec.action(rule.action)
            types = self.check_query(rule.condition, {}, loc, allow_params=False)
            if types is None:
                continue
            first = rule.condition.branches[0]
            names = [
                item.name if isinstance(item, AttrRef) else None
                for item in first.projection
            ]
            if any(n is None for n in names):
                self.error(loc, "rule projections must be plain attributes")
                continue
            bad = False
            for a in rule.arg_attrs:
                if names.count(a) == 0:
                    self.error(loc, f"'{a}' is not in the projection")
                    bad = True
                elif names.count(a) > 1:
                    self.error(loc, f"'{a}' appears twice in the projection")
                    bad = True
            if bad:
                continue
            if len(rule.arg_attrs) != len(action.params):
                self.error(loc, f"{action.name} takes {len(action.params)} parameters")
                continue
            for a, (pname, ptype) in zip(rule.arg_attrs, action.params):
                have = types[names.index(a)]
                if have is not ptype:
                    self.error(loc, f"'{a}' is {have.value} but parameter '{pname}' is {ptype.value}")
        for action in self.spec.actions:
            if action.name not in ruled:
                self.error(f"action {action.name}", "no CA rule enables this action")


def validate_spec(spec: Spec) -> ValidationReport:
    """Static checks over a spec; returns a report, raises nothing."""
    return _Validator(spec).run()


# --- rule normalization -------------------------------------------------------


def _reordered_branches(spec: Spec, rule: CARule):
    """Branches of `rule` with projections narrowed to arg_attrs order,
    plus the resulting type vector."""
    first = rule.condition.branches[0]
    names = [item.name if isinstance(item, AttrRef) else None for item in first.projection]
    try:
        indices = tuple(names.index(a) for a in rule.arg_attrs)
    except ValueError as e:
        raise MergeArityMismatch(f"rule for {rule.action}: {e}") from None
    branches = tuple(
        replace(b, projection=tuple(b.projection[i] for i in indices))
        for b in rule.condition.branches
    )
    try:
        scope = Scope.for_branch(spec, first)
        types = tuple(scope.resolve(first.projection[i])[2] for i in indices)
    except ResolutionError as e:
        raise MergeArityMismatch(f"rule for {rule.action}: {e}") from None
    return branches, types


def normalize_rules(spec: Spec) -> Spec:
    """Fold rules so each action has exactly one (possibly UNION) rule.

    Single-rule actions keep their rule untouched; multi-rule actions get the
    concatenation of their rules' branches, each branch projected onto the
    rule's arg_attrs in parameter order. Exact duplicate effects within an
    action are dropped. Idempotent.
    """
    by_action: dict = {}
    order = []
    for rule in spec.rules:
        if rule.action not in by_action:
            order.append(rule.action)
        by_action.setdefault(rule.action, []).append(rule)

    new_rules = []
    for name in order:
        group = by_action[name]
        if len(group) == 1:
            new_rules.append(group[0])
            continue
        shape = None
        branches = []
        arg_attrs = None
        for rule in group:
            if arg_attrs is None:
                arg_attrs = tuple(rule.arg_attrs)
            if len(rule.arg_attrs) != len(arg_attrs):
                raise MergeArityMismatch(
                    f"rules for {name} bind {len(arg_attrs)} and {len(rule.arg_attrs)} parameters"
                )
            bs, types = _reordered_branches(spec, rule)
            if shape is None:
                shape = types
            elif types != shape:
                raise MergeArityMismatch(f"rules for {name} bind different types")
            branches.extend(bs)
        new_rules.append(CARule(SelectQuery(tuple(branches)), name, arg_attrs))

    actions = []
    for action in spec.actions:
        deduped = tuple(dict.fromkeys(action.effects))
        actions.append(action if deduped == action.effects else replace(action, effects=deduped))
    return replace(spec, actions=tuple(actions), rules=tuple(new_rules))
