"""Execution cycle over the encoded store.

One step = pick an enabled binding (a distinct CA-rule answer), evaluate the
action's effects against the pre-state (collecting service invocations),
then commit deletions-before-insertions transactionally: if the successor
snapshot violates a constraint nothing changes, but the binding stays
marked as attempted.

Three modalities:

  PLAIN      - enactment; superseded states are garbage collected.
  HISTORY    - enactment; every state is kept and transitions carry strictly
               increasing millisecond timestamps (a total order).
  STATESPACE - no notion of "current" state; commits may start from any
               state, and genpk freshness is scoped per application so that
               converging paths fold.
"""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional

from . import model, parser, query, services, store as store_mod
from .errors import (
    AwaitingInteractiveResult,
    MissingInvocationResult,
    NoSuchBinding,
    ParseError,
    ScriptError,
    SpecValidationError,
    StaleBinding,
    TypeMismatch,
    UnknownAction,
)


class Modality(enum.Enum):
    PLAIN = "plain"
    HISTORY = "history"
    STATESPACE = "statespace"


@dataclass
class Binding:
    """One enabled way to instantiate an action's parameters at a state."""

    binding_id: int
    action: str
    state: int
    values: tuple
    marked: bool = False


@dataclass(frozen=True)
class GroundAction:
    action: str
    values: tuple


@dataclass(frozen=True)
class Slot:
    """Placeholder inside an insert template for an invocation result."""

    invocation_id: int


@dataclass(frozen=True)
class PendingInvocation:
    invocation_id: int
    service: str
    args: tuple

    @property
    def signature(self) -> str:
        return f"{self.service}({','.join(str(a) for a in self.args)})"


@dataclass
class EffectTemplate:
    """Ground effects of one application: rows to delete, row templates to
    insert (attribute order, possibly containing Slots)."""

    deletes: dict = field(default_factory=dict)  # rel -> frozenset of rows
    inserts: dict = field(default_factory=dict)  # rel -> tuple of templates


@dataclass(frozen=True)
class ScriptStep:
    action: str
    values: tuple
    results: tuple = ()  # of (service, args, value)


def _select_all(rel: model.RelationSchema, where) -> model.SelectQuery:
    projection = tuple(model.AttrRef(rel.name, a) for a in rel.attr_names)
    return model.SelectQuery(
        (model.SelectBranch(projection, (model.FromItem(rel.name, rel.name),), where),)
    )


class Engine:
    """Drives a validated, rule-normalized spec over an encoded store."""

    def __init__(self, spec: model.Spec, initial: Mapping, *,
                 modality: Modality = Modality.PLAIN,
                 registry: Optional[services.ServiceRegistry] = None,
                 persist_path=None, clock=None):
        report = model.validate_spec(spec)
        if not report.ok:
            raise SpecValidationError(report)
        self.spec = model.normalize_rules(spec)
        self.modality = modality
        self.store = store_mod.init_store(
            self.spec,
            initial,
            gc=modality is Modality.PLAIN,
            track=modality is not Modality.PLAIN,
            persist_path=persist_path,
        )
        self.registry = registry or services.ServiceRegistry.interactive(self.spec)
        self.genpk = services.GenpkCounter()
        self._bindings: dict = {}  # (state, action) -> list[Binding]
        self._clock = clock or (lambda: time.time_ns() // 1_000_000)
        self._last_ts = 0

    @classmethod
    def resume(cls, path, *, registry=None, clock=None, append=False) -> "Engine":
        """Rebuild an enactment engine from a persistence file."""
        st = store_mod.replay_store(path)
        eng = cls.__new__(cls)
        eng.spec = st.spec
        eng.modality = Modality.PLAIN if st.gc else Modality.HISTORY
        eng.store = st
        eng.registry = registry or services.ServiceRegistry.interactive(st.spec)
        prior = {
            v
            for t in st.transitions
            if t.label is not None
            for svc, _, v in t.label.results
            if svc == services.GENPK
        }
        eng.genpk = services.GenpkCounter(prior)
        eng._bindings = {}
        eng._clock = clock or (lambda: time.time_ns() // 1_000_000)
        eng._last_ts = max((t.timestamp or 0 for t in st.transitions), default=0)
        if append:
            st._fh = open(path, "ab")
        return eng

    @property
    def current_state(self) -> int:
        return self.store.current

    # - condition evaluation (caeval) -

    def enumerate_bindings(self, s: int, action: str) -> list:
        """Bindings for one action at one state, lexicographically ordered.

        The list is computed once per (state, action) and cached, so marks
        survive later calls.
        """
        if action not in self.spec._actions:
            raise UnknownAction(action)
        key = (s, action)
        if key not in self._bindings:
            rules = self.spec.rules_for(action)
            values: set = set()
            for rule in rules:
                rewritten = self.store.rewrite_query(rule.condition, s)
                answers = query.evaluate_query(rewritten, self.store.encoded_views())
                indices = rule.arg_indices()
                values |= {tuple(row[i] for i in indices) for row in answers}
            self._bindings[key] = [
                Binding(i, action, s, v) for i, v in enumerate(sorted(values), start=1)
            ]
        return self._bindings[key]

    def enabled_actions(self, s: int) -> list:
        """Actions with at least one binding, in declaration order."""
        return [a.name for a in self.spec.actions if self.enumerate_bindings(s, a.name)]

    # - effect evaluation (effeval) -

    def evaluate_effects(self, s: int, g: GroundAction):
        """Ground an action's effects against the pre-state.

        Returns (EffectTemplate, pending invocations). Invocation ids are
        1-based in effect declaration order; every textual invocation term
        gets its own id.
        """
        if g.action not in self.spec._actions:
            raise UnknownAction(g.action)
        action = self.spec.action(g.action)
        if len(g.values) != len(action.params):
            raise TypeMismatch(f"{g.action} takes {len(action.params)} parameters")
        for v, (pname, ptype) in zip(g.values, action.params):
            if not ptype.check(v):
                raise TypeMismatch(f"parameter '{pname}' expects {ptype.value}, got {v!r}")
        env = dict(zip(action.param_names, g.values))
        views = self.store.encoded_views()

        pendings: list = []

        def ground_arg(term):
            if isinstance(term, model.Const):
                return term.value
            return env[term.name]

        def ground_term(term):
            if isinstance(term, model.Invocation):
                pid = len(pendings) + 1
                p = PendingInvocation(pid, term.service, tuple(ground_arg(a) for a in term.args))
                pendings.append(p)
                return Slot(pid)
            return ground_arg(term)

        template = EffectTemplate()
        for eff in action.effects:
            rel = self.spec.relation(eff.relation)
            if isinstance(eff, model.DeleteEffect):
                q = self.store.rewrite_query(_select_all(rel, eff.where), s)
                rows = query.evaluate_query(q, views, env)
                merged = template.deletes.get(eff.relation, frozenset()) | rows
                template.deletes[eff.relation] = frozenset(merged)
                continue
            order = [eff.columns.index(a) for a in rel.attr_names]
            new_rows: list = []
            if isinstance(eff.source, model.SelectQuery):
                q = self.store.rewrite_query(eff.source, s)
                for row in sorted(query.evaluate_query(q, views, env)):
                    new_rows.append(tuple(row[i] for i in order))
            else:
                row = tuple(ground_term(t) for t in eff.source)
                new_rows.append(tuple(row[i] for i in order))
            seen = dict.fromkeys(template.inserts.get(eff.relation, ()))
            for row in new_rows:
                seen.setdefault(row)
            template.inserts[eff.relation] = tuple(seen)
        return template, pendings

    # - commit (effexec) -

    def resolve_results(self, s: int, pendings: Iterable, results: Mapping,
                        genpk: Optional[services.GenpkCounter] = None) -> dict:
        """Value for every pending invocation; genpk is always computed."""
        snapshot = self.store.snapshot(s)
        counter = genpk if genpk is not None else self._genpk_counter()
        resolved = {}
        for p in pendings:
            if isinstance(self.registry.handler_for(p.service), services.BuiltinGenpk):
                resolved[p.invocation_id] = self.registry.invoke(p, snapshot, genpk=counter)
                continue
            try:
                resolved[p.invocation_id] = self.registry.invoke(
                    p, snapshot, supplied=results.get(p.invocation_id)
                )
            except AwaitingInteractiveResult:
                raise MissingInvocationResult(f"no result for {p.signature}") from None
        return resolved

    def _genpk_counter(self) -> services.GenpkCounter:
        # statespace: freshness is per application, so converging paths fold
        if self.modality is Modality.STATESPACE:
            return services.GenpkCounter()
        return self.genpk

    def commit_ground_action(self, s: int, g: GroundAction, results: Optional[Mapping] = None) -> int:
        """Apply one ground action transactionally; returns the new state.

        `results` maps invocation ids to values for services the engine
        cannot resolve itself. The chosen binding is marked even when the
        commit fails on a constraint violation.
        """
        if self.modality is not Modality.STATESPACE and s != self.store.current:
            raise StaleBinding(f"state {s} is not current")
        binding = next(
            (b for b in self.enumerate_bindings(s, g.action) if b.values == g.values),
            None,
        )
        if binding is None:
            raise NoSuchBinding(f"{g.action}{g.values!r} is not enabled at state {s}")
        template, pendings = self.evaluate_effects(s, g)
        resolved = self.resolve_results(s, pendings, results or {})
        binding.marked = True
        delta = self._substitute(template, resolved)
        label = store_mod.ActionLabel(
            g.action,
            g.values,
            tuple((p.service, p.args, resolved[p.invocation_id]) for p in pendings),
        )
        timestamp = self._next_timestamp() if self.modality is Modality.HISTORY else None
        return self.store.apply_delta(s, delta, label, timestamp)

    def _substitute(self, template: EffectTemplate, resolved: Mapping) -> store_mod.Delta:
        inserts = {}
        for rel, rows in template.inserts.items():
            inserts[rel] = {
                tuple(resolved[v.invocation_id] if isinstance(v, Slot) else v for v in row)
                for row in rows
            }
        return store_mod.Delta(deletes=dict(template.deletes), inserts=inserts)

    def _next_timestamp(self) -> int:
        # total order: same-millisecond commits wait for the next tick
        ts = max(self._clock(), self._last_ts + 1)
        self._last_ts = ts
        return ts

    # - scripts -

    def run_script(self, steps: Iterable) -> int:
        """Run script steps from the current state; returns the final state.

        The first failing step aborts with ScriptError carrying its 1-based
        index; the store keeps the last successfully committed state.
        """
        for i, step in enumerate(steps, start=1):
            s = self.store.current
            try:
                g = GroundAction(step.action, step.values)
                _, pendings = self.evaluate_effects(s, g)
                results = {}
                for p in pendings:
                    for svc, args, value in step.results:
                        if svc == p.service and args == p.args:
                            results[p.invocation_id] = value
                            break
                self.commit_ground_action(s, g, results)
            except Exception as e:  # noqa: BLE001 - every failure is the step's
                raise ScriptError(i, e) from e
        return self.store.current


def parse_script(text: str) -> tuple:
    """Parse `ACTION name(v, ...) [WITH svc(args) = result, ...];` lines."""
    p = parser._Parser(parser.tokenize(text))
    steps = []
    try:
        while not p.at("EOF"):
            p.expect("KW", "ACTION")
            name = p.ident("action name")
            p.expect("PUNCT", "(")
            values = []
            if not p.at("PUNCT", ")"):
                values.append(p.value_literal())
                while p.accept("PUNCT", ","):
                    values.append(p.value_literal())
            p.expect("PUNCT", ")")
            results = []
            if p.at("KW", "WITH"):
                p.next()
                while True:
                    svc = p.ident("service name")
                    p.expect("PUNCT", "(")
                    args = []
                    if not p.at("PUNCT", ")"):
                        args.append(p.value_literal())
                        while p.accept("PUNCT", ","):
                            args.append(p.value_literal())
                    p.expect("PUNCT", ")")
                    p.expect("PUNCT", "=")
                    results.append((svc, tuple(args), p.value_literal()))
                    if not p.accept("PUNCT", ","):
                        break
            p.expect("PUNCT", ";")
            steps.append(ScriptStep(name, tuple(values), tuple(results)))
    except parser._Syntax as e:
        raise ParseError([e.diagnostic]) from None
    return tuple(steps)
