"""Set-semantics evaluation of SELECT queries over named tuple sets.

The evaluator is deliberately schema-light: it works on an *instance*, a
mapping from relation name to `RelView` (column names plus a set of rows).
The same code therefore evaluates queries over original-schema snapshots and
over the encoded raw/log tables produced by `store.rewrite_query`.
"""

from __future__ import annotations

import itertools
import operator
from dataclasses import dataclass
from typing import Callable, Mapping, Optional

from . import model
from .errors import UnknownRelation

_OPS: Mapping[str, Callable] = {
    "=": operator.eq,
    "<>": operator.ne,
    "<": operator.lt,
    "<=": operator.le,
    ">": operator.gt,
    ">=": operator.ge,
}


@dataclass(frozen=True)
class RelView:
    """A named relation as seen by the evaluator."""

    attrs: tuple
    rows: frozenset


def instance_of_snapshot(spec: model.Spec, snapshot: Mapping) -> dict:
    """Expose a snapshot (relation name -> set of tuples) as RelViews."""
    return {
        r.name: RelView(r.attr_names, frozenset(snapshot.get(r.name, ())))
        for r in spec.relations
    }


def _scope_for(branch: model.SelectBranch, instance: Mapping) -> model.Scope:
    items = []
    for fi in branch.from_items:
        if fi.relation not in instance:
            raise UnknownRelation(fi.relation)
        view = instance[fi.relation]
        items.append((fi.alias, view.attrs, (None,) * len(view.attrs)))
    return model.Scope(items)


def _compile_operand(op, scope: model.Scope):
    if isinstance(op, model.AttrRef):
        i, j, _ = scope.resolve(op)
        return lambda rows, env: rows[i][j]
    if isinstance(op, model.Const):
        v = op.value
        return lambda rows, env: v
    if isinstance(op, model.Param):
        name = op.name
        return lambda rows, env: env[name]
    raise TypeError(f"bad operand {op!r}")


def _compile_condition(cond, scope: model.Scope):
    if cond is None:
        return lambda rows, env: True
    if isinstance(cond, model.Comparison):
        fn = _OPS[cond.op]
        left = _compile_operand(cond.left, scope)
        right = _compile_operand(cond.right, scope)
        return lambda rows, env: fn(left(rows, env), right(rows, env))
    if isinstance(cond, model.And):
        parts = [_compile_condition(c, scope) for c in cond.items]
        return lambda rows, env: all(p(rows, env) for p in parts)
    if isinstance(cond, model.Or):
        parts = [_compile_condition(c, scope) for c in cond.items]
        return lambda rows, env: any(p(rows, env) for p in parts)
    if isinstance(cond, model.Not):
        inner = _compile_condition(cond.item, scope)
        return lambda rows, env: not inner(rows, env)
    raise TypeError(f"bad condition {cond!r}")


def _conjuncts(cond) -> list:
    if cond is None:
        return []
    if isinstance(cond, model.And):
        out = []
        for item in cond.items:
            out.extend(_conjuncts(item))
        return out
    return [cond]


def _aliases_used(cond, scope: model.Scope) -> set:
    out: set = set()

    def from_operand(op):
        if isinstance(op, model.AttrRef):
            out.add(scope.resolve(op)[0])

    for cmp_ in model.walk_conditions(cond):
        from_operand(cmp_.left)
        from_operand(cmp_.right)
    return out


def evaluate_query(query: model.SelectQuery, instance: Mapping, env: Optional[Mapping] = None) -> set:
    """All distinct projected tuples of the query on the instance.

    `env` supplies parameter values; queries reaching evaluation must
    already be resolved and type-correct (see model.validate_spec).

    Conjuncts touching a single FROM item are applied before the cartesian
    product; rewritten queries rely on this to stay cheap, since their
    per-item `_state = s` filters cut the encoded tables down to one state.
    """
    env = env or {}
    out: set = set()
    for branch in query.branches:
        scope = _scope_for(branch, instance)
        n = len(branch.from_items)
        gates = []  # conjuncts with no attribute refs
        per_item: dict = {}  # item index -> [compiled tests]
        residual = []
        for cond in _conjuncts(branch.where):
            used = _aliases_used(cond, scope)
            compiled = _compile_condition(cond, scope)
            if not used:
                gates.append(compiled)
            elif len(used) == 1:
                per_item.setdefault(next(iter(used)), []).append(compiled)
            else:
                residual.append(compiled)
        if not all(g((), env) for g in gates):
            continue
        pools = []
        for i, fi in enumerate(branch.from_items):
            rows = instance[fi.relation].rows
            tests = per_item.get(i)
            if tests:
                probe: list = [None] * n
                kept = []
                for row in rows:
                    probe[i] = row
                    if all(t(probe, env) for t in tests):
                        kept.append(row)
                rows = kept
            pools.append(rows)
        project = [_compile_operand(item, scope) for item in branch.projection]
        for rows in itertools.product(*pools):
            if all(t(rows, env) for t in residual):
                out.add(tuple(p(rows, env) for p in project))
    return out


def rows_matching(view: RelView, alias: str, cond, env: Optional[Mapping] = None) -> set:
    """Rows of a single relation satisfying a condition (deletion targets)."""
    env = env or {}
    scope = model.Scope([(alias, view.attrs, (None,) * len(view.attrs))])
    test = _compile_condition(cond, scope)
    return {row for row in view.rows if test((row,), env)}
