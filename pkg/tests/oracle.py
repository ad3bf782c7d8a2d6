"""Brute-force reference interpreter used to derive and freeze expected values.

Deliberately independent of the package runtime: no imports from
daproc.query, daproc.store, daproc.engine, daproc.services or
daproc.statespace. Everything is recomputed by nested loops over plain
snapshots (relation name -> frozenset of tuples); only the AST types from
daproc.model are shared, since they are the language itself.
"""

from __future__ import annotations

import itertools
from collections import deque

from daproc import model

FRESH_PREFIX = "ν"


# --- query evaluation by nested loops ----------------------------------------


def _operand_value(op, scope, rows, env):
    if isinstance(op, model.Const):
        return op.value
    if isinstance(op, model.Param):
        return env[op.name]
    for (alias, attrs), row in zip(scope, rows):
        if op.qualifier is not None:
            if alias == op.qualifier:
                return row[attrs.index(op.name)]
        elif op.name in attrs:
            return row[attrs.index(op.name)]
    raise KeyError(op)


def _holds(cond, scope, rows, env) -> bool:
    if cond is None:
        return True
    if isinstance(cond, model.Comparison):
        left = _operand_value(cond.left, scope, rows, env)
        right = _operand_value(cond.right, scope, rows, env)
        return {
            "=": left == right,
            "<>": left != right,
            "<": left < right,
            "<=": left <= right,
            ">": left > right,
            ">=": left >= right,
        }[cond.op]
    if isinstance(cond, model.And):
        return all(_holds(c, scope, rows, env) for c in cond.items)
    if isinstance(cond, model.Or):
        return any(_holds(c, scope, rows, env) for c in cond.items)
    if isinstance(cond, model.Not):
        return not _holds(cond.item, scope, rows, env)
    raise TypeError(cond)


def eval_query(spec, snapshot, q, env=None) -> set:
    env = env or {}
    out = set()
    for branch in q.branches:
        scope = [
            (fi.alias, spec.relation(fi.relation).attr_names) for fi in branch.from_items
        ]
        pools = [sorted(snapshot.get(fi.relation, ())) for fi in branch.from_items]
        for rows in itertools.product(*pools):
            if _holds(branch.where, scope, rows, env):
                out.add(
                    tuple(_operand_value(p, scope, rows, env) for p in branch.projection)
                )
    return out


# --- constraints ---------------------------------------------------------------


def constraints_ok(spec, snapshot) -> bool:
    for rel in spec.relations:
        rows = snapshot.get(rel.name, frozenset())
        names = rel.attr_names
        keys = [tuple(row[names.index(a)] for a in rel.key) for row in rows]
        if len(keys) != len(set(keys)):
            return False
        for dom in rel.domains:
            i = names.index(dom.attr)
            if any(row[i] not in dom.values for row in rows):
                return False
        for fk in rel.foreign_keys:
            target = spec.relation(fk.target_relation)
            tnames = target.attr_names
            have = {
                tuple(trow[tnames.index(a)] for a in fk.target_attrs)
                for trow in snapshot.get(fk.target_relation, frozenset())
            }
            for row in rows:
                src = tuple(row[names.index(a)] for a in fk.source_attrs)
                if src not in have:
                    return False
    return True


# --- bindings -------------------------------------------------------------------


def action_bindings(spec, snapshot, action_name) -> list:
    """Distinct arg tuples over every rule of the action, sorted."""
    values = set()
    for rule in spec.rules:
        if rule.action != action_name:
            continue
        first = rule.condition.branches[0]
        names = [p.name for p in first.projection]
        idx = [names.index(a) for a in rule.arg_attrs]
        for row in eval_query(spec, snapshot, rule.condition):
            values.add(tuple(row[i] for i in idx))
    return sorted(values)


# --- effects and services --------------------------------------------------------


def ground_invocations(spec, action, values) -> list:
    """(service, args) for every invocation term, in declaration order."""
    env = dict(zip(action.param_names, values))
    out = []
    for eff in action.effects:
        if isinstance(eff, model.InsertEffect) and not isinstance(eff.source, model.SelectQuery):
            for term in eff.source:
                if isinstance(term, model.Invocation):
                    args = tuple(
                        a.value if isinstance(a, model.Const) else env[a.name]
                        for a in term.args
                    )
                    out.append((term.service, args))
    return out


def apply_action(spec, snapshot, action_name, values, results):
    """Successor snapshot, or None when constraints reject it.

    `results` lists one value per invocation term, in declaration order.
    """
    action = spec.action(action_name)
    env = dict(zip(action.param_names, values))
    deletes = {r.name: set() for r in spec.relations}
    inserts = {r.name: set() for r in spec.relations}
    k = 0
    for eff in action.effects:
        rel = spec.relation(eff.relation)
        if isinstance(eff, model.DeleteEffect):
            scope = [(rel.name, rel.attr_names)]
            for row in snapshot.get(rel.name, frozenset()):
                if _holds(eff.where, scope, (row,), env):
                    deletes[rel.name].add(row)
            continue
        order = [eff.columns.index(a) for a in rel.attr_names]
        if isinstance(eff.source, model.SelectQuery):
            for row in eval_query(spec, snapshot, eff.source, env):
                inserts[rel.name].add(tuple(row[i] for i in order))
            continue
        row = []
        for term in eff.source:
            if isinstance(term, model.Invocation):
                row.append(results[k])
                k += 1
            elif isinstance(term, model.Const):
                row.append(term.value)
            else:
                row.append(env[term.name])
        inserts[rel.name].add(tuple(row[i] for i in order))
    successor = {
        r.name: frozenset((snapshot.get(r.name, frozenset()) - deletes[r.name]) | inserts[r.name])
        for r in spec.relations
    }
    if not constraints_ok(spec, successor):
        return None
    return successor


def genpk_fresh(spec, snapshot, prior) -> int:
    used = set(prior)
    for rel in spec.relations:
        names = rel.attr_names
        for row in snapshot.get(rel.name, frozenset()):
            for a in rel.key:
                v = row[names.index(a)]
                if isinstance(v, int) and not isinstance(v, bool):
                    used.add(v)
    return max(used, default=0) + 1


def _spec_constants(spec) -> set:
    out = set()

    def operand(op):
        if isinstance(op, model.Const):
            out.add(op.value)

    def cond(c):
        if c is None:
            return
        if isinstance(c, model.Comparison):
            operand(c.left)
            operand(c.right)
        elif isinstance(c, (model.And, model.Or)):
            for item in c.items:
                cond(item)
        else:
            cond(c.item)

    def select(q):
        for b in q.branches:
            for p in b.projection:
                operand(p)
            cond(b.where)

    for rule in spec.rules:
        select(rule.condition)
    for action in spec.actions:
        for eff in action.effects:
            if isinstance(eff, model.DeleteEffect):
                cond(eff.where)
            elif isinstance(eff.source, model.SelectQuery):
                select(eff.source)
            else:
                for term in eff.source:
                    operand(term)
                    if isinstance(term, model.Invocation):
                        for a in term.args:
                            operand(a)
    return out


def representatives(spec, snapshot, service_name, config) -> list:
    """Representative results of a mocked service at a snapshot."""
    sig = spec.service(service_name)
    entry = config[service_name]
    if entry.get("mode") == "enumerated":
        return list(entry["values"])
    wanted = sig.return_type
    domain = {v for v in _spec_constants(spec) if wanted.check(v)}
    for rows in snapshot.values():
        for row in rows:
            for v in row:
                if wanted.check(v):
                    domain.add(v)
    seed = entry.get("seed", 0)
    if wanted is model.AttrType.INT:
        fresh = seed
        while fresh in domain:
            fresh += 1
    else:
        i = seed
        while f"{FRESH_PREFIX}{i}" in domain:
            i += 1
        fresh = f"{FRESH_PREFIX}{i}"
    return sorted(domain) + [fresh]


# --- state space -----------------------------------------------------------------


def canon(snapshot) -> tuple:
    return tuple(sorted((rel, tuple(sorted(rows))) for rel, rows in snapshot.items()))


def build_space(spec, initial, config, max_states=10000):
    """BFS unfolding; returns (snapshots by id, edge set, complete).

    Edges are (from id, to id, action, binding values, result values).
    """
    first = {r.name: frozenset(initial.get(r.name, ())) for r in spec.relations}
    assert constraints_ok(spec, first), "initial instance violates constraints"
    snapshots = {1: first}
    ids = {canon(first): 1}
    queue = deque([1])
    edges = set()
    complete = True
    while queue and complete:
        s = queue.popleft()
        snap = snapshots[s]
        for action in spec.actions:
            if not complete:
                break
            for values in action_bindings(spec, snap, action.name):
                if not complete:
                    break
                invocations = ground_invocations(spec, action, values)
                pools = []
                for svc, args in invocations:
                    if svc == "genpk":
                        pools.append([None])
                    else:
                        pools.append(representatives(spec, snap, svc, config))
                for combo in itertools.product(*pools):
                    prior = set()
                    results = []
                    for value in combo:
                        if value is None:
                            value = genpk_fresh(spec, snap, prior)
                            prior.add(value)
                        results.append(value)
                    successor = apply_action(spec, snap, action.name, values, results)
                    if successor is None:
                        continue
                    key = canon(successor)
                    target = ids.get(key)
                    if target is None:
                        if len(snapshots) >= max_states:
                            complete = False
                            break
                        target = len(snapshots) + 1
                        snapshots[target] = successor
                        ids[key] = target
                        queue.append(target)
                    edges.add((s, target, action.name, values, tuple(results)))
    return snapshots, edges, complete


def deadlock_states(spec, snapshots, edges) -> list:
    has_out = {e[0] for e in edges}
    return sorted(sid for sid in snapshots if sid not in has_out)
