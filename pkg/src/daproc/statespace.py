"""Finite abstract state spaces.

Breadth-first unfolding of a process under mock services: every enabled
binding is applied with every combination of representative service
results; successor snapshots that already exist (by canonical equality)
fold back onto their state id. Constraint-violating successors are pruned.
The result is a graph-shaped transition system suitable for reachability
and deadlock questions.
"""

from __future__ import annotations

import itertools
import json
from collections import deque
from dataclasses import dataclass, field
from typing import Mapping, Optional

from . import model, parser, query, services, store as store_mod
from .engine import Engine, GroundAction, Modality
from .errors import Inconclusive, ReplayError, SpecValidationError
from .store import ActionLabel, TransitionRecord, canonical_snapshot, snapshot_digest


@dataclass
class TransitionSystem:
    spec: model.Spec
    states: dict  # state id -> snapshot
    edges: list = field(default_factory=list)  # of TransitionRecord
    initial: int = 1
    complete: bool = True

    @property
    def digests(self) -> dict:
        return {sid: snapshot_digest(snap) for sid, snap in self.states.items()}


def build(spec: model.Spec, initial: Mapping, config: Optional[Mapping] = None, *,
          registry: Optional[services.ServiceRegistry] = None,
          max_states: int = 10000, persist_path=None) -> TransitionSystem:
    """Unfold the state space from the initial instance.

    `config` is a mock-service mapping (see services.load_mock_config);
    alternatively pass a prepared registry. Stops with complete=False when
    one more state would exceed max_states.
    """
    eng = Engine(
        spec,
        initial,
        modality=Modality.STATESPACE,
        registry=registry,
        persist_path=persist_path,
    )
    if registry is None:
        eng.registry = services.ServiceRegistry.mocked(eng.spec, config or {})
    spec_n = eng.spec

    snapshots = {1: eng.store.snapshot(1)}
    by_canon = {canonical_snapshot(snapshots[1]): 1}
    queue = deque([1])
    seen_edges = set()
    complete = True

    while queue and complete:
        s = queue.popleft()
        pre = snapshots[s]
        for action in spec_n.actions:
            if not complete:
                break
            for binding in eng.enumerate_bindings(s, action.name):
                if not complete:
                    break
                g = GroundAction(action.name, binding.values)
                template, pendings = eng.evaluate_effects(s, g)
                choice_lists = []
                for p in pendings:
                    handler = eng.registry.handler_for(p.service)
                    if isinstance(handler, services.BuiltinGenpk):
                        choice_lists.append([None])  # resolved per application
                    else:
                        choice_lists.append(eng.registry.representative_results(p, pre))
                for combo in itertools.product(*choice_lists):
                    counter = services.GenpkCounter()
                    results = {}
                    for p, value in zip(pendings, combo):
                        if value is None:
                            value = counter.fresh(spec_n, pre)
                        results[p.invocation_id] = value
                    delta = eng._substitute(template, results)
                    candidate = {
                        rel.name: frozenset(
                            (pre[rel.name] - delta.deletes.get(rel.name, frozenset()))
                            | delta.inserts.get(rel.name, frozenset())
                        )
                        for rel in spec_n.relations
                    }
                    if store_mod.check_constraints(spec_n, candidate):
                        continue  # pruned: this result combination is impossible
                    label = ActionLabel(
                        g.action,
                        g.values,
                        tuple((p.service, p.args, results[p.invocation_id]) for p in pendings),
                    )
                    key = canonical_snapshot(candidate)
                    target = by_canon.get(key)
                    if target is None:
                        if len(snapshots) >= max_states:
                            complete = False
                            break
                        target = eng.store.apply_delta(s, delta, label)
                        snapshots[target] = candidate
                        by_canon[key] = target
                        queue.append(target)
                        seen_edges.add((s, target, label))
                    elif (s, target, label) not in seen_edges:
                        eng.store.add_transition(TransitionRecord(s, target, label))
                        seen_edges.add((s, target, label))
    eng.store.close()
    return TransitionSystem(spec_n, snapshots, list(eng.store.transitions), 1, complete)


def _check_goal(ts: TransitionSystem, goal: model.SelectQuery):
    v = model._Validator(ts.spec)
    v.check_query(goal, {}, "goal", allow_params=False)
    if v.report.errors:
        raise SpecValidationError(v.report)


def check_reachable(ts: TransitionSystem, goal: model.SelectQuery):
    """Shortest path (list of state ids) to a state where the goal query
    has an answer; None when provably unreachable; Inconclusive when the
    space is incomplete and no witness exists."""
    _check_goal(ts, goal)
    succ: dict = {}
    for e in ts.edges:
        succ.setdefault(e.from_state, [])
        if e.to_state not in succ[e.from_state]:
            succ[e.from_state].append(e.to_state)

    def holds(sid: int) -> bool:
        instance = query.instance_of_snapshot(ts.spec, ts.states[sid])
        return bool(query.evaluate_query(goal, instance))

    parent = {ts.initial: None}
    frontier = deque([ts.initial])
    while frontier:
        sid = frontier.popleft()
        if holds(sid):
            path = []
            at: Optional[int] = sid
            while at is not None:
                path.append(at)
                at = parent[at]
            return list(reversed(path))
        for nxt in succ.get(sid, ()):
            if nxt not in parent:
                parent[nxt] = sid
                frontier.append(nxt)
    if ts.complete:
        return None
    raise Inconclusive("goal not found in an incomplete state space")


def find_deadlocks(ts: TransitionSystem) -> list:
    """States with no outgoing transition. Raises Inconclusive when the
    space is incomplete (missing successors would be indistinguishable
    from real deadlocks)."""
    if not ts.complete:
        raise Inconclusive("deadlocks are undecidable on an incomplete state space")
    has_out = {e.from_state for e in ts.edges}
    return sorted(sid for sid in ts.states if sid not in has_out)


# --- export / import ----------------------------------------------------------


def _label_text(label: Optional[ActionLabel]) -> str:
    if label is None:
        return ""
    text = f"{label.action}({','.join(str(v) for v in label.binding)})"
    if label.results:
        parts = [f"{svc}({','.join(str(a) for a in args)})={value}" for svc, args, value in label.results]
        text += " / " + ", ".join(parts)
    return text


def _dot_quote(text: str) -> str:
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"') + '"'


def export_dot(ts: TransitionSystem) -> str:
    lines = ["digraph statespace {", "  rankdir=LR;"]
    deadlocked = set()
    if ts.complete:
        deadlocked = set(find_deadlocks(ts))
    for sid in sorted(ts.states):
        shape = ", shape=doublecircle" if sid in deadlocked else ""
        lines.append(f"  {sid} [label={_dot_quote(str(sid))}{shape}];")
    for e in sorted(ts.edges, key=lambda e: (e.from_state, e.to_state, _label_text(e.label))):
        lines.append(
            f"  {e.from_state} -> {e.to_state} [label={_dot_quote(_label_text(e.label))}];"
        )
    lines.append("}")
    return "\n".join(lines) + "\n"


def export_json(ts: TransitionSystem) -> str:
    doc = {
        "spec": parser.render_spec(ts.spec),
        "initial": ts.initial,
        "complete": ts.complete,
        "states": [
            {
                "id": sid,
                "digest": snapshot_digest(ts.states[sid]),
                "relations": {rel: sorted(rows) for rel, rows in sorted(ts.states[sid].items())},
            }
            for sid in sorted(ts.states)
        ],
        "edges": [
            {
                "from": e.from_state,
                "to": e.to_state,
                "action": e.label.action if e.label else None,
                "binding": list(e.label.binding) if e.label else [],
                "results": [[svc, list(args), v] for svc, args, v in e.label.results]
                if e.label
                else [],
            }
            for e in ts.edges
        ],
    }
    return json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def export(ts: TransitionSystem, fmt: str = "json") -> str:
    if fmt == "dot":
        return export_dot(ts)
    if fmt == "json":
        return export_json(ts)
    raise ValueError(f"unknown export format {fmt!r}")


def import_json(text: str) -> TransitionSystem:
    """Inverse of export_json: import_json(export_json(ts)) == ts."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ReplayError(f"bad state-space JSON: {e}") from None
    try:
        spec = parser.parse_spec(doc["spec"])
        states = {
            entry["id"]: {
                rel: frozenset(tuple(row) for row in rows)
                for rel, rows in entry["relations"].items()
            }
            for entry in doc["states"]
        }
        edges = [
            TransitionRecord(
                e["from"],
                e["to"],
                ActionLabel(
                    e["action"],
                    tuple(e["binding"]),
                    tuple((svc, tuple(args), v) for svc, args, v in e["results"]),
                )
                if e.get("action") is not None
                else None,
            )
            for e in doc["edges"]
        ]
        ts = TransitionSystem(spec, states, edges, doc["initial"], doc["complete"])
    except (KeyError, TypeError) as e:
        raise ReplayError(f"bad state-space JSON: {e}") from None
    for entry in doc["states"]:
        if snapshot_digest(ts.states[entry["id"]]) != entry["digest"]:
            raise ReplayError(f"state {entry['id']}: digest mismatch")
    return ts
