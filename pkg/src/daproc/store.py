"""State-relativized relational store.

Committed snapshots are never overwritten. Each relation R is kept as:

  R_raw  - inflationary rows (_rid, payload...) where payload holds the
           attributes outside R's key and outside any foreign-key source.
           The payload projection is a key: equal payloads share one row,
           found by a 64-bit hash with full comparison on collision.
  R_log  - rows (_state, key..., _rid, fk-sources...) keyed by (key, state),
           with foreign keys holding per state.

A snapshot at state s is rebuilt by joining the state-s log rows with raw
on _rid; queries over the original schema can instead be rewritten against
the encoded tables directly (`rewrite_query`). Commits are transactional:
the candidate successor is constraint-checked before anything is written.

A store can persist itself to an append-only file of length-prefixed JSON
records; replaying the file reproduces an identical store.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Optional

from . import model, parser, query
from .errors import (
    ConstraintViolation,
    InvalidDelta,
    ReplayError,
    UnknownRelation,
    UnknownState,
)

Snapshot = dict  # relation name -> frozenset of attribute-ordered tuples

MAGIC = b"DAPROC1\n"


def payload_hash(payload: tuple) -> int:
    data = json.dumps(list(payload), separators=(",", ":"), ensure_ascii=True)
    return int.from_bytes(hashlib.blake2b(data.encode(), digest_size=8).digest(), "big")


def canonical_snapshot(snapshot: Mapping) -> str:
    return json.dumps(
        {rel: sorted(rows) for rel, rows in snapshot.items()},
        sort_keys=True,
        separators=(",", ":"),
        ensure_ascii=True,
    )


def snapshot_digest(snapshot: Mapping) -> str:
    return hashlib.sha256(canonical_snapshot(snapshot).encode()).hexdigest()


def instance_from_json(spec: model.Spec, doc: Mapping) -> Snapshot:
    """Read {"Relation": [{attr: value, ...}, ...]} into a snapshot.

    Rows may list attributes in any order but must cover all of them.
    Unknown relations or attributes raise InvalidDelta.
    """
    if not isinstance(doc, Mapping):
        raise InvalidDelta("instance document must be a JSON object")
    snapshot = {r.name: set() for r in spec.relations}
    for rel_name, rows in doc.items():
        if rel_name not in spec._relations:
            raise InvalidDelta(f"unknown relation '{rel_name}'")
        rel = spec.relation(rel_name)
        if not isinstance(rows, list):
            raise InvalidDelta(f"{rel_name}: rows must be a JSON array")
        for row in rows:
            if not isinstance(row, Mapping):
                raise InvalidDelta(f"{rel_name}: each row must be a JSON object")
            extra = set(row) - set(rel.attr_names)
            if extra:
                raise InvalidDelta(f"{rel_name}: unknown attribute '{sorted(extra)[0]}'")
            missing = [a for a in rel.attr_names if a not in row]
            if missing:
                raise InvalidDelta(f"{rel_name}: row is missing attribute '{missing[0]}'")
            snapshot[rel_name].add(tuple(row[a] for a in rel.attr_names))
    return {rel: frozenset(rows) for rel, rows in snapshot.items()}


@dataclass(frozen=True)
class ActionLabel:
    """What produced a transition: action, binding values, service results."""

    action: str
    binding: tuple = ()
    results: tuple = ()  # of (service, args, value)


@dataclass(frozen=True)
class TransitionRecord:
    from_state: int
    to_state: int
    label: Optional[ActionLabel] = None
    timestamp: Optional[int] = None


@dataclass
class Delta:
    """Tuples to remove and add, per relation, all in original schema."""

    deletes: dict = field(default_factory=dict)
    inserts: dict = field(default_factory=dict)

    def __post_init__(self):
        self.deletes = {r: frozenset(rows) for r, rows in self.deletes.items() if rows}
        self.inserts = {r: frozenset(rows) for r, rows in self.inserts.items() if rows}

    @property
    def empty(self) -> bool:
        return not self.deletes and not self.inserts


def check_instance_types(spec: model.Spec, snapshot: Mapping):
    """Arity/type errors of raw tuples against the schema, as messages."""
    problems = []
    for rel_name, rows in snapshot.items():
        if rel_name not in spec._relations:
            problems.append(f"{rel_name}: unknown relation")
            continue
        rel = spec.relation(rel_name)
        for row in rows:
            if len(row) != len(rel.attrs):
                problems.append(f"{rel_name}: tuple {row!r} has arity {len(row)}, expected {len(rel.attrs)}")
                continue
            for (attr, atype), v in zip(rel.attrs, row):
                if not atype.check(v):
                    problems.append(f"{rel_name}.{attr}: value {v!r} is not {atype.value}")
    return problems


def check_constraints(spec: model.Spec, snapshot: Mapping):
    """Key, domain and foreign-key violations of a snapshot, as messages."""
    violations = []
    for rel in spec.relations:
        rows = snapshot.get(rel.name, frozenset())
        names = rel.attr_names
        key_idx = [names.index(a) for a in rel.key]
        seen = {}
        for row in sorted(rows):
            pk = tuple(row[i] for i in key_idx)
            if pk in seen:
                violations.append(f"{rel.name}: duplicate key {pk!r}")
            seen[pk] = row
        for dom in rel.domains:
            i = names.index(dom.attr)
            for row in sorted(rows):
                if row[i] not in dom.values:
                    violations.append(
                        f"{rel.name}.{dom.attr}: value {row[i]!r} outside domain"
                    )
        for fk in rel.foreign_keys:
            target = spec.relation(fk.target_relation)
            tnames = target.attr_names
            ti = [tnames.index(a) for a in fk.target_attrs]
            referenced = {
                tuple(trow[i] for i in ti)
                for trow in snapshot.get(target.name, frozenset())
            }
            si = [names.index(a) for a in fk.source_attrs]
            for row in sorted(rows):
                src = tuple(row[i] for i in si)
                if src not in referenced:
                    violations.append(
                        f"{rel.name}: {src!r} does not reference any {fk.target_relation} row"
                    )
    return violations


class _RawTable:
    def __init__(self):
        self.rows: dict = {}  # rid -> payload
        self.by_hash: dict = {}  # hash -> [rid, ...]
        self.next_rid = 1

    def intern(self, payload: tuple):
        """(rid, created). Equal payloads always share one row."""
        h = payload_hash(payload)
        for rid in self.by_hash.get(h, ()):
            if self.rows[rid] == payload:
                return rid, False
        rid = self.next_rid
        self.next_rid += 1
        self.rows[rid] = payload
        self.by_hash.setdefault(h, []).append(rid)
        return rid, True

    def restore(self, rid: int, payload: tuple):
        self.rows[rid] = payload
        self.by_hash.setdefault(payload_hash(payload), []).append(rid)
        self.next_rid = max(self.next_rid, rid + 1)


class _Layout:
    """Index arithmetic between a relation's tuples and its raw/log parts."""

    def __init__(self, rel: model.RelationSchema):
        names = rel.attr_names
        self.rel = rel
        self.key_idx = tuple(names.index(a) for a in rel.key)
        self.fk_idx = tuple(names.index(a) for a in rel.fk_source_attrs)
        self.payload_idx = tuple(names.index(a) for a in rel.payload_attrs)
        self.log_side = set(rel.key) | set(rel.fk_source_attrs)

    def split(self, row: tuple):
        return (
            tuple(row[i] for i in self.key_idx),
            tuple(row[i] for i in self.fk_idx),
            tuple(row[i] for i in self.payload_idx),
        )

    def join(self, pk: tuple, fk: tuple, payload: tuple) -> tuple:
        by_name = {}
        by_name.update(zip(self.rel.key, pk))
        by_name.update(zip(self.rel.fk_source_attrs, fk))
        by_name.update(zip(self.rel.payload_attrs, payload))
        return tuple(by_name[a] for a in self.rel.attr_names)


class EncodedStore:
    """Raw/log encoded store over a validated spec."""

    def __init__(self, spec: model.Spec, *, gc: bool = False, track: bool = True,
                 persist_path=None):
        self.spec = spec
        self.gc = gc
        self.track = track
        self.layouts = {r.name: _Layout(r) for r in spec.relations}
        self.raw = {r.name: _RawTable() for r in spec.relations}
        self.log = {r.name: {} for r in spec.relations}  # state -> set of (pk, rid, fk)
        self.states: set = set()
        self.transitions: list = []
        self.current = 0
        self._next_state = 1
        self._version = 0
        self._views_cache = None
        self._fh = None
        if persist_path is not None:
            self._fh = open(persist_path, "wb")
            self._write(
                {
                    "type": "header",
                    "version": 1,
                    "gc": gc,
                    "track": track,
                    "digest": hashlib.sha256(parser.render_spec(spec).encode()).hexdigest(),
                    "spec": parser.render_spec(spec),
                }
            )

    # - persistence plumbing -

    def _write(self, obj):
        if self._fh is None:
            return
        if self._fh.tell() == 0:
            self._fh.write(MAGIC)
        data = json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True).encode()
        self._fh.write(struct.pack(">I", len(data)) + data)
        self._fh.flush()

    def close(self):
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    # - reads -

    def _check_state(self, s: int):
        if s not in self.states:
            raise UnknownState(f"state {s} does not exist (or was collected)")

    def reconstruct(self, rel_name: str, s: int) -> frozenset:
        """The original-schema content of one relation at state s."""
        if rel_name not in self.layouts:
            raise UnknownRelation(rel_name)
        self._check_state(s)
        layout = self.layouts[rel_name]
        raw = self.raw[rel_name]
        out = set()
        for pk, rid, fk in self.log[rel_name].get(s, ()):
            out.add(layout.join(pk, fk, raw.rows[rid]))
        return frozenset(out)

    def snapshot(self, s: int) -> Snapshot:
        self._check_state(s)
        return {r.name: self.reconstruct(r.name, s) for r in self.spec.relations}

    def encoded_views(self) -> dict:
        """The raw/log tables as query.RelView instances (all states)."""
        if self._views_cache is not None and self._views_cache[0] == self._version:
            return self._views_cache[1]
        views = {}
        for rel in self.spec.relations:
            name = rel.name
            views[f"{name}_raw"] = query.RelView(
                ("_rid",) + rel.payload_attrs,
                frozenset((rid,) + payload for rid, payload in self.raw[name].rows.items()),
            )
            log_rows = set()
            for s, rows in self.log[name].items():
                for pk, rid, fk in rows:
                    log_rows.add((s,) + pk + (rid,) + fk)
            views[f"{name}_log"] = query.RelView(
                ("_state",) + rel.key + ("_rid",) + rel.fk_source_attrs,
                frozenset(log_rows),
            )
        self._views_cache = (self._version, views)
        return views

    # - query rewriting -

    def rewrite_query(self, q: model.SelectQuery, s: int) -> model.SelectQuery:
        """Rewrite an original-schema query to run on the encoded tables,
        relativized to state s. Evaluating the result over `encoded_views()`
        equals evaluating q over the reconstructed state-s snapshot."""
        self._check_state(s)
        return rewrite_query(self.spec, q, s)

    # - writes -

    def apply_delta(self, s: int, delta: Delta, label=None, timestamp=None) -> int:
        """Commit the delta against state s, returning the new state id.

        The store is untouched when the candidate successor violates
        constraints (ConstraintViolation) or the delta is ill-typed
        (InvalidDelta).
        """
        self._check_state(s)
        for part in (delta.deletes, delta.inserts):
            problems = check_instance_types(self.spec, part)
            if problems:
                raise InvalidDelta("; ".join(problems))
        candidate = {}
        for rel in self.spec.relations:
            cur = self.reconstruct(rel.name, s)
            cur = cur - delta.deletes.get(rel.name, frozenset())
            cur = cur | delta.inserts.get(rel.name, frozenset())
            candidate[rel.name] = frozenset(cur)
        violations = check_constraints(self.spec, candidate)
        if violations:
            raise ConstraintViolation(violations)
        s2 = self._encode_state(candidate)
        if self.track:
            rec = TransitionRecord(s, s2, label, timestamp)
            self.transitions.append(rec)
            self._write(_transition_record(rec))
        if self.gc:
            for old in list(self.states):
                if old != s2:
                    self.states.discard(old)
                    for rel in self.spec.relations:
                        self.log[rel.name].pop(old, None)
        self.current = s2
        self._version += 1
        return s2

    def _encode_state(self, candidate: Mapping) -> int:
        s2 = self._next_state
        self._next_state += 1
        for rel in self.spec.relations:
            layout = self.layouts[rel.name]
            raw = self.raw[rel.name]
            bucket = self.log[rel.name].setdefault(s2, set())
            for row in sorted(candidate[rel.name]):
                pk, fk, payload = layout.split(row)
                rid, created = raw.intern(payload)
                if created:
                    self._write(
                        {"type": "raw", "rel": rel.name, "rid": rid, "payload": list(payload)}
                    )
                bucket.add((pk, rid, fk))
                self._write(
                    {
                        "type": "log",
                        "rel": rel.name,
                        "state": s2,
                        "pk": list(pk),
                        "rid": rid,
                        "fk": list(fk),
                    }
                )
        self.states.add(s2)
        self._write({"type": "commit", "state": s2})
        return s2

    def add_transition(self, rec: TransitionRecord):
        """Record an edge to an already-known state (state-space folding)."""
        self._check_state(rec.from_state)
        self._check_state(rec.to_state)
        self.transitions.append(rec)
        self._write(_transition_record(rec))
        self._version += 1


def init_store(spec: model.Spec, initial: Mapping, *, gc: bool = False,
               track: bool = True, persist_path=None) -> EncodedStore:
    """Create a store whose state 1 holds the initial instance.

    Raises ConstraintViolation when the instance is ill-typed or breaks a
    schema constraint.
    """
    problems = check_instance_types(spec, initial)
    if problems:
        raise ConstraintViolation(problems)
    full = {r.name: frozenset(initial.get(r.name, ())) for r in spec.relations}
    violations = check_constraints(spec, full)
    if violations:
        raise ConstraintViolation(violations)
    store = EncodedStore(spec, gc=gc, track=track, persist_path=persist_path)
    store._encode_state(full)
    store.current = 1
    store._version += 1
    return store


def rewrite_query(spec: model.Spec, q: model.SelectQuery, s: int) -> model.SelectQuery:
    """State-relativized rewriting over the raw/log tables.

    Each FROM item R a becomes R_log a#log (filtered to _state = s), joined
    with R_raw a#raw on _rid only when some referenced attribute lives in
    the raw side. Attribute references move to the side that stores them.
    """
    branches = []
    for branch in q.branches:
        scope = model.Scope.for_branch(spec, branch)
        rels = [spec.relation(fi.relation) for fi in branch.from_items]
        raw_needed = [False] * len(branch.from_items)

        def moved(ref: model.AttrRef) -> model.AttrRef:
            i, _, _ = scope.resolve(ref)
            alias = branch.from_items[i].alias
            if ref.name in rels[i].key or ref.name in rels[i].fk_source_attrs:
                return model.AttrRef(f"{alias}#log", ref.name)
            raw_needed[i] = True
            return model.AttrRef(f"{alias}#raw", ref.name)

        def move_operand(op):
            return moved(op) if isinstance(op, model.AttrRef) else op

        def move_condition(cond):
            if cond is None:
                return None
            if isinstance(cond, model.Comparison):
                return model.Comparison(cond.op, move_operand(cond.left), move_operand(cond.right))
            if isinstance(cond, model.And):
                return model.And(tuple(move_condition(c) for c in cond.items))
            if isinstance(cond, model.Or):
                return model.Or(tuple(move_condition(c) for c in cond.items))
            if isinstance(cond, model.Not):
                return model.Not(move_condition(cond.item))
            raise TypeError(f"bad condition {cond!r}")

        projection = tuple(move_operand(p) for p in branch.projection)
        where = move_condition(branch.where)

        from_items = []
        conjuncts = []
        for i, fi in enumerate(branch.from_items):
            log_alias = f"{fi.alias}#log"
            from_items.append(model.FromItem(f"{fi.relation}_log", log_alias))
            conjuncts.append(
                model.Comparison("=", model.AttrRef(log_alias, "_state"), model.Const(s))
            )
            if raw_needed[i]:
                raw_alias = f"{fi.alias}#raw"
                from_items.append(model.FromItem(f"{fi.relation}_raw", raw_alias))
                conjuncts.append(
                    model.Comparison(
                        "=",
                        model.AttrRef(log_alias, "_rid"),
                        model.AttrRef(raw_alias, "_rid"),
                    )
                )
        if where is not None:
            conjuncts.append(where)
        new_where = conjuncts[0] if len(conjuncts) == 1 else model.And(tuple(conjuncts))
        branches.append(model.SelectBranch(projection, tuple(from_items), new_where))
    return model.SelectQuery(tuple(branches))


# --- persistence replay -------------------------------------------------------


def _transition_record(rec: TransitionRecord) -> dict:
    label = rec.label
    return {
        "type": "transition",
        "from": rec.from_state,
        "to": rec.to_state,
        "action": label.action if label else None,
        "binding": list(label.binding) if label else [],
        "results": [[svc, list(args), v] for svc, args, v in label.results] if label else [],
        "ts": rec.timestamp,
    }


def read_records(path) -> list:
    """All JSON records of a persistence file, in order."""
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC):
        raise ReplayError("not a store file (bad magic)")
    records = []
    i = len(MAGIC)
    while i < len(data):
        if i + 4 > len(data):
            raise ReplayError("truncated record length")
        (length,) = struct.unpack(">I", data[i : i + 4])
        i += 4
        if i + length > len(data):
            raise ReplayError("truncated record")
        try:
            records.append(json.loads(data[i : i + length]))
        except json.JSONDecodeError as e:
            raise ReplayError(f"bad record: {e}") from None
        i += length
    return records


def replay_store(path) -> EncodedStore:
    """Rebuild a store from its persistence file."""
    records = read_records(path)
    if not records or records[0].get("type") != "header":
        raise ReplayError("missing header record")
    header = records[0]
    spec_text = header.get("spec", "")
    if hashlib.sha256(spec_text.encode()).hexdigest() != header.get("digest"):
        raise ReplayError("spec digest mismatch")
    spec = parser.parse_spec(spec_text)
    store = EncodedStore(spec, gc=header["gc"], track=header["track"])
    for rec in records[1:]:
        kind = rec.get("type")
        if kind == "raw":
            if rec["rel"] not in store.raw:
                raise ReplayError(f"unknown relation {rec['rel']}")
            store.raw[rec["rel"]].restore(rec["rid"], tuple(rec["payload"]))
        elif kind == "log":
            if rec["rel"] not in store.log:
                raise ReplayError(f"unknown relation {rec['rel']}")
            store.log[rec["rel"]].setdefault(rec["state"], set()).add(
                (tuple(rec["pk"]), rec["rid"], tuple(rec["fk"]))
            )
        elif kind == "commit":
            s = rec["state"]
            store.states.add(s)
            store.current = s
            store._next_state = max(store._next_state, s + 1)
            if store.gc:
                for old in list(store.states):
                    if old != s:
                        store.states.discard(old)
                        for rel in store.spec.relations:
                            store.log[rel.name].pop(old, None)
        elif kind == "transition":
            label = None
            if rec.get("action") is not None:
                label = ActionLabel(
                    rec["action"],
                    tuple(rec.get("binding", ())),
                    tuple((svc, tuple(args), v) for svc, args, v in rec.get("results", ())),
                )
            store.transitions.append(
                TransitionRecord(rec["from"], rec["to"], label, rec.get("ts"))
            )
        else:
            raise ReplayError(f"unknown record type {kind!r}")
    store._version += 1
    return store
