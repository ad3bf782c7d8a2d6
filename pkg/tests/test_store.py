import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from daproc import parser, query, store
from daproc.errors import ConstraintViolation, InvalidDelta, UnknownRelation, UnknownState
from daproc.store import Delta


@pytest.fixture
def travel_store(travel_spec, single_request):
    return store.init_store(travel_spec, single_request, gc=False, track=True)


def advance_trace(st_):
    """Replays the reviewed-trip trace: submit, accept at 900, cost 700."""
    s2 = st_.apply_delta(
        1,
        Delta(
            deletes={"Pending": {(2, "Kriss", "Paris")}},
            inserts={"CurrReq": {(2, "Kriss", "Paris", "submitd")}},
        ),
    )
    s3 = st_.apply_delta(
        s2,
        Delta(
            deletes={"CurrReq": {(2, "Kriss", "Paris", "submitd")}},
            inserts={
                "CurrReq": {(2, "Kriss", "Paris", "acceptd")},
                "TrvlMaxAmnt": {(3, 2, 900)},
            },
        ),
    )
    s4 = st_.apply_delta(
        s3,
        Delta(
            deletes={"CurrReq": {(2, "Kriss", "Paris", "acceptd")}},
            inserts={
                "CurrReq": {(2, "Kriss", "Paris", "complete")},
                "TrvlCost": {(4, 2, 700)},
            },
        ),
    )
    return s2, s3, s4


def test_init_state_is_one(travel_store):
    assert travel_store.current == 1
    assert travel_store.states == {1}
    assert travel_store.reconstruct("Pending", 1) == {(2, "Kriss", "Paris")}
    assert travel_store.reconstruct("CurrReq", 1) == frozenset()


def test_init_rejects_bad_instance(travel_spec):
    with pytest.raises(ConstraintViolation):
        store.init_store(travel_spec, {"Pending": {("x", "Kriss", "Paris")}})
    with pytest.raises(ConstraintViolation):
        store.init_store(
            travel_spec,
            {"Pending": {(1, "Kriss", "Paris"), (1, "Kriss", "Rome")}},
        )
    with pytest.raises(ConstraintViolation):
        # fid 9 references no CurrReq row
        store.init_store(travel_spec, {"TrvlMaxAmnt": {(1, 9, 100)}})


def test_snapshots_along_the_trace(travel_store):
    s2, s3, s4 = advance_trace(travel_store)
    assert (s2, s3, s4) == (2, 3, 4)
    assert travel_store.reconstruct("Pending", 2) == frozenset()
    assert travel_store.reconstruct("CurrReq", 3) == {(2, "Kriss", "Paris", "acceptd")}
    assert travel_store.reconstruct("CurrReq", 4) == {(2, "Kriss", "Paris", "complete")}
    # unchanged relations carry forward without copying
    assert travel_store.reconstruct("TrvlMaxAmnt", 4) == {(3, 2, 900)}
    # earlier states stay readable
    assert travel_store.reconstruct("Pending", 1) == {(2, "Kriss", "Paris")}


def test_raw_rows_are_deduplicated_payloads(travel_store):
    advance_trace(travel_store)
    # CurrReq payload = (empl, dest, status): one row per distinct status seen
    assert len(travel_store.raw["CurrReq"].rows) == 3
    payloads = set(travel_store.raw["CurrReq"].rows.values())
    assert payloads == {
        ("Kriss", "Paris", "submitd"),
        ("Kriss", "Paris", "acceptd"),
        ("Kriss", "Paris", "complete"),
    }
    # Pending never changed: exactly one raw row
    assert len(travel_store.raw["Pending"].rows) == 1


def test_log_references_shared_raw_rows(travel_spec):
    st_ = store.init_store(
        travel_spec,
        {"Pending": {(1, "Bob", "NY"), (2, "Kriss", "NY")}},
    )
    st_.apply_delta(1, Delta(inserts={"Pending": {(3, "Ann", "NY")}}))
    # payload for Pending is (empl, dest); all three differ in empl
    assert len(st_.raw["Pending"].rows) == 3
    st_.apply_delta(2, Delta(inserts={"Pending": {(4, "Bob", "NY")}}))
    # (Bob, NY) payload already interned: rid is shared across keys 1 and 4
    assert len(st_.raw["Pending"].rows) == 3
    rows = {pk: rid for pk, rid, fk in st_.log["Pending"][3]}
    assert rows[(1,)] == rows[(4,)]


def test_raw_is_inflationary(travel_store):
    advance_trace(travel_store)
    before = dict(travel_store.raw["CurrReq"].rows)
    travel_store.apply_delta(
        4,
        Delta(
            deletes={
                "CurrReq": {(2, "Kriss", "Paris", "complete")},
                "TrvlMaxAmnt": {(3, 2, 900)},
                "TrvlCost": {(4, 2, 700)},
            }
        ),
    )
    after = travel_store.raw["CurrReq"].rows
    assert set(before).issubset(set(after))


def test_apply_delta_rolls_back_on_violation(travel_store):
    s2, s3, s4 = advance_trace(travel_store)
    frozen = {r.name: travel_store.reconstruct(r.name, s4) for r in travel_store.spec.relations}
    version = travel_store._version
    with pytest.raises(ConstraintViolation):
        travel_store.apply_delta(
            s4, Delta(inserts={"CurrReq": {(9, "Zoe", "Oslo", "nonsense")}})
        )
    assert travel_store.states == {1, 2, 3, 4}
    assert travel_store._version == version
    assert {
        r.name: travel_store.reconstruct(r.name, s4) for r in travel_store.spec.relations
    } == frozen


def test_delete_then_insert_same_tuple_is_noop_content(travel_store):
    s = travel_store.apply_delta(
        1,
        Delta(
            deletes={"Pending": {(2, "Kriss", "Paris")}},
            inserts={"Pending": {(2, "Kriss", "Paris")}},
        ),
    )
    assert travel_store.reconstruct("Pending", s) == {(2, "Kriss", "Paris")}


def test_ill_typed_delta_rejected(travel_store):
    with pytest.raises(InvalidDelta):
        travel_store.apply_delta(1, Delta(inserts={"Pending": {(1, "a")}}))
    with pytest.raises(InvalidDelta):
        travel_store.apply_delta(1, Delta(inserts={"Nope": {(1,)}}))


def test_unknown_state_and_relation(travel_store):
    with pytest.raises(UnknownState):
        travel_store.reconstruct("Pending", 99)
    with pytest.raises(UnknownRelation):
        travel_store.reconstruct("Nope", 1)
    with pytest.raises(UnknownState):
        travel_store.apply_delta(99, Delta())


def test_gc_drops_previous_state(travel_spec, single_request):
    st_ = store.init_store(travel_spec, single_request, gc=True, track=False)
    s2 = st_.apply_delta(
        1,
        Delta(
            deletes={"Pending": {(2, "Kriss", "Paris")}},
            inserts={"CurrReq": {(2, "Kriss", "Paris", "submitd")}},
        ),
    )
    assert st_.states == {s2}
    with pytest.raises(UnknownState):
        st_.reconstruct("Pending", 1)


# --- query rewriting ---


def sql(text):
    return parser.parse_query(text)


def test_rewrite_elides_raw_when_only_key_referenced(travel_store):
    q = sql("SELECT Pending.id FROM Pending")
    rq = travel_store.rewrite_query(q, 1)
    text = parser.render_query(rq)
    assert "Pending_log" in text
    assert "Pending_raw" not in text
    assert "_state = 1" in text


def test_rewrite_joins_raw_for_payload_attributes(travel_store):
    q = sql("SELECT CurrReq.status FROM CurrReq WHERE CurrReq.id = 2")
    rq = travel_store.rewrite_query(q, 1)
    text = parser.render_query(rq)
    assert "CurrReq_log" in text and "CurrReq_raw" in text
    assert "_rid" in text


def test_rewrite_equals_reconstruction(travel_store):
    advance_trace(travel_store)
    queries = [
        "SELECT Pending.id, Pending.empl FROM Pending",
        "SELECT CurrReq.status FROM CurrReq",
        "SELECT CurrReq.id FROM CurrReq WHERE CurrReq.status = 'acceptd'",
        "SELECT c.empl, t.cost FROM CurrReq c, TrvlCost t WHERE t.fid = c.id",
        "SELECT m.maxAmnt, t.cost FROM TrvlMaxAmnt m, TrvlCost t "
        "WHERE t.cost <= m.maxAmnt",
        "SELECT c.id FROM CurrReq c WHERE c.status = 'complete' OR c.status = 'acceptd'",
    ]
    views = travel_store.encoded_views()
    for s in sorted(travel_store.states):
        inst = query.instance_of_snapshot(travel_store.spec, travel_store.snapshot(s))
        for text in queries:
            q = sql(text)
            direct = query.evaluate_query(q, inst)
            rewritten = query.evaluate_query(travel_store.rewrite_query(q, s), views)
            assert rewritten == direct, f"state {s}: {text}"


def test_rewritten_query_aliases_cannot_collide(travel_store):
    # user-written aliases may not contain '#', so a#log/a#raw are safe
    q = sql("SELECT log.id FROM Pending log")
    rq = travel_store.rewrite_query(q, 1)
    aliases = [fi.alias for fi in rq.branches[0].from_items]
    assert aliases == ["log#log"]


# --- persistence ---


def equivalent(a, b):
    if a.states != b.states or a.current != b.current:
        return False
    return all(
        a.reconstruct(r.name, s) == b.reconstruct(r.name, s)
        for r in a.spec.relations
        for s in a.states
    )


def test_replay_reproduces_store(tmp_path, travel_spec, single_request):
    path = tmp_path / "run.journal"
    st_ = store.init_store(travel_spec, single_request, persist_path=path)
    advance_trace(st_)
    back = store.replay_store(path)
    assert equivalent(st_, back)
    assert len(back.transitions) == len(st_.transitions) == 3
    assert [t.to_state for t in back.transitions] == [2, 3, 4]
    assert back.raw["CurrReq"].rows == st_.raw["CurrReq"].rows


def test_replayed_store_accepts_appends(tmp_path, travel_spec, single_request):
    path = tmp_path / "run.journal"
    st_ = store.init_store(travel_spec, single_request, persist_path=path)
    advance_trace(st_)
    del st_
    back = store.replay_store(path)
    back._fh = open(path, "ab")  # continue the same journal
    s5 = back.apply_delta(
        4, Delta(deletes={"CurrReq": {(2, "Kriss", "Paris", "complete")}},
                 inserts={"CurrReq": {(2, "Kriss", "Paris", "reimbd")}})
    )
    back._fh.close()
    final = store.replay_store(path)
    assert s5 in final.states
    assert final.reconstruct("CurrReq", s5) == {(2, "Kriss", "Paris", "reimbd")}


def test_truncated_journal_is_rejected(tmp_path, travel_spec, single_request):
    from daproc.errors import ReplayError

    path = tmp_path / "run.journal"
    st_ = store.init_store(travel_spec, single_request, persist_path=path)
    advance_trace(st_)
    blob = path.read_bytes()
    path.write_bytes(blob[:-7])
    with pytest.raises(ReplayError):
        store.replay_store(path)


def test_journal_digest_guards_spec_identity(tmp_path, travel_spec, single_request):
    from daproc.errors import ReplayError

    path = tmp_path / "run.journal"
    store.init_store(travel_spec, single_request, persist_path=path)
    blob = path.read_bytes()
    # corrupt one byte inside the header's spec text
    idx = blob.index(b"RELATION")
    path.write_bytes(blob[:idx] + b"RELATIOM" + blob[idx + 8:])
    with pytest.raises(ReplayError):
        store.replay_store(path)


# --- instance loading ---


def test_instance_from_json(travel_spec):
    doc = {"Pending": [{"id": 1, "empl": "Bob", "dest": "NY"}]}
    snap = store.instance_from_json(travel_spec, doc)
    assert snap["Pending"] == {(1, "Bob", "NY")}
    assert snap["CurrReq"] == frozenset()


@pytest.mark.parametrize(
    "doc",
    [
        {"Nope": []},
        {"Pending": {"id": 1}},
        {"Pending": [{"id": 1, "empl": "Bob"}]},
        {"Pending": [{"id": 1, "empl": "Bob", "dest": "NY", "extra": 1}]},
    ],
)
def test_instance_from_json_rejects_malformed(travel_spec, doc):
    with pytest.raises(InvalidDelta):
        store.instance_from_json(travel_spec, doc)


# --- property: random insert/delete schedules keep every state reconstructible ---


@settings(max_examples=40, deadline=None)
@given(
    st.lists(
        st.tuples(
            st.integers(1, 4),
            st.sampled_from(["Bob", "Kriss"]),
            st.sampled_from(["NY", "Rome"]),
        ),
        min_size=1,
        max_size=6,
    )
)
def test_pending_schedule_round_trip(travel_spec, rows):
    st_ = store.init_store(travel_spec, {})
    expected = [frozenset()]
    current = set()
    s = 1
    for row in rows:
        if row in current:
            current.discard(row)
            delta = Delta(deletes={"Pending": {row}})
        else:
            conflict = next((r for r in current if r[0] == row[0]), None)
            if conflict is not None:
                current.discard(conflict)
                delta = Delta(deletes={"Pending": {conflict}}, inserts={"Pending": {row}})
            else:
                delta = Delta(inserts={"Pending": {row}})
            current.add(row)
        s = st_.apply_delta(s, delta)
        expected.append(frozenset(current))
    for i, want in enumerate(expected, start=1):
        assert st_.reconstruct("Pending", i) == want
