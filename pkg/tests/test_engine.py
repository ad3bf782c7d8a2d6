import pytest

from daproc import parser, services
from daproc.engine import Engine, GroundAction, Modality, ScriptStep, parse_script
from daproc.errors import (
    ConstraintViolation,
    MissingInvocationResult,
    NoSuchBinding,
    ParseError,
    ScriptError,
    StaleBinding,
    TypeMismatch,
    UnknownAction,
)

KRISS = (2, "Kriss", "Paris")


@pytest.fixture
def engine(travel_spec, single_request):
    return Engine(travel_spec, single_request, modality=Modality.HISTORY)


def run_trace(engine, trace_script_text):
    return engine.run_script(parse_script(trace_script_text))


def test_enabled_at_start(engine):
    assert engine.enabled_actions(1) == ["StartWorkflow"]
    bindings = engine.enumerate_bindings(1, "StartWorkflow")
    assert [(b.binding_id, b.values, b.marked) for b in bindings] == [(1, KRISS, False)]
    assert engine.enumerate_bindings(1, "RvwRequest") == []


def test_unknown_action_rejected(engine):
    with pytest.raises(UnknownAction):
        engine.enumerate_bindings(1, "Nope")


def test_bindings_ordered_and_stable(travel_spec):
    eng = Engine(
        travel_spec,
        {"Pending": {(1, "Bob", "NY"), (2, "Kriss", "Paris")}},
    )
    bindings = eng.enumerate_bindings(1, "StartWorkflow")
    assert [b.values for b in bindings] == [(1, "Bob", "NY"), (2, "Kriss", "Paris")]
    assert [b.binding_id for b in bindings] == [1, 2]
    # the same list object is cached per (state, action), so marks persist
    assert eng.enumerate_bindings(1, "StartWorkflow") is bindings


def test_effect_evaluation_grounds_against_prestate(engine):
    engine.commit_ground_action(1, GroundAction("StartWorkflow", KRISS))
    template, pending = engine.evaluate_effects(2, GroundAction("RvwRequest", KRISS))
    assert template.deletes["CurrReq"] == {(2, "Kriss", "Paris", "submitd")}
    # invocation ids follow textual order: @status, @genpk, @maxAmnt
    assert [(p.invocation_id, p.service) for p in pending] == [
        (1, "status"),
        (2, "genpk"),
        (3, "maxAmnt"),
    ]
    assert pending[0].signature == "status(Kriss,Paris)"


def test_no_unification_same_invocation_term_used_once(engine):
    # both TrvlMaxAmnt columns id and fid come from distinct textual terms,
    # so a single evaluation never reuses one service call's result for the other
    engine.commit_ground_action(1, GroundAction("StartWorkflow", KRISS))
    _, pending = engine.evaluate_effects(2, GroundAction("RvwRequest", KRISS))
    assert len({p.invocation_id for p in pending}) == 3


def test_commit_requires_results_for_interactive(engine):
    engine.commit_ground_action(1, GroundAction("StartWorkflow", KRISS))
    with pytest.raises(MissingInvocationResult):
        engine.commit_ground_action(2, GroundAction("RvwRequest", KRISS))


def test_commit_with_results(engine):
    engine.commit_ground_action(1, GroundAction("StartWorkflow", KRISS))
    s3 = engine.commit_ground_action(
        2, GroundAction("RvwRequest", KRISS), {1: "acceptd", 3: 900}
    )
    snap = engine.store.snapshot(s3)
    assert snap["CurrReq"] == {(2, "Kriss", "Paris", "acceptd")}
    assert snap["TrvlMaxAmnt"] == {(3, 2, 900)}
    label = engine.store.transitions[-1].label
    assert label.action == "RvwRequest"
    assert label.results == (
        ("status", ("Kriss", "Paris"), "acceptd"),
        ("genpk", (), 3),
        ("maxAmnt", ("Kriss", "Paris"), 900),
    )


def test_genpk_results_are_globally_fresh(engine, trace_script_text):
    run_trace(engine, trace_script_text)
    # ids 3 and 4 were handed out along the trace
    s5 = engine.commit_ground_action(4, GroundAction("RvwReimb", KRISS))
    s6 = engine.commit_ground_action(s5, GroundAction("EndWorkflow", (2,)))
    assert engine.store.snapshot(s6)["Accepted"] == {(2, "Kriss", "Paris", 700)}
    new_id = engine.genpk.fresh(engine.spec, engine.store.snapshot(s6))
    assert new_id == 5


def test_failed_commit_marks_binding_keeps_state(engine):
    engine.commit_ground_action(1, GroundAction("StartWorkflow", KRISS))
    before = engine.store.snapshot(2)
    n_transitions = len(engine.store.transitions)
    with pytest.raises(ConstraintViolation):
        engine.commit_ground_action(
            2, GroundAction("RvwRequest", KRISS), {1: "nonsense", 3: 900}
        )
    assert engine.current_state == 2
    assert engine.store.snapshot(2) == before
    assert len(engine.store.transitions) == n_transitions
    binding = engine.enumerate_bindings(2, "RvwRequest")[0]
    assert binding.marked


def test_stale_binding_rejected_outside_statespace(engine):
    engine.commit_ground_action(1, GroundAction("StartWorkflow", KRISS))
    with pytest.raises(StaleBinding):
        engine.commit_ground_action(1, GroundAction("StartWorkflow", KRISS))


def test_unknown_binding_rejected(engine):
    with pytest.raises(NoSuchBinding):
        engine.commit_ground_action(1, GroundAction("StartWorkflow", (9, "Z", "Q")))


def test_param_type_checking(engine):
    with pytest.raises(TypeMismatch):
        engine.evaluate_effects(1, GroundAction("StartWorkflow", ("9", "Kriss", "Paris")))
    with pytest.raises(TypeMismatch):
        engine.evaluate_effects(1, GroundAction("StartWorkflow", (9, "Kriss")))


def test_run_script_full_trace(engine, trace_script_text):
    final = run_trace(engine, trace_script_text)
    assert final == 4
    snap = engine.store.snapshot(4)
    assert snap["CurrReq"] == {(2, "Kriss", "Paris", "complete")}
    assert snap["TrvlMaxAmnt"] == {(3, 2, 900)}
    assert snap["TrvlCost"] == {(4, 2, 700)}
    assert snap["Pending"] == frozenset()


def test_script_error_carries_step_index(engine):
    steps = (
        ScriptStep("StartWorkflow", KRISS, ()),
        ScriptStep("StartWorkflow", KRISS, ()),
    )
    with pytest.raises(ScriptError) as exc:
        engine.run_script(steps)
    assert exc.value.index == 2
    # the first step committed, the failing one did not
    assert engine.current_state == 2


def test_script_results_matched_by_service_and_args(engine):
    step = ScriptStep(
        "RvwRequest",
        KRISS,
        (
            ("maxAmnt", ("Kriss", "Paris"), 900),
            ("status", ("Kriss", "Paris"), "acceptd"),
        ),
    )
    engine.run_script([ScriptStep("StartWorkflow", KRISS, ())])
    engine.run_script([step])
    assert engine.store.snapshot(3)["TrvlMaxAmnt"] == {(3, 2, 900)}


def test_parse_script_round_trip(trace_script_text):
    steps = parse_script(trace_script_text)
    assert [s.action for s in steps] == ["StartWorkflow", "RvwRequest", "FillReimb"]
    assert steps[1].results == (
        ("status", ("Kriss", "Paris"), "acceptd"),
        ("maxAmnt", ("Kriss", "Paris"), 900),
    )
    with pytest.raises(ParseError):
        parse_script("ACTION broken(")


def test_history_timestamps_strictly_increase(travel_spec, single_request, trace_script_text):
    # a clock frozen at one millisecond still yields distinct timestamps
    eng = Engine(
        travel_spec, single_request, modality=Modality.HISTORY, clock=lambda: 1000
    )
    eng.run_script(parse_script(trace_script_text))
    stamps = [t.timestamp for t in eng.store.transitions]
    assert stamps == [1000, 1001, 1002]


def test_plain_modality_discards_history(travel_spec, single_request):
    eng = Engine(travel_spec, single_request, modality=Modality.PLAIN)
    eng.commit_ground_action(1, GroundAction("StartWorkflow", KRISS))
    assert eng.store.states == {2}
    assert eng.store.transitions == []


def test_resume_restores_genpk_freshness(tmp_path, travel_spec, single_request, trace_script_text):
    path = tmp_path / "run.journal"
    eng = Engine(
        travel_spec, single_request, modality=Modality.HISTORY, persist_path=path
    )
    eng.run_script(parse_script(trace_script_text))
    del eng

    back = Engine.resume(path)
    assert back.current_state == 4
    assert back.modality is Modality.HISTORY
    # 3 and 4 were issued before the restart; EndWorkflow must not reuse them
    s5 = back.commit_ground_action(4, GroundAction("RvwReimb", KRISS))
    assert back.store.snapshot(s5)["CurrReq"] == {(2, "Kriss", "Paris", "reimbd")}
    assert back.genpk.fresh(back.spec, back.store.snapshot(s5)) == 5


def test_resume_appends_to_same_journal(tmp_path, travel_spec, single_request):
    path = tmp_path / "run.journal"
    eng = Engine(
        travel_spec, single_request, modality=Modality.HISTORY, persist_path=path
    )
    eng.commit_ground_action(1, GroundAction("StartWorkflow", KRISS))
    del eng
    mid = Engine.resume(path, append=True)
    mid.commit_ground_action(
        2, GroundAction("RvwRequest", KRISS), {1: "acceptd", 3: 900}
    )
    del mid
    final = Engine.resume(path)
    assert final.current_state == 3
    assert final.store.snapshot(3)["TrvlMaxAmnt"] == {(3, 2, 900)}
    assert [t.timestamp for t in final.store.transitions] == sorted(
        t.timestamp for t in final.store.transitions
    )
