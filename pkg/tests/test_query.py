import pytest

from daproc import model, parser, query


@pytest.fixture(scope="module")
def instance(travel_spec):
    return query.instance_of_snapshot(
        travel_spec,
        {
            "CurrReq": {
                (1, "Bob", "NY", "reimbd"),
                (2, "Kriss", "Paris", "rejd"),
            },
            "TrvlCost": {(7, 1, 350), (8, 2, 900)},
            "TrvlMaxAmnt": {(5, 1, 400), (6, 2, 500)},
        },
    )


def q(text):
    return parser.parse_query(text)


def test_projection_and_filter(instance):
    rows = query.evaluate_query(q("SELECT c.empl FROM CurrReq c WHERE c.status = 'reimbd'"), instance)
    assert rows == {("Bob",)}


def test_join_across_relations(instance):
    rows = query.evaluate_query(
        q(
            "SELECT c.empl, t.cost FROM CurrReq c, TrvlCost t "
            "WHERE t.fid = c.id AND t.cost <= 400"
        ),
        instance,
    )
    assert rows == {("Bob", 350)}


def test_union_deduplicates(instance):
    rows = query.evaluate_query(
        q(
            "SELECT c.id FROM CurrReq c WHERE c.status = 'reimbd' "
            "UNION SELECT t.fid FROM TrvlCost t WHERE t.cost = 350"
        ),
        instance,
    )
    assert rows == {(1,)}


def test_or_and_not(instance):
    rows = query.evaluate_query(
        q("SELECT c.id FROM CurrReq c WHERE NOT (c.id = 1 OR c.empl = 'Kriss')"),
        instance,
    )
    assert rows == set()
    rows = query.evaluate_query(
        q("SELECT c.id FROM CurrReq c WHERE c.id = 1 OR c.empl = 'Kriss'"), instance
    )
    assert rows == {(1,), (2,)}


def test_parameters_resolve_from_env(travel_spec, instance):
    cond = q("SELECT c.id FROM CurrReq c WHERE c.empl = 'x'")
    # swap the constant for a parameter
    branch = cond.branches[0]
    where = model.Comparison("=", branch.where.left, model.Param("who"))
    patched = model.SelectQuery(
        branches=(model.SelectBranch(branch.projection, branch.from_items, where),)
    )
    rows = query.evaluate_query(patched, instance, env={"who": "Kriss"})
    assert rows == {(2,)}


def test_cartesian_product_without_where(instance):
    rows = query.evaluate_query(
        q("SELECT c.id, t.id FROM CurrReq c, TrvlCost t"), instance
    )
    assert len(rows) == 4


def test_self_join(instance):
    rows = query.evaluate_query(
        q("SELECT x.id, y.id FROM CurrReq x, CurrReq y WHERE x.id < y.id"), instance
    )
    assert rows == {(1, 2)}


def test_unknown_alias_is_resolution_error(instance):
    with pytest.raises(model.ResolutionError):
        query.evaluate_query(q("SELECT z.id FROM CurrReq c"), instance)


def test_constant_gate_short_circuits(instance):
    rows = query.evaluate_query(
        q("SELECT c.id FROM CurrReq c WHERE 1 = 2"), instance
    )
    assert rows == set()


def test_rows_matching_prefilters_one_alias(instance):
    view = instance["CurrReq"]
    cond = q("SELECT c.id FROM CurrReq c WHERE c.status = 'rejd'").branches[0].where
    rows = query.rows_matching(view, "c", cond)
    assert rows == {(2, "Kriss", "Paris", "rejd")}
