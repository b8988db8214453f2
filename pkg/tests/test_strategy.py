import random
from collections import Counter

import pytest

from provskip.relalg import (
    Aggregation,
    Attr,
    Comparison,
    Const,
    Join,
    Relation,
    Schema,
    Selection,
    TableAccess,
)
from provskip.strategy import (
    Candidate,
    StrategyError,
    candidate_pool,
    candidates,
    expected_random_size,
    pools,
    ranking_accuracy,
    select_attribute,
)

from conftest import make_crimes, make_highcrime_plan

from randgen import random_db, random_plan


def _by_attr(cands):
    return {c.attribute: c for c in cands}


def test_roles_on_the_aggregation_query(crimes_db, highcrime_plan):
    cands = _by_attr(candidates(highcrime_plan, crimes_db, "crimes", 3))
    assert set(cands) == {"pid", "month", "year", "numcrimes"}
    assert "group_by" in cands["pid"].tags
    assert "group_by" in cands["year"].tags
    assert cands["numcrimes"].tags == frozenset({"aggregation_input"})
    # threshold filters reference the aggregate alias, not a base attribute
    assert "selection" not in cands["year"].tags
    assert all(c.range_safe for c in cands.values())
    assert cands["pid"].distinct == 5
    assert cands["year"].distinct == 6


def test_row_filter_tags_selection(crimes_db):
    plan = Aggregation(
        Selection(TableAccess("crimes"), Comparison(Attr("year"), ">=", Const(2015))),
        func="sum",
        agg_expr=Attr("numcrimes"),
        group_by=("pid",),
    )
    cands = _by_attr(candidates(plan, crimes_db, "crimes", 1))
    assert "selection" in cands["year"].tags


def test_join_attributes_are_tagged():
    fact = Schema("f", (("fk", "integer"), ("v", "integer")))
    dim = Schema("d", (("pk", "integer"), ("c", "integer")))
    db = {
        "f": Relation.build(fact, [(1, 10), (2, 20)]),
        "d": Relation.build(dim, [(1, 0), (2, 1)]),
    }
    plan = Aggregation(
        Join(TableAccess("f"), TableAccess("d"), Comparison(Attr("fk"), "=", Attr("pk"))),
        func="sum",
        agg_expr=Attr("v"),
        group_by=("fk",),
    )
    f_cands = _by_attr(candidates(plan, db, "f", 1))
    d_cands = _by_attr(candidates(plan, db, "d", 1))
    assert "join" in f_cands["fk"].tags
    assert "join" in d_cands["pk"].tags


def test_primary_key_tag_comes_from_the_schema(crimes_db):
    keyed = Schema(
        "crimes",
        (("pid", "integer"), ("month", "integer"), ("year", "integer"), ("numcrimes", "integer")),
        primary_key=("pid", "month"),
    )
    rel = crimes_db["crimes"]
    db = {"crimes": Relation.build(keyed, rel.rows)}
    cands = _by_attr(candidates(make_highcrime_plan(), db, "crimes", 1))
    assert "primary_key" in cands["pid"].tags
    assert "primary_key" not in cands["year"].tags
    assert pools(cands.values(), 1)["pk"] == ("month", "pid")


def test_pool_containment(crimes_db, highcrime_plan):
    p = pools(candidates(highcrime_plan, crimes_db, "crimes", 3), 3)
    assert set(p["gb"]) <= set(p["rel"]) <= set(p["all"])
    assert p["gb"] == ("month", "pid", "year")
    assert p["agg"] == ("numcrimes",)
    assert p["pk"] == ()


def test_pool_containment_on_random_plans():
    rng = random.Random(4)
    for _ in range(25):
        db = random_db(rng)
        plan = random_plan(rng, db)
        for relation in db:
            try:
                cands = candidates(plan, db, relation, 1)
            except StrategyError:
                continue  # plan does not read this relation
            p = pools(cands, 1)
            assert set(p["gb"]) <= set(p["rel"]) <= set(p["all"])
            assert set(p["agg"]) <= set(p["rel"])
            assert set(p["pk"]) <= set(p["all"])


def test_distinct_prefilter_shrinks_pools(crimes_db, highcrime_plan):
    cands = candidates(highcrime_plan, crimes_db, "crimes", 6)
    p = pools(cands, 6)
    assert p["gb"] == ("year",)  # pid and month have five distinct values
    assert p["all"] == ("numcrimes", "year")


def test_unsafe_attributes_never_enter_a_pool(crimes_db):
    plan = Selection(
        Aggregation(
            TableAccess("crimes"),
            func="avg",
            agg_expr=Attr("numcrimes"),
            group_by=("pid",),
            out_name="a",
        ),
        Comparison(Attr("a"), ">=", Const(90)),
    )
    cands = candidates(plan, crimes_db, "crimes", 1)
    assert all(not c.range_safe for c in cands)
    p = pools(cands, 1)
    assert all(pool == () for pool in p.values())
    assert select_attribute("rand-gb", p["gb"], seed=1) is None


def test_random_choice_is_seeded_and_uniform(crimes_db, highcrime_plan):
    pool = candidate_pool(highcrime_plan, crimes_db, "crimes", 3, "rand-gb")
    assert pool == ("month", "pid", "year")
    first = select_attribute("rand-gb", pool, seed=7)
    assert select_attribute("rand-gb", pool, seed=7) == first
    seen = Counter(
        select_attribute("rand-gb", pool, seed=s) for s in range(300)
    )
    assert set(seen) == set(pool)
    for attr in pool:
        assert 60 <= seen[attr] <= 140  # 100 expected, 3 sigma is about 25


def test_cost_based_takes_smallest_estimated_slice(crimes_db, highcrime_plan):
    pool = candidate_pool(highcrime_plan, crimes_db, "crimes", 3, "cb-opt-gb")
    sel = {"pid": 1.0, "month": 0.875, "year": 0.625}
    assert select_attribute("cb-opt-gb", pool, est_selectivity=sel) == "year"
    tied = {"pid": 0.5, "month": 0.5, "year": 0.9}
    assert select_attribute("cb-opt-gb", pool, est_selectivity=tied) == "month"
    with pytest.raises(StrategyError):
        select_attribute("cb-opt-gb", pool, est_selectivity={"pid": 0.1})
    with pytest.raises(StrategyError):
        select_attribute("cb-opt-gb", pool)


def test_unknown_strategy_rejected(crimes_db, highcrime_plan):
    with pytest.raises(StrategyError):
        candidate_pool(highcrime_plan, crimes_db, "crimes", 3, "greedy")
    with pytest.raises(StrategyError):
        select_attribute("greedy", ("a",))


def test_plan_must_access_the_relation(crimes_db, highcrime_plan):
    with pytest.raises(StrategyError):
        candidates(highcrime_plan, crimes_db, "nope", 1)
    other = Relation.build(Schema("other", (("x", "integer"),)), [(1,)])
    with pytest.raises(StrategyError):
        candidates(highcrime_plan, {**crimes_db, "other": other}, "other", 1)


def test_expected_random_size_is_the_pool_mean():
    assert expected_random_size([8, 7, 5]) == pytest.approx(20 / 3)
    assert expected_random_size([]) is None


def test_ranking_accuracy_counts_top_k_hits():
    sizes = {"a": 5, "b": 7, "c": 9}
    results = [
        (("a", "b", "c"), sizes),  # best first
        (("b", "a", "c"), sizes),  # best second
        (("c", "b", "a"), sizes),  # best last
    ]
    assert ranking_accuracy(results, 1) == pytest.approx(1 / 3)
    assert ranking_accuracy(results, 2) == pytest.approx(2 / 3)
    assert ranking_accuracy(results, 3) == pytest.approx(1.0)
    tied = {"a": 5, "b": 5, "c": 9}
    assert ranking_accuracy([(("b", "c", "a"), tied)], 1) == 1.0
    assert ranking_accuracy([], 2) == 0.0
    with pytest.raises(StrategyError):
        ranking_accuracy(results, 0)
