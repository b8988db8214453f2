import random

import pytest

from provskip.relalg import (
    Aggregation,
    Attr,
    Comparison,
    Const,
    Difference,
    DuplicateElim,
    Intersection,
    Join,
    Mul,
    Not,
    Or,
    And,
    Add,
    PlanError,
    Projection,
    Relation,
    Schema,
    SchemaError,
    Selection,
    TableAccess,
    TopK,
    Window,
    assign_ids,
    evaluate,
    infer_schema,
    table_accesses,
)
from provskip.safety import (
    Bound,
    SketchTypeSet,
    is_safe_dynamic,
    max_value,
    min_value,
    monotonicity_one,
    monotonicity_two,
    passes_distinct_prefilter,
    range_safe_attributes,
    safe_types,
    sprime,
)

from conftest import make_highcrime_plan
from randgen import random_db, random_plan


# ---------------------------------------------------------------------------
# Bound basics


def test_bound_kinds():
    assert Bound.at_least(0).kind == "at_least"
    assert Bound.at_most(5).kind == "at_most"
    assert Bound.exact_interval(1, 3).kind == "exact_interval"
    assert Bound.unknown().kind == "unknown"
    assert Bound.at_least(2).lo == 2 and Bound.at_least(2).hi is None


def test_bound_rejects_inverted_interval():
    with pytest.raises(ValueError):
        Bound.exact_interval(3, 1)


# ---------------------------------------------------------------------------
# monotonicity conditions


def test_monotonicity_one_examples():
    unknown = Bound.unknown()
    assert monotonicity_one("count", ">=", unknown)
    assert monotonicity_one("max", ">", unknown)
    assert not monotonicity_one("min", ">=", unknown)
    assert monotonicity_one("min", "<", unknown)
    assert monotonicity_one("sum", ">=", Bound.at_least(0))
    assert not monotonicity_one("sum", ">=", unknown)
    assert not monotonicity_one("sum", ">=", Bound.at_least(-1))
    # the negative-sum direction is strict: an all-zero column fails it
    assert monotonicity_one("sum", "<=", Bound.at_most(-1))
    assert not monotonicity_one("sum", "<=", Bound.at_most(0))
    for op in ("<", "<=", ">", ">=", "="):
        assert not monotonicity_one("avg", op, Bound.exact_interval(0, 0))
    assert not monotonicity_one("count", "=", unknown)


def test_monotonicity_two_examples():
    unknown = Bound.unknown()
    assert monotonicity_two("max", ("g",), (("o", True),), unknown)
    assert not monotonicity_two("min", ("g",), (("o", True),), unknown)
    assert monotonicity_two("min", ("g",), (("o", False),), unknown)
    assert monotonicity_two("sum", ("g",), (("o", True),), Bound.at_least(0))
    assert not monotonicity_two("sum", ("g",), (("o", True),), unknown)
    # ordering purely by the group attributes is safe for any function
    assert monotonicity_two("avg", ("g",), (("g", False),), unknown)
    # mixed sort directions qualify only through the group-order identity
    assert not monotonicity_two("max", ("g",), (("o", True), ("p", False)), unknown)


# ---------------------------------------------------------------------------
# value bounds


def test_base_relation_bounds_are_exact(crimes_db):
    t = TableAccess("crimes")
    assert min_value(t, "numcrimes", crimes_db) == Bound(58, 58)
    assert max_value(t, "numcrimes", crimes_db) == Bound(157, 157)
    assert min_value(t, "year", crimes_db) == Bound(2010, 2010)


def test_unknown_attribute_rejected(crimes_db):
    with pytest.raises(SchemaError):
        min_value(TableAccess("crimes"), "nope", crimes_db)


def test_selection_tightens_bounds(crimes_db):
    t = TableAccess("crimes")
    sel = Selection(t, Comparison(Attr("numcrimes"), ">=", Const(100)))
    b = min_value(sel, "numcrimes", crimes_db)
    assert b.lo == 100 and b.hi == 157

    sel2 = Selection(t, Comparison(Const(90), ">", Attr("numcrimes")))
    b2 = max_value(sel2, "numcrimes", crimes_db)
    assert b2.hi == 90

    both = Selection(
        t,
        And(
            Comparison(Attr("numcrimes"), ">", Const(70)),
            Comparison(Attr("numcrimes"), "<=", Const(101)),
        ),
    )
    b3 = min_value(both, "numcrimes", crimes_db)
    assert (b3.lo, b3.hi) == (70, 101)

    either = Selection(
        t,
        Or(
            Comparison(Attr("numcrimes"), "=", Const(58)),
            Comparison(Attr("numcrimes"), "=", Const(96)),
        ),
    )
    b4 = min_value(either, "numcrimes", crimes_db)
    assert (b4.lo, b4.hi) == (58, 96)

    negated = Selection(t, Not(Comparison(Attr("numcrimes"), ">=", Const(100))))
    b5 = min_value(negated, "numcrimes", crimes_db)
    # negation contributes nothing; the base interval remains
    assert (b5.lo, b5.hi) == (58, 157)


def test_projection_expression_bounds(crimes_db):
    t = TableAccess("crimes")
    plan = Projection(t, (Add(Attr("numcrimes"), Attr("pid")),), ("s",))
    b = min_value(plan, "s", crimes_db)
    assert (b.lo, b.hi) == (60, 165)

    shifted = Projection(t, (Add(Attr("numcrimes"), Const(-200)),), ("s",))
    bs = min_value(shifted, "s", crimes_db)
    assert (bs.lo, bs.hi) == (-142, -43)

    prod = Projection(t, (Mul(Attr("numcrimes"), Attr("pid")),), ("p",))
    bp = min_value(prod, "p", crimes_db)
    assert (bp.lo, bp.hi) == (58 * 2, 157 * 8)

    # negative times positive flips the interval
    neg = Projection(
        t, (Mul(Add(Attr("numcrimes"), Const(-200)), Attr("pid")),), ("p",)
    )
    bn = min_value(neg, "p", crimes_db)
    assert (bn.lo, bn.hi) == (-142 * 8, -43 * 2)


def test_count_output_is_at_least_zero(crimes_db):
    agg = Aggregation(
        TableAccess("crimes"), func="count", agg_expr=None, group_by=("pid",)
    )
    b = min_value(agg, "result", crimes_db)
    assert b.kind == "at_least" and b.lo == 0


def test_sum_keeps_only_the_sign(crimes_db):
    agg = Aggregation(
        TableAccess("crimes"),
        func="sum",
        agg_expr=Attr("numcrimes"),
        group_by=("pid",),
    )
    b = min_value(agg, "result", crimes_db)
    assert (b.lo, b.hi) == (0, None)


def test_min_max_avg_outputs_stay_in_the_input_interval(crimes_db):
    for func in ("min", "max", "avg"):
        agg = Aggregation(
            TableAccess("crimes"),
            func=func,
            agg_expr=Attr("numcrimes"),
            group_by=("pid",),
        )
        b = min_value(agg, "result", crimes_db)
        assert (b.lo, b.hi) == (58, 157)


def test_having_tightens_aggregate_bounds(crimes_db):
    plan = make_highcrime_plan()
    b = min_value(plan, "totcrimes", crimes_db)
    assert b.lo == 100 and b.hi is None


def test_join_equality_transfers_bounds():
    left = Relation.build(
        Schema("l", (("a", "integer"), ("x", "integer"))), [(1, 10), (9, 20)]
    )
    right = Relation.build(
        Schema("r", (("b", "integer"), ("y", "integer"))), [(4, 30), (6, 40)]
    )
    db = {"l": left, "r": right}
    plan = Join(
        TableAccess("l"),
        TableAccess("r"),
        Comparison(Attr("a"), "=", Attr("b")),
    )
    b = min_value(plan, "a", db)
    # a's own interval [1, 9] meets b's [4, 6]
    assert (b.lo, b.hi) == (4, 6)


def test_bounds_bracket_evaluated_extrema_on_random_plans():
    checked = 0
    for seed in range(150):
        rng = random.Random(seed)
        db = random_db(rng)
        plan = random_plan(rng, db)
        out = evaluate(plan, db)
        if out.total_rows == 0:
            continue
        schemas = {n: r.schema for n, r in db.items()}
        for attr in infer_schema(plan, schemas).names():
            col = out.column(attr)
            lo_b = min_value(plan, attr, db)
            hi_b = max_value(plan, attr, db)
            true_min, true_max = min(col), max(col)
            assert lo_b.lo is None or lo_b.lo <= true_min
            assert lo_b.hi is None or true_min <= lo_b.hi
            assert hi_b.lo is None or hi_b.lo <= true_max
            assert hi_b.hi is None or true_max <= hi_b.hi
            checked += 1
    assert checked > 100


# ---------------------------------------------------------------------------
# sketch type sets


def test_type_set_intersection_lattice():
    a = SketchTypeSet.all_types()
    n = SketchTypeSet.none()
    s = SketchTypeSet.of({("range", "x"), ("hash", "x")})
    t = SketchTypeSet.of({("range", "x"), ("range", "y")})
    assert a.intersect(s) == s
    assert s.intersect(a) == s
    assert n.intersect(a).is_none
    assert s.intersect(n).is_none
    assert s.intersect(t) == SketchTypeSet.of({("range", "x")})
    assert SketchTypeSet.of(set()).is_none
    assert a.to_json() == "ALL" and n.to_json() == "NONE"
    assert s.to_json() == ["H(x)", "R(x)"]


# ---------------------------------------------------------------------------
# per-operator verdicts and whole-path safety


def test_spj_plan_is_all_safe(crimes_db):
    t = TableAccess("crimes")
    plan = Projection(
        Selection(t, Comparison(Attr("pid"), ">=", Const(4))),
        (Attr("pid"), Attr("numcrimes")),
        ("pid", "numcrimes"),
    )
    plan = assign_ids(plan)
    for op_id, _, in [(i, n) for i, n in _walk_ids(plan)]:
        assert sprime(plan, op_id, crimes_db).is_all
    access = table_accesses(plan)[0][0]
    assert safe_types(plan, access, crimes_db).is_all


def _walk_ids(plan):
    out = [(plan.op_id, plan)]
    from provskip.relalg import children

    for c in children(plan):
        out.extend(_walk_ids(c))
    return out


def test_highcrime_access_is_all_safe(crimes_db):
    plan = assign_ids(make_highcrime_plan())
    access = table_accesses(plan)[0][0]
    assert sprime(plan, 2, crimes_db).is_all  # the grouping operator
    assert safe_types(plan, access, crimes_db).is_all


def test_avg_having_is_unsafe(crimes_db):
    agg = Aggregation(
        TableAccess("crimes"),
        func="avg",
        agg_expr=Attr("numcrimes"),
        group_by=("pid",),
        out_name="a",
    )
    plan = assign_ids(Selection(agg, Comparison(Attr("a"), ">=", Const(90))))
    access = table_accesses(plan)[0][0]
    assert sprime(plan, 2, crimes_db).is_none
    assert safe_types(plan, access, crimes_db).is_none


def test_sum_having_needs_nonnegative_input():
    rel = Relation.build(
        Schema("t", (("g", "integer"), ("v", "integer"))),
        [(1, -5), (1, 7), (2, 3)],
    )
    db = {"t": rel}
    agg = Aggregation(
        TableAccess("t"), func="sum", agg_expr=Attr("v"), group_by=("g",)
    )
    plan = assign_ids(Selection(agg, Comparison(Attr("result"), ">=", Const(5))))
    access = table_accesses(plan)[0][0]
    assert safe_types(plan, access, db).is_none


def test_negative_sum_with_lower_comparison_is_strict():
    def build(values):
        rel = Relation.build(
            Schema("t", (("g", "integer"), ("v", "integer"))),
            [(i % 2, v) for i, v in enumerate(values)],
        )
        agg = Aggregation(
            TableAccess("t"), func="sum", agg_expr=Attr("v"), group_by=("g",)
        )
        plan = assign_ids(Selection(agg, Comparison(Attr("result"), "<=", Const(-4))))
        return plan, {"t": rel}

    plan, db = build([-3, -1, -2])
    access = table_accesses(plan)[0][0]
    assert safe_types(plan, access, db).is_all

    plan, db = build([-3, 0, -2])  # maximum hits zero: no longer strict
    access = table_accesses(plan)[0][0]
    assert safe_types(plan, access, db).is_none


def test_plain_aggregation_is_safe_without_filters(crimes_db):
    agg = Aggregation(
        TableAccess("crimes"),
        func="avg",
        agg_expr=Attr("numcrimes"),
        group_by=("pid",),
    )
    plan = assign_ids(agg)
    access = table_accesses(plan)[0][0]
    assert safe_types(plan, access, crimes_db).is_all

    wrapped = assign_ids(
        Projection(agg, (Attr("pid"), Attr("result")), ("pid", "result"))
    )
    access = table_accesses(wrapped)[0][0]
    assert safe_types(wrapped, access, crimes_db).is_all


def test_projection_rename_between_grouping_and_filter(crimes_db):
    agg = Aggregation(
        TableAccess("crimes"),
        func="sum",
        agg_expr=Attr("numcrimes"),
        group_by=("pid",),
        out_name="totcrimes",
    )
    renamed = Projection(agg, (Attr("pid"), Attr("totcrimes")), ("p", "t2"))
    plan = assign_ids(Selection(renamed, Comparison(Attr("t2"), ">", Const(150))))
    access = table_accesses(plan)[0][0]
    assert safe_types(plan, access, crimes_db).is_all

    # losing the aggregate on the way up forfeits the rescue
    dropped = Projection(agg, (Attr("pid"),), ("p",))
    plan2 = assign_ids(Selection(dropped, Comparison(Attr("p"), ">", Const(3))))
    access2 = table_accesses(plan2)[0][0]
    assert safe_types(plan2, access2, crimes_db).is_none


def test_aggregated_attribute_grant_when_grouped_on_itself(crimes_db):
    # summing a group attribute: only sketches on that attribute survive
    agg = Aggregation(
        TableAccess("crimes"), func="sum", agg_expr=Attr("pid"), group_by=("pid",)
    )
    plan = assign_ids(Selection(agg, Comparison(Attr("result"), "<=", Const(4))))
    st = sprime(plan, 2, crimes_db)
    assert st == SketchTypeSet.of({("range", "pid"), ("hash", "pid")})
    access = table_accesses(plan)[0][0]
    assert safe_types(plan, access, crimes_db) == st
    assert range_safe_attributes(plan, access, crimes_db) == frozenset({"pid"})


def test_difference_requires_empty_right_side(crimes_db):
    t = TableAccess("crimes")
    empty = Selection(t, Comparison(Attr("pid"), "<", Const(0)))
    plan = assign_ids(Difference(t, empty))
    access = table_accesses(plan)[0][0]
    assert sprime(plan, 1, crimes_db).is_all
    assert safe_types(plan, access, crimes_db).is_all

    nonempty = Selection(t, Comparison(Attr("pid"), ">", Const(0)))
    plan2 = assign_ids(Difference(t, nonempty))
    access2 = table_accesses(plan2)[0][0]
    assert sprime(plan2, 1, crimes_db).is_none
    assert safe_types(plan2, access2, crimes_db).is_none


def test_intersection_blocks_safety(crimes_db):
    t = TableAccess("crimes")
    plan = assign_ids(Intersection(t, t))
    access = table_accesses(plan)[0][0]
    assert sprime(plan, 1, crimes_db).is_none
    assert safe_types(plan, access, crimes_db).is_none


def test_topk_ordering_rules(crimes_db):
    def build(func, order, agg_attr="numcrimes"):
        agg = Aggregation(
            TableAccess("crimes"),
            func=func,
            agg_expr=Attr(agg_attr),
            group_by=("pid",),
        )
        empty = Selection(
            Aggregation(
                TableAccess("crimes"),
                func=func,
                agg_expr=Attr(agg_attr),
                group_by=("pid",),
            ),
            Comparison(Attr("result"), "<", Attr("result")),
        )
        # the difference keeps the path off the trivially-clean rule
        return assign_ids(TopK(Difference(agg, empty), 2, order))

    plan = build("max", (("result", True),))
    gid = plan.child.left.op_id
    assert sprime(plan, gid, crimes_db).is_all

    plan = build("min", (("result", True),))
    gid = plan.child.left.op_id
    assert sprime(plan, gid, crimes_db).is_none

    plan = build("min", (("result", False),))
    gid = plan.child.left.op_id
    assert sprime(plan, gid, crimes_db).is_all

    # ordering by the group attributes alone is safe for any function
    plan = build("avg", (("pid", False),))
    gid = plan.child.left.op_id
    assert sprime(plan, gid, crimes_db).is_all


def test_window_filter_rules(crimes_db):
    def build(func, op, const):
        w = Window(
            TableAccess("crimes"),
            func=func,
            agg_expr=Attr("numcrimes"),
            partition_by=("pid",),
            order_by=(("year", False),),
            out_name="w",
        )
        return assign_ids(Selection(w, Comparison(Attr("w"), op, Const(const))))

    plan = build("sum", ">=", 100)
    access = table_accesses(plan)[0][0]
    assert safe_types(plan, access, crimes_db).is_all

    plan = build("avg", ">=", 100)
    access = table_accesses(plan)[0][0]
    assert safe_types(plan, access, crimes_db).is_none

    # bare window, nothing above: clean path
    w = assign_ids(
        Window(
            TableAccess("crimes"),
            func="avg",
            agg_expr=Attr("numcrimes"),
            partition_by=("pid",),
            order_by=(("year", False),),
        )
    )
    access = table_accesses(w)[0][0]
    assert safe_types(w, access, crimes_db).is_all


def test_nested_aggregation_with_monotone_filters():
    rel = Relation.build(
        Schema("t", (("g1", "integer"), ("g2", "integer"), ("v", "integer"))),
        [(i % 4, i % 2, (i * 7) % 11) for i in range(12)],
    )
    db = {"t": rel}
    inner = Selection(
        Aggregation(
            TableAccess("t"),
            func="sum",
            agg_expr=Attr("v"),
            group_by=("g1", "g2"),
            out_name="s1",
        ),
        Comparison(Attr("s1"), ">=", Const(5)),
    )
    outer = Aggregation(
        inner, func="sum", agg_expr=Attr("s1"), group_by=("g2",), out_name="s2"
    )

    plan = assign_ids(Selection(outer, Comparison(Attr("s2"), ">=", Const(10))))
    access = table_accesses(plan)[0][0]
    assert safe_types(plan, access, db).is_all

    plan2 = assign_ids(Selection(outer, Comparison(Attr("s2"), "<=", Const(10))))
    access2 = table_accesses(plan2)[0][0]
    assert safe_types(plan2, access2, db).is_none


def test_adding_operators_never_grows_safety(crimes_db):
    def contains(big, small):
        if big.is_all or small.is_none:
            return True
        if small.is_all or big.is_none:
            return False
        return small.types <= big.types

    agg = Aggregation(
        TableAccess("crimes"),
        func="sum",
        agg_expr=Attr("numcrimes"),
        group_by=("pid",),
    )
    wrappers = [
        lambda p: Selection(p, Comparison(Attr("result"), ">=", Const(100))),
        lambda p: Selection(p, Comparison(Attr("result"), "<=", Const(100))),
        lambda p: DuplicateElim(p),
        lambda p: TopK(p, 2, (("result", True),)),
        lambda p: Projection(p, (Attr("pid"), Attr("result")), ("pid", "result")),
    ]
    base_plan = assign_ids(agg)
    base = safe_types(base_plan, table_accesses(base_plan)[0][0], crimes_db)
    for wrap in wrappers:
        plan = assign_ids(wrap(agg))
        access = table_accesses(plan)[0][0]
        assert contains(base, safe_types(plan, access, crimes_db))


# ---------------------------------------------------------------------------
# dynamic check and pre-filter


def test_dynamic_check_full_instance_is_safe(crimes_db):
    plan = make_highcrime_plan()
    assert is_safe_dynamic(plan, crimes_db, {"crimes": frozenset(range(8))})


def test_dynamic_check_catches_partial_groups():
    rel = Relation.build(
        Schema("t", (("g", "integer"), ("v", "integer"))),
        [(1, 200), (2, 150), (2, 60), (3, 50)],
    )
    db = {"t": rel}
    agg = Aggregation(
        TableAccess("t"), func="sum", agg_expr=Attr("v"), group_by=("g",)
    )
    plan = Selection(agg, Comparison(Attr("result"), "<=", Const(120)))
    # dropping row 1 leaves group 2 with a partial total that wrongly passes
    assert not is_safe_dynamic(plan, db, {"t": frozenset({0, 2, 3})})
    assert is_safe_dynamic(plan, db, {"t": frozenset({0, 1, 2, 3})})


def test_distinct_prefilter(crimes):
    assert passes_distinct_prefilter(crimes, "pid", 3)
    assert passes_distinct_prefilter(crimes, "pid", 5)
    assert not passes_distinct_prefilter(crimes, "pid", 6)


def test_sprime_rejects_unknown_id(crimes_db):
    plan = assign_ids(make_highcrime_plan())
    with pytest.raises(PlanError):
        sprime(plan, 99, crimes_db)
    with pytest.raises(PlanError):
        safe_types(plan, 1, crimes_db)  # the root is not a table access
