import random

from provskip.lineage import is_sufficient, lineage, restrict_db
from provskip.relalg import (
    Aggregation,
    Attr,
    Comparison,
    Const,
    Selection,
    TableAccess,
    evaluate,
)

from randgen import random_db, random_monotone_plan, random_plan


def test_highcrime_lineage_is_the_five_heavy_rows(crimes_db, highcrime_plan):
    prov = lineage(highcrime_plan, crimes_db)
    assert prov == {"crimes": frozenset({1, 2, 3, 4, 5})}


def test_empty_selection_has_empty_lineage(crimes_db):
    plan = Selection(
        TableAccess("crimes"), Comparison(Attr("numcrimes"), ">", Const(10**6))
    )
    assert lineage(plan, crimes_db) == {"crimes": frozenset()}


def test_lineage_is_sufficient(crimes_db, highcrime_plan):
    prov = lineage(highcrime_plan, crimes_db)
    assert is_sufficient(highcrime_plan, crimes_db, prov)


def test_full_db_is_sufficient(crimes_db, highcrime_plan):
    full = {"crimes": frozenset(crimes_db["crimes"].row_ids)}
    assert is_sufficient(highcrime_plan, crimes_db, full)


def test_dropping_a_lineage_row_breaks_sufficiency(crimes_db, highcrime_plan):
    prov = lineage(highcrime_plan, crimes_db)
    ids = set(prov["crimes"])
    ids.remove(1)  # one of the two pid-4 rows; the group sum changes
    assert not is_sufficient(highcrime_plan, crimes_db, {"crimes": frozenset(ids)})


def test_group_closure_on_aggregations():
    rng = random.Random(5)
    for _ in range(50):
        db = random_db(rng, n_relations=1, max_rows=20)
        rel = db["r0"]
        names = rel.schema.names()
        gb = (names[0],)
        plan = Selection(
            Aggregation(TableAccess("r0"), "sum", Attr(names[-1]), gb, "s"),
            Comparison(Attr("s"), ">=", Const(0)),
        )
        prov = lineage(plan, db)["r0"]
        # if any row of a group is present, the whole group is
        groups_hit = {
            rel.rows[i][0] for i, rid in enumerate(rel.row_ids) if rid in prov
        }
        for i, rid in enumerate(rel.row_ids):
            if rel.rows[i][0] in groups_hit:
                assert rid in prov


def test_random_plans_lineage_sufficient():
    rng = random.Random(21)
    checked = 0
    for _ in range(120):
        db = random_db(rng)
        plan = random_plan(rng, db, depth=3)
        prov = lineage(plan, db)
        assert is_sufficient(plan, db, prov)
        checked += 1
    assert checked == 120


def test_monotone_query_nonprovenance_rows_are_irrelevant():
    # deleting any single row outside the lineage never changes the result;
    # holds for monotone plans only (a dropped row can flip an aggregate
    # past a filter, so arbitrary plans are out)
    rng = random.Random(42)
    for _ in range(40):
        db = random_db(rng, n_relations=2, max_rows=12)
        plan = random_monotone_plan(rng, db, depth=3)
        prov = lineage(plan, db)
        full = evaluate(plan, db).as_bag()
        for name, rel in db.items():
            for rid in rel.row_ids:
                if rid in prov.get(name, frozenset()):
                    continue
                keep = {
                    n: frozenset(r.row_ids) - ({rid} if n == name else set())
                    for n, r in db.items()
                }
                assert evaluate(plan, restrict_db(db, keep)).as_bag() == full


def test_aggregation_lineage_matches_group_enumeration_oracle():
    # oracle: enumerate groups passing the filter, collect their rows
    rng = random.Random(77)
    for _ in range(60):
        db = random_db(rng, n_relations=1, max_rows=25)
        rel = db["r0"]
        names = rel.schema.names()
        gb, agg = names[0], names[-1]
        threshold = rng.randint(-5, 15)
        plan = Selection(
            Aggregation(TableAccess("r0"), "sum", Attr(agg), (gb,), "s"),
            Comparison(Attr("s"), ">=", Const(threshold)),
        )
        gi, ai = rel.schema.index(gb), rel.schema.index(agg)
        sums: dict[int, int] = {}
        for row, m in zip(rel.rows, rel.mults):
            sums[row[gi]] = sums.get(row[gi], 0) + row[ai] * m
        passing = {g for g, s in sums.items() if s >= threshold}
        oracle = frozenset(
            rid for rid, row in zip(rel.row_ids, rel.rows) if row[gi] in passing
        )
        assert lineage(plan, db)["r0"] == oracle
