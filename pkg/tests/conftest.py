import pytest

from provskip.relalg import (
    Aggregation,
    Attr,
    Comparison,
    Const,
    Relation,
    Schema,
    Selection,
    TableAccess,
)

# Eight-row crime micro table. Row ids 0..7; the five provenance rows of
# the high-crime query are ids 1..5 (the two pid-4 rows, the two pid-8
# rows, and the single pid-2 row).
CRIME_ROWS = [
    (3, 1, 2010, 88),
    (4, 1, 2013, 73),
    (4, 1, 2013, 101),
    (8, 6, 2015, 86),
    (8, 6, 2015, 96),
    (2, 7, 2016, 157),
    (7, 2, 2022, 83),
    (7, 9, 2023, 58),
]

CRIME_SCHEMA = Schema(
    "crimes",
    (
        ("pid", "integer"),
        ("month", "integer"),
        ("year", "integer"),
        ("numcrimes", "integer"),
    ),
)

PID_RANGES = [(1, 3), (4, 6), (7, 9)]
MONTH_RANGES = [(1, 4), (5, 8), (9, 12)]
YEAR_RANGES = [(2010, 2012), (2013, 2020), (2021, 2024)]


def make_crimes() -> Relation:
    return Relation.build(CRIME_SCHEMA, CRIME_ROWS)


def make_highcrime_plan():
    """Per-(pid, month, year) crime totals of at least 100."""
    agg = Aggregation(
        TableAccess("crimes"),
        func="sum",
        agg_expr=Attr("numcrimes"),
        group_by=("pid", "month", "year"),
        out_name="totcrimes",
    )
    return Selection(agg, Comparison(Attr("totcrimes"), ">=", Const(100)))


@pytest.fixture
def crimes() -> Relation:
    return make_crimes()


@pytest.fixture
def crimes_db(crimes):
    return {"crimes": crimes}


@pytest.fixture
def highcrime_plan():
    return make_highcrime_plan()
