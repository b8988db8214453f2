"""Choosing which attribute of a relation to partition and sketch.

Candidates are the relation's numeric attributes, tagged by the roles they
play in the query.  Every pool is filtered to attributes where a range
sketch is safe and where the data has enough distinct values to cut the
requested number of ranges.  Random strategies draw uniformly from their
pool; cost-based strategies take the smallest estimated slice.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .relalg import (
    Aggregation,
    EngineError,
    Join,
    Selection,
    Window,
    assign_ids,
    children,
    expr_attrs,
    pred_attrs,
    table_accesses,
)
from .safety import range_safe_attributes
from .util import derive_seed


class StrategyError(EngineError):
    pass


STRATEGIES = (
    "rand-all",
    "rand-rel-all",
    "rand-gb",
    "rand-pk",
    "rand-agg",
    "cb-opt",
    "cb-opt-rel",
    "cb-opt-gb",
)

_POOL_OF = {
    "rand-all": "all",
    "cb-opt": "all",
    "rand-rel-all": "rel",
    "cb-opt-rel": "rel",
    "rand-gb": "gb",
    "cb-opt-gb": "gb",
    "rand-pk": "pk",
    "rand-agg": "agg",
}

GROUP_BY = "group_by"
AGG_INPUT = "aggregation_input"
SELECTION = "selection"
JOIN = "join"
PRIMARY_KEY = "primary_key"


@dataclass(frozen=True)
class Candidate:
    attribute: str
    tags: frozenset
    distinct: int
    range_safe: bool


def _walk(node):
    yield node
    for child in children(node):
        yield from _walk(child)


def _role_tags(plan, schema) -> dict:
    names = set(schema.names())
    tags: dict = {a: set() for a in names}
    for node in _walk(plan):
        if isinstance(node, Aggregation):
            hit_gb = names & set(node.group_by)
            hit_agg = (
                names & expr_attrs(node.agg_expr) if node.agg_expr is not None else set()
            )
            for a in hit_gb:
                tags[a].add(GROUP_BY)
            for a in hit_agg:
                tags[a].add(AGG_INPUT)
        elif isinstance(node, Window):
            for a in names & set(node.partition_by):
                tags[a].add(GROUP_BY)
            if node.agg_expr is not None:
                for a in names & expr_attrs(node.agg_expr):
                    tags[a].add(AGG_INPUT)
        elif isinstance(node, Selection):
            for a in names & pred_attrs(node.predicate):
                tags[a].add(SELECTION)
        elif isinstance(node, Join):
            for a in names & pred_attrs(node.predicate):
                tags[a].add(JOIN)
    for a in schema.primary_key:
        tags[a].add(PRIMARY_KEY)
    return tags


def candidates(plan, db, relation: str, fragment_count: int) -> tuple[Candidate, ...]:
    """Tagged numeric attributes of relation, with safety verdicts.

    When the plan reads the relation more than once, an attribute counts as
    safe only if it is safe at every access: the sketch filter is applied
    to the stored relation, so all accesses see the filtered rows.
    """
    if relation not in db:
        raise StrategyError(f"unknown relation {relation!r}")
    plan = assign_ids(plan)
    accesses = [op_id for op_id, rel in table_accesses(plan) if rel == relation]
    if not accesses:
        raise StrategyError(f"plan does not access {relation!r}")
    safe = None
    for op_id in accesses:
        here = range_safe_attributes(plan, op_id, db)
        safe = here if safe is None else safe & here

    rel = db[relation]
    tags = _role_tags(plan, rel.schema)
    out = []
    for attr in rel.schema.names():
        if not rel.schema.is_numeric(attr):
            continue
        out.append(
            Candidate(
                attribute=attr,
                tags=frozenset(tags[attr]),
                distinct=len(set(rel.column(attr))),
                range_safe=attr in safe,
            )
        )
    return tuple(out)


def _eligible(cands, fragment_count: int):
    return [c for c in cands if c.range_safe and c.distinct >= fragment_count]


def pools(cands, fragment_count: int) -> dict:
    """Attribute pools per strategy family, each sorted by name."""
    base = _eligible(cands, fragment_count)
    rel_tags = {GROUP_BY, AGG_INPUT, SELECTION, JOIN}
    return {
        "all": tuple(sorted(c.attribute for c in base)),
        "rel": tuple(sorted(c.attribute for c in base if c.tags & rel_tags)),
        "gb": tuple(sorted(c.attribute for c in base if GROUP_BY in c.tags)),
        "pk": tuple(sorted(c.attribute for c in base if PRIMARY_KEY in c.tags)),
        "agg": tuple(sorted(c.attribute for c in base if AGG_INPUT in c.tags)),
    }


def candidate_pool(plan, db, relation: str, fragment_count: int, strategy: str):
    if strategy not in _POOL_OF:
        raise StrategyError(f"unknown strategy {strategy!r}")
    cands = candidates(plan, db, relation, fragment_count)
    return pools(cands, fragment_count)[_POOL_OF[strategy]]


def select_attribute(
    strategy: str,
    pool,
    est_selectivity: dict | None = None,
    seed: int = 0,
    label: str = "",
) -> str | None:
    """Pick from the pool: uniformly for random strategies, smallest
    estimated selectivity (ties by name) for cost-based ones.  None when
    the pool is empty."""
    if strategy not in _POOL_OF:
        raise StrategyError(f"unknown strategy {strategy!r}")
    pool = sorted(pool)
    if not pool:
        return None
    if strategy.startswith("rand-"):
        rng = random.Random(derive_seed(seed, "choose", strategy, label))
        return pool[rng.randrange(len(pool))]
    if est_selectivity is None:
        raise StrategyError(f"{strategy} needs selectivity estimates")
    missing = [a for a in pool if a not in est_selectivity]
    if missing:
        raise StrategyError(f"no selectivity estimate for {missing[0]!r}")
    return min(pool, key=lambda a: (est_selectivity[a], a))


def expected_random_size(actual_sizes) -> float | None:
    """Expected slice size of a uniform pick: the mean over the pool."""
    sizes = list(actual_sizes)
    if not sizes:
        return None
    return sum(sizes) / len(sizes)


def ranking_accuracy(results, k: int) -> float:
    """Fraction of queries whose estimated top-k hits a truly best attribute.

    Each result pairs an estimated ranking (best first) with the actual
    slice sizes; ties for the true minimum all count as best.
    """
    if k < 1:
        raise StrategyError("top-k needs k >= 1")
    results = list(results)
    if not results:
        return 0.0
    hits = 0
    for ranking, actual_sizes in results:
        if not ranking:
            continue
        best = min(actual_sizes[a] for a in ranking)
        if any(actual_sizes[a] == best for a in ranking[:k]):
            hits += 1
    return hits / len(results)
