"""Query lineage: which input rows suffice to reproduce a result.

The lineage of a query is, per accessed relation, the set of row ids
that contributed to some output row. Restricting the database to those
rows and re-evaluating must reproduce the original result exactly; that
sufficiency check doubles as the correctness oracle for everything built
on top of lineage.
"""

from __future__ import annotations

from .relalg import Relation, evaluate, evaluate_annotated, table_accesses

# Provenance: dict relation-name -> frozenset of row ids


def lineage(plan, db) -> dict[str, frozenset]:
    """Row ids per relation that produced the query's output."""
    _, per_row = evaluate_annotated(plan, db)
    acc: dict[str, set] = {}
    for ln in per_row:
        for rel, ids in ln.items():
            acc.setdefault(rel, set()).update(ids)
    # relations accessed but contributing nothing still appear, empty
    for _, rel in table_accesses(plan):
        acc.setdefault(rel, set())
    return {rel: frozenset(ids) for rel, ids in acc.items()}


def restrict_db(db, subset) -> dict[str, Relation]:
    """Database keeping only the given row ids (missing relation = empty)."""
    return {
        name: rel.restrict(subset.get(name, ())) for name, rel in db.items()
    }


def is_sufficient(plan, db, subset) -> bool:
    """True iff evaluating over the restricted database reproduces Q(db)."""
    full = evaluate(plan, db)
    reduced = evaluate(plan, restrict_db(db, subset))
    return full.as_bag() == reduced.as_bag()
