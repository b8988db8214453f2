"""Recognition of the supported query shapes.

A supported query is one or two aggregation levels over a base table or a
tree of equality joins, with an optional row filter below the bottom
aggregation and an optional threshold filter above each aggregation:

    [threshold2] agg2 [threshold1] agg1 [filter] (table | joins)

The single-level shapes are called "agh" (one table) and "ajgh" (joins);
the two-level shapes are "aagh" and "aajgh".  Anything else is rejected,
and callers fall back to the generic evaluator.
"""

from __future__ import annotations

from dataclasses import dataclass

from .relalg import (
    Aggregation,
    And,
    Attr,
    Comparison,
    Const,
    Join,
    Selection,
    TableAccess,
    expr_attrs,
    pred_attrs,
)

# comparison mirrored when the constant is on the left
_MIRROR = {"<": ">", "<=": ">=", ">": "<", ">=": "<=", "=": "="}


@dataclass(frozen=True)
class HavingInfo:
    attr: str
    comparator: str
    constant: object


@dataclass(frozen=True)
class AggLevel:
    group_by: tuple[str, ...]
    func: str
    agg_expr: object  # None only for count
    out_name: str
    having: HavingInfo | None


@dataclass(frozen=True)
class TemplateInfo:
    kind: str  # "agh" | "ajgh" | "aagh" | "aajgh"
    fact: str
    relations: tuple[str, ...]
    join_pairs: tuple  # ((rel_a, attr_a), (rel_b, attr_b)) sorted pairs
    where: object | None
    inner: AggLevel
    outer: AggLevel | None

    @property
    def nested(self) -> bool:
        return self.outer is not None


def comparison_against_constant(pred):
    """(attr, comparator, constant) if pred is a single Attr-vs-Const
    comparison in either orientation, else None."""
    if not isinstance(pred, Comparison):
        return None
    if isinstance(pred.left, Attr) and isinstance(pred.right, Const):
        return pred.left.name, pred.op, pred.right.value
    if isinstance(pred.left, Const) and isinstance(pred.right, Attr):
        return pred.right.name, _MIRROR[pred.op], pred.left.value
    return None


def _peel_having(node, agg: Aggregation):
    """If node is a threshold filter over agg's output, return HavingInfo."""
    if not isinstance(node, Selection):
        return None
    hit = comparison_against_constant(node.predicate)
    if hit is None or hit[0] != agg.out_name:
        return None
    return HavingInfo(*hit)


def _parse_source(node):
    """Flatten a join tree of table accesses into (relations, raw_pairs).

    Join predicates must be conjunctions of equality comparisons between
    attributes of the two sides; anything else rejects the plan.
    """
    if isinstance(node, TableAccess):
        return [node.relation], []
    if not isinstance(node, Join):
        return None
    left = _parse_source(node.left)
    right = _parse_source(node.right)
    if left is None or right is None:
        return None
    conjuncts = _equality_conjuncts(node.predicate)
    if conjuncts is None:
        return None
    return left[0] + right[0], left[1] + right[1] + conjuncts


def _equality_conjuncts(pred):
    """Flatten an And-tree of attr = attr comparisons; None if any other
    shape appears."""
    if isinstance(pred, And):
        left = _equality_conjuncts(pred.left)
        right = _equality_conjuncts(pred.right)
        if left is None or right is None:
            return None
        return left + right
    if (
        isinstance(pred, Comparison)
        and pred.op == "="
        and isinstance(pred.left, Attr)
        and isinstance(pred.right, Attr)
    ):
        return [(pred.left.name, pred.right.name)]
    return None


def recognize(plan, schemas) -> TemplateInfo | None:
    """Classify plan as one of the supported shapes, or None."""
    node = plan

    held_pred = None
    if isinstance(node, Selection):
        held_pred = node
        node = node.child
    if not isinstance(node, Aggregation):
        return None
    agg_top = node
    if held_pred is not None and _peel_having(held_pred, agg_top) is None:
        return None
    having_top = None if held_pred is None else _peel_having(held_pred, agg_top)
    node = agg_top.child

    # a second aggregation below makes the query nested
    inner_agg = None
    having_inner = None
    if isinstance(node, Selection) and isinstance(node.child, Aggregation):
        having_inner = _peel_having(node, node.child)
        if having_inner is None:
            return None
        inner_agg = node.child
        node = inner_agg.child
    elif isinstance(node, Aggregation):
        inner_agg = node
        node = inner_agg.child

    where = None
    if isinstance(node, Selection):
        where = node.predicate
        node = node.child

    parsed = _parse_source(node)
    if parsed is None:
        return None
    relations, raw_pairs = parsed[0], parsed[1]
    if len(set(relations)) != len(relations):
        return None

    owner = {}
    for rel in relations:
        if rel not in schemas:
            return None
        for attr in schemas[rel].names():
            owner[attr] = rel

    join_pairs = []
    for a, b in raw_pairs:
        if a not in owner or b not in owner:
            return None
        pa, pb = sorted([(owner[a], a), (owner[b], b)])
        join_pairs.append((pa, pb))
    join_pairs.sort()

    if inner_agg is None:
        bottom, outer_level = agg_top, None
        bottom_having = having_top
    else:
        bottom = inner_agg
        bottom_having = having_inner
        if not set(agg_top.group_by) <= set(bottom.group_by):
            return None
        if agg_top.agg_expr is not None and not (
            expr_attrs(agg_top.agg_expr) <= {bottom.out_name}
        ):
            return None
        outer_level = AggLevel(
            group_by=agg_top.group_by,
            func=agg_top.func,
            agg_expr=agg_top.agg_expr,
            out_name=agg_top.out_name,
            having=having_top,
        )

    inner_level = AggLevel(
        group_by=bottom.group_by,
        func=bottom.func,
        agg_expr=bottom.agg_expr,
        out_name=bottom.out_name,
        having=bottom_having,
    )

    # base attributes only below the bottom aggregation
    base_names = set(owner)
    if not set(inner_level.group_by) <= base_names:
        return None
    if inner_level.agg_expr is not None and not (
        expr_attrs(inner_level.agg_expr) <= base_names
    ):
        return None
    if where is not None and not (pred_attrs(where) <= base_names):
        return None

    fact = _fact_relation(relations, inner_level, owner)
    kind = ("aagh" if outer_level else "agh") if len(relations) == 1 else (
        "aajgh" if outer_level else "ajgh"
    )
    return TemplateInfo(
        kind=kind,
        fact=fact,
        relations=tuple(relations),
        join_pairs=tuple(join_pairs),
        where=where,
        inner=inner_level,
        outer=outer_level,
    )


def _fact_relation(relations, inner: AggLevel, owner) -> str:
    """The relation whose rows the sampler stratifies: the one holding the
    aggregation input, falling back to the first accessed relation."""
    if inner.agg_expr is not None:
        for attr in sorted(expr_attrs(inner.agg_expr)):
            if attr in owner:
                return owner[attr]
    return relations[0]


def where_comparison(info: TemplateInfo):
    """(attr, comparator, constant) when the row filter is one comparison
    over a grouping attribute, else None.  Only this shape is eligible for
    threshold subsumption when a sketch is considered for reuse."""
    if info.where is None:
        return None
    hit = comparison_against_constant(info.where)
    if hit is None or hit[0] not in info.inner.group_by:
        return None
    return hit
