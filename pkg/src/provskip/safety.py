"""Static safety analysis for sketch-based data skipping.

A sketch on some base attribute is safe for a query when evaluating the
query over the sketch instance returns the full-data result. Safety is
decided per table access by intersecting per-operator verdicts along the
path from the query root down to the access. Monotone operators accept
any sketch; grouping operators accept one only under syntactic
conditions on the aggregate, the comparison above it, and sign bounds of
the aggregated expression, which is where the value-bound propagation in
this module comes in.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .relalg import (
    TEXT,
    Add,
    Aggregation,
    And,
    Attr,
    Comparison,
    Const,
    CrossProduct,
    Difference,
    DuplicateElim,
    Intersection,
    Join,
    Mul,
    Not,
    Or,
    PlanError,
    Projection,
    SchemaError,
    Selection,
    TableAccess,
    TopK,
    Union,
    Window,
    evaluate,
    expr_attrs,
    infer_schema,
    node_at,
    path_to_root,
)

RANGE = "range"
HASH = "hash"

# operators a grouping node may see on a fully clean path to the root
_CLEAN_PATH_OPS = (Projection, Union, CrossProduct, TopK)


# ---------------------------------------------------------------------------
# value bounds


@dataclass(frozen=True)
class Bound:
    """Interval known to contain every value of an attribute (or its
    extremum). A None side means nothing is known in that direction."""

    lo: float | None = None
    hi: float | None = None

    def __post_init__(self):
        if self.lo is not None and self.hi is not None and self.lo > self.hi:
            raise ValueError(f"empty bound [{self.lo}, {self.hi}]")

    @classmethod
    def at_least(cls, c) -> "Bound":
        return cls(lo=c)

    @classmethod
    def at_most(cls, c) -> "Bound":
        return cls(hi=c)

    @classmethod
    def exact_interval(cls, lo, hi) -> "Bound":
        return cls(lo=lo, hi=hi)

    @classmethod
    def unknown(cls) -> "Bound":
        return cls()

    @property
    def kind(self) -> str:
        if self.lo is None and self.hi is None:
            return "unknown"
        if self.hi is None:
            return "at_least"
        if self.lo is None:
            return "at_most"
        return "exact_interval"


def _meet(a: Bound, b: Bound) -> Bound:
    lo = a.lo if b.lo is None else (b.lo if a.lo is None else max(a.lo, b.lo))
    hi = a.hi if b.hi is None else (b.hi if a.hi is None else min(a.hi, b.hi))
    if lo is not None and hi is not None and lo > hi:
        # contradictory constraints mean the output is empty, so any
        # interval is vacuously correct; keep the invariant
        hi = lo
    return Bound(lo, hi)


def _hull(a: Bound, b: Bound) -> Bound:
    lo = None if a.lo is None or b.lo is None else min(a.lo, b.lo)
    hi = None if a.hi is None or b.hi is None else max(a.hi, b.hi)
    return Bound(lo, hi)


def _add_bounds(a: Bound, b: Bound) -> Bound:
    lo = None if a.lo is None or b.lo is None else a.lo + b.lo
    hi = None if a.hi is None or b.hi is None else a.hi + b.hi
    return Bound(lo, hi)


def _mul_bounds(a: Bound, b: Bound) -> Bound:
    def pos(x):
        return x.lo is not None and x.lo >= 0

    def neg(x):
        return x.hi is not None and x.hi <= 0

    def prod(x, y):
        return None if x is None or y is None else x * y

    if pos(a) and pos(b):
        return Bound(a.lo * b.lo, prod(a.hi, b.hi))
    if neg(a) and neg(b):
        return Bound(a.hi * b.hi, prod(a.lo, b.lo))
    if pos(a) and neg(b):
        return Bound(prod(a.hi, b.lo), a.lo * b.hi)
    if neg(a) and pos(b):
        return Bound(prod(a.lo, b.hi), a.hi * b.lo)
    return Bound()


def _implied_interval(pred, attr: str) -> Bound:
    """Interval the predicate forces on attr wherever it holds."""
    if isinstance(pred, Comparison):
        if isinstance(pred.left, Attr) and pred.left.name == attr and isinstance(
            pred.right, Const
        ):
            op, c = pred.op, pred.right.value
        elif isinstance(pred.right, Attr) and pred.right.name == attr and isinstance(
            pred.left, Const
        ):
            op, c = _MIRROR[pred.op], pred.left.value
        else:
            return Bound()
        if isinstance(c, str):
            return Bound()
        if op in ("<", "<="):
            return Bound(hi=c)
        if op in (">", ">="):
            return Bound(lo=c)
        return Bound(c, c)  # equality
    if isinstance(pred, And):
        return _meet(_implied_interval(pred.left, attr), _implied_interval(pred.right, attr))
    if isinstance(pred, Or):
        return _hull(_implied_interval(pred.left, attr), _implied_interval(pred.right, attr))
    return Bound()  # negation gives no usable one-sided information


_MIRROR = {"<": ">", "<=": ">=", "=": "=", ">=": "<=", ">": "<"}


def _expr_bounds(expr, child, db, schemas) -> Bound:
    if isinstance(expr, Const):
        if isinstance(expr.value, str):
            return Bound()
        return Bound(expr.value, expr.value)
    if isinstance(expr, Attr):
        return _value_bounds(child, expr.name, db, schemas)
    if isinstance(expr, Add):
        return _add_bounds(
            _expr_bounds(expr.left, child, db, schemas),
            _expr_bounds(expr.right, child, db, schemas),
        )
    if isinstance(expr, Mul):
        return _mul_bounds(
            _expr_bounds(expr.left, child, db, schemas),
            _expr_bounds(expr.right, child, db, schemas),
        )
    raise PlanError(f"not an expression: {expr!r}")


def _agg_out_bounds(func: str, expr, child, db, schemas) -> Bound:
    if func == "count":
        return Bound(lo=0)
    e = _expr_bounds(expr, child, db, schemas)
    if func in ("min", "max", "avg"):
        return e  # each output value lies among / between input values
    # sum: only the sign survives, the magnitude is unbounded
    lo = 0 if e.lo is not None and e.lo >= 0 else None
    hi = 0 if e.hi is not None and e.hi <= 0 else None
    return Bound(lo, hi)


def _value_bounds(node, attr: str, db, schemas) -> Bound:
    if isinstance(node, TableAccess):
        rel = db[node.relation]
        if rel.schema.type_of(attr) == TEXT or rel.total_rows == 0:
            return Bound()
        col = rel.column(attr)
        return Bound(min(col), max(col))

    if isinstance(node, Selection):
        return _meet(
            _value_bounds(node.child, attr, db, schemas),
            _implied_interval(node.predicate, attr),
        )

    if isinstance(node, Projection):
        i = node.names.index(attr)
        return _expr_bounds(node.exprs[i], node.child, db, schemas)

    if isinstance(node, Union):
        return _hull(
            _value_bounds(node.left, attr, db, schemas),
            _value_bounds(node.right, attr, db, schemas),
        )

    if isinstance(node, Intersection):
        # a surviving tuple occurs in both inputs, so both intervals apply
        return _meet(
            _value_bounds(node.left, attr, db, schemas),
            _value_bounds(node.right, attr, db, schemas),
        )

    if isinstance(node, Difference):
        return _value_bounds(node.left, attr, db, schemas)

    if isinstance(node, (CrossProduct, Join)):
        ls = infer_schema(node.left, schemas)
        side = node.left if ls.has(attr) else node.right
        b = _value_bounds(side, attr, db, schemas)
        if isinstance(node, Join):
            # an equality conjunct with the other side transfers its interval
            for left_a, right_a in _equality_conjuncts(node.predicate):
                other = None
                if left_a == attr:
                    other = right_a
                elif right_a == attr:
                    other = left_a
                if other is not None:
                    o_side = node.left if ls.has(other) else node.right
                    b = _meet(b, _value_bounds(o_side, other, db, schemas))
        return b

    if isinstance(node, Aggregation):
        if attr in node.group_by:
            return _value_bounds(node.child, attr, db, schemas)
        return _agg_out_bounds(node.func, node.agg_expr, node.child, db, schemas)

    if isinstance(node, Window):
        if attr == node.out_name:
            return _agg_out_bounds(node.func, node.agg_expr, node.child, db, schemas)
        return _value_bounds(node.child, attr, db, schemas)

    if isinstance(node, (DuplicateElim, TopK)):
        return _value_bounds(node.child, attr, db, schemas)

    raise PlanError(f"not an operator node: {node!r}")


def _equality_conjuncts(pred) -> list[tuple[str, str]]:
    if isinstance(pred, And):
        return _equality_conjuncts(pred.left) + _equality_conjuncts(pred.right)
    if (
        isinstance(pred, Comparison)
        and pred.op == "="
        and isinstance(pred.left, Attr)
        and isinstance(pred.right, Attr)
    ):
        return [(pred.left.name, pred.right.name)]
    return []


def _schemas_of(db) -> dict:
    return {name: rel.schema for name, rel in db.items()}


def _require_attr(plan, attribute: str, schemas) -> None:
    if not infer_schema(plan, schemas).has(attribute):
        raise SchemaError(f"unknown attribute {attribute!r}")


def min_value(plan, attribute: str, db) -> Bound:
    """Sound bracket for the smallest value of attribute in the output."""
    schemas = _schemas_of(db)
    _require_attr(plan, attribute, schemas)
    if isinstance(plan, TableAccess):
        b = _value_bounds(plan, attribute, db, schemas)
        return b if b.lo is None else Bound(b.lo, b.lo)
    return _value_bounds(plan, attribute, db, schemas)


def max_value(plan, attribute: str, db) -> Bound:
    """Sound bracket for the largest value of attribute in the output."""
    schemas = _schemas_of(db)
    _require_attr(plan, attribute, schemas)
    if isinstance(plan, TableAccess):
        b = _value_bounds(plan, attribute, db, schemas)
        return b if b.hi is None else Bound(b.hi, b.hi)
    return _value_bounds(plan, attribute, db, schemas)


# ---------------------------------------------------------------------------
# monotonicity of a filter / top-k above a grouping operator


def monotonicity_one(func: str, comparator: str, agg_expr_bound: Bound) -> bool:
    """Does `aggregate comparator constant` only ever lose groups when
    rows are removed? Exactly the four qualifying combinations."""
    if func in ("count", "max") and comparator in (">", ">="):
        return True
    if func == "min" and comparator in ("<", "<="):
        return True
    if func == "sum" and comparator in (">", ">="):
        return agg_expr_bound.lo is not None and agg_expr_bound.lo >= 0
    if func == "sum" and comparator in ("<", "<="):
        return agg_expr_bound.hi is not None and agg_expr_bound.hi < 0
    return False


def monotonicity_two(func, group_attrs, order_keys, agg_expr_bound: Bound) -> bool:
    """Does a top-k over the given order keys rank complete groups the
    same way when partial groups can only shrink toward their true
    aggregate?"""
    g = frozenset(group_attrs)
    o = frozenset(a for a, _ in order_keys)
    if g == o:
        return True
    descending = all(d for _, d in order_keys)
    ascending = all(not d for _, d in order_keys)
    if func in ("count", "max") and descending:
        return True
    if func == "sum" and descending:
        return agg_expr_bound.lo is not None and agg_expr_bound.lo >= 0
    if func == "min" and ascending:
        return True
    return False


# ---------------------------------------------------------------------------
# sketch type sets


@dataclass(frozen=True)
class SketchTypeSet:
    """ALL, NONE, or an explicit set of (kind, attribute) sketch types."""

    kind: str  # "all" | "none" | "some"
    types: frozenset = field(default_factory=frozenset)

    @classmethod
    def all_types(cls) -> "SketchTypeSet":
        return cls("all")

    @classmethod
    def none(cls) -> "SketchTypeSet":
        return cls("none")

    @classmethod
    def of(cls, types) -> "SketchTypeSet":
        ts = frozenset(types)
        return cls("some", ts) if ts else cls("none")

    @property
    def is_all(self) -> bool:
        return self.kind == "all"

    @property
    def is_none(self) -> bool:
        return self.kind == "none"

    def intersect(self, other: "SketchTypeSet") -> "SketchTypeSet":
        if self.is_none or other.is_none:
            return SketchTypeSet.none()
        if self.is_all:
            return other
        if other.is_all:
            return self
        return SketchTypeSet.of(self.types & other.types)

    def contains(self, kind: str, attribute: str) -> bool:
        return self.is_all or (kind, attribute) in self.types

    def to_json(self):
        if self.is_all:
            return "ALL"
        if self.is_none:
            return "NONE"
        label = {RANGE: "R", HASH: "H"}
        return sorted(f"{label[k]}({a})" for k, a in self.types)


# ---------------------------------------------------------------------------
# attribute dependence (which base attributes feed an output attribute)


def _dependency_maps(node, schemas):
    """Per output attribute: (all base attributes it is computed from,
    base attributes it carries verbatim)."""
    if isinstance(node, TableAccess):
        names = schemas[node.relation].names()
        m = {a: frozenset([a]) for a in names}
        return m, dict(m)

    if isinstance(node, (Selection, DuplicateElim, TopK)):
        return _dependency_maps(node.child, schemas)

    if isinstance(node, Projection):
        full_c, ident_c = _dependency_maps(node.child, schemas)
        full, ident = {}, {}
        for expr, name in zip(node.exprs, node.names):
            deps = frozenset()
            for a in expr_attrs(expr):
                deps |= full_c[a]
            full[name] = deps
            ident[name] = ident_c[expr.name] if isinstance(expr, Attr) else frozenset()
        return full, ident

    if isinstance(node, (Union, Intersection, Difference)):
        full_l, ident_l = _dependency_maps(node.left, schemas)
        full_r, ident_r = _dependency_maps(node.right, schemas)
        full = {a: full_l[a] | full_r[a] for a in full_l}
        # verbatim only when both origins carry the same base attribute
        ident = {a: ident_l[a] & ident_r[a] for a in ident_l}
        return full, ident

    if isinstance(node, (CrossProduct, Join)):
        full_l, ident_l = _dependency_maps(node.left, schemas)
        full_r, ident_r = _dependency_maps(node.right, schemas)
        return {**full_l, **full_r}, {**ident_l, **ident_r}

    if isinstance(node, Aggregation):
        full_c, ident_c = _dependency_maps(node.child, schemas)
        full = {g: full_c[g] for g in node.group_by}
        ident = {g: ident_c[g] for g in node.group_by}
        deps = frozenset()
        if node.agg_expr is not None:
            for a in expr_attrs(node.agg_expr):
                deps |= full_c[a]
        full[node.out_name] = deps
        ident[node.out_name] = frozenset()
        return full, ident

    if isinstance(node, Window):
        full, ident = _dependency_maps(node.child, schemas)
        full = dict(full)
        ident = dict(ident)
        deps = frozenset()
        for a in expr_attrs(node.agg_expr) if node.agg_expr is not None else ():
            deps |= full[a]
        full[node.out_name] = deps
        ident[node.out_name] = frozenset()
        return full, ident

    raise PlanError(f"not an operator node: {node!r}")


# ---------------------------------------------------------------------------
# per-operator verdicts


def _comparator_against_constant(pred, attr: str) -> str | None:
    """The comparison operator if pred is exactly `attr <op> constant`."""
    if not isinstance(pred, Comparison):
        return None
    if isinstance(pred.left, Attr) and pred.left.name == attr and isinstance(
        pred.right, Const
    ):
        return pred.op
    if isinstance(pred.right, Attr) and pred.right.name == attr and isinstance(
        pred.left, Const
    ):
        return _MIRROR[pred.op]
    return None


def _grouping_sprime(plan, node, db, schemas, with_topk_rule: bool) -> SketchTypeSet:
    group = node.group_by if isinstance(node, Aggregation) else node.partition_by
    ebound = (
        Bound(lo=0)
        if node.func == "count"
        else _expr_bounds(node.agg_expr, node.child, db, schemas)
    )

    path = path_to_root(plan, node.op_id)
    upward = [node_at(plan, i) for i in reversed(path)]

    clean_to_root = all(isinstance(n, _CLEAN_PATH_OPS) for n in upward)

    granted_all = clean_to_root
    # track how the aggregate output and the group attributes are named
    # further up; projections may rename them, grouping operators end them
    names = {a: a for a in (node.out_name, *group)}
    clean = True
    for anc in upward:
        if granted_all or not clean:
            break
        if isinstance(anc, Selection):
            alias = names.get(node.out_name)
            if alias is not None:
                cmp = _comparator_against_constant(anc.predicate, alias)
                if cmp is not None and monotonicity_one(node.func, cmp, ebound):
                    granted_all = True
            clean = False
        elif isinstance(anc, TopK):
            if with_topk_rule:
                inv = {cur: orig for orig, cur in names.items()}
                translated = []
                for a, d in anc.order_by:
                    if a not in inv:
                        translated = None
                        break
                    translated.append((inv[a], d))
                if translated is not None and monotonicity_two(
                    node.func, group, translated, ebound
                ):
                    granted_all = True
        elif isinstance(anc, Projection):
            renamed = {}
            for orig, cur in names.items():
                for expr, out in zip(anc.exprs, anc.names):
                    if isinstance(expr, Attr) and expr.name == cur:
                        renamed[orig] = out
                        break
            names = renamed
        elif isinstance(anc, (Union, Difference, CrossProduct)):
            pass  # names survive unchanged
        else:
            # join, intersection, grouping, duplicate elimination: these
            # reshape tuples or groups, so nothing above them can rescue
            clean = False

    if granted_all:
        return SketchTypeSet.all_types()

    # sketches on the aggregated attribute itself, when every input
    # attribute sharing its origin is grouped on and carries it verbatim
    agg_attrs = expr_attrs(node.agg_expr) if node.agg_expr is not None else set()
    full, ident = _dependency_maps(node.child, schemas)
    base = frozenset()
    for a in agg_attrs:
        base |= full[a]
    dependents = {x for x, deps in full.items() if deps & base}
    if dependents and dependents <= set(group):
        granted = set()
        for a in agg_attrs:
            for b in ident[a]:
                granted.add((RANGE, b))
                granted.add((HASH, b))
        if granted:
            return SketchTypeSet.of(granted)
    return SketchTypeSet.none()


def sprime(plan, op_id: int, db) -> SketchTypeSet:
    """Sketch types the single operator tolerates, ignoring the rest of
    the path."""
    node = node_at(plan, op_id)
    schemas = _schemas_of(db)

    if isinstance(
        node,
        (TableAccess, Selection, Projection, Join, CrossProduct, DuplicateElim, Union, TopK),
    ):
        return SketchTypeSet.all_types()

    if isinstance(node, Difference):
        # data-dependent: skipping below a difference is only harmless
        # when the right side contributes nothing at all
        right = evaluate(node.right, db)
        if right.total_rows == 0:
            return SketchTypeSet.all_types()
        return SketchTypeSet.none()

    if isinstance(node, Intersection):
        return SketchTypeSet.none()

    if isinstance(node, Aggregation):
        return _grouping_sprime(plan, node, db, schemas, with_topk_rule=True)

    if isinstance(node, Window):
        return _grouping_sprime(plan, node, db, schemas, with_topk_rule=False)

    raise PlanError(f"not an operator node: {node!r}")


def safe_types(plan, table_access_id: int, db) -> SketchTypeSet:
    """Sketch types safe for the given table access under the whole plan:
    the intersection of every ancestor's verdict with the access's own."""
    node = node_at(plan, table_access_id)
    if not isinstance(node, TableAccess):
        raise PlanError(f"operator {table_access_id} is not a table access")
    result = SketchTypeSet.all_types()
    for op_id in (*path_to_root(plan, table_access_id), table_access_id):
        result = result.intersect(sprime(plan, op_id, db))
        if result.is_none:
            break
    return result


def range_safe_attributes(plan, table_access_id: int, db) -> frozenset:
    """Attributes of the accessed relation on which a range sketch is safe."""
    sts = safe_types(plan, table_access_id, db)
    rel = db[node_at(plan, table_access_id).relation]
    names = rel.schema.names()
    if sts.is_all:
        return frozenset(names)
    return frozenset(a for k, a in sts.types if k == RANGE and a in names)


# ---------------------------------------------------------------------------
# dynamic check and candidate pre-filter


def is_safe_dynamic(plan, db, instances) -> bool:
    """True iff evaluation over the sketch instances (row ids per
    relation; relations not listed stay complete) matches full evaluation."""
    restricted = {
        name: rel.restrict(frozenset(instances[name])) if name in instances else rel
        for name, rel in db.items()
    }
    return evaluate(plan, db).as_bag() == evaluate(plan, restricted).as_bag()


def passes_distinct_prefilter(relation, attribute: str, fragment_count: int) -> bool:
    """A candidate attribute must have at least as many distinct values
    as the partition has fragments, or ranges degenerate."""
    return len(set(relation.column(attribute))) >= fragment_count
