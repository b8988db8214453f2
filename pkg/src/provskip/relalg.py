"""Bag-semantics relational algebra over in-memory typed relations.

A query is a tree of frozen operator dataclasses. evaluate() walks the
tree bottom-up and returns a new Relation. evaluate_annotated() threads
per-row input lineage (relation name -> row ids) through every operator
so callers can recover which input rows produced each output row.

Multiplicities are explicit: every physical row carries a count >= 1,
and operators combine counts exactly (union adds, intersection takes the
minimum, difference subtracts with a floor of zero, projection and
duplicate elimination merge equal tuples, and so on).
"""

from __future__ import annotations

import functools
import itertools
import operator
from collections import Counter
from dataclasses import dataclass, field, replace

INTEGER = "integer"
REAL = "real"
TEXT = "text"
COLUMN_TYPES = (INTEGER, REAL, TEXT)

AGG_FUNCS = ("sum", "count", "avg", "min", "max")

COMPARATORS = {
    "<": operator.lt,
    "<=": operator.le,
    "=": operator.eq,
    ">=": operator.ge,
    ">": operator.gt,
}


class EngineError(Exception):
    """Base class for engine failures."""


class UnknownRelationError(EngineError):
    pass


class SchemaError(EngineError):
    pass


class PlanError(EngineError):
    pass


# ---------------------------------------------------------------------------
# schemas and relations


@dataclass(frozen=True)
class Schema:
    relation_name: str
    attributes: tuple[tuple[str, str], ...]  # (name, type)
    primary_key: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.attributes:
            raise SchemaError("schema needs at least one attribute")
        names = [a for a, _ in self.attributes]
        if len(set(names)) != len(names):
            raise SchemaError(f"duplicate attribute names in {self.relation_name}")
        for a, t in self.attributes:
            if t not in COLUMN_TYPES:
                raise SchemaError(f"unknown column type {t!r} for {a}")
        for a in self.primary_key:
            if a not in names:
                raise SchemaError(f"primary key attribute {a} not in schema")

    def names(self) -> tuple[str, ...]:
        return tuple(a for a, _ in self.attributes)

    def index(self, attr: str) -> int:
        for i, (a, _) in enumerate(self.attributes):
            if a == attr:
                return i
        raise SchemaError(f"unknown attribute {attr} in {self.relation_name}")

    def type_of(self, attr: str) -> str:
        return self.attributes[self.index(attr)][1]

    def has(self, attr: str) -> bool:
        return any(a == attr for a, _ in self.attributes)

    def is_numeric(self, attr: str) -> bool:
        return self.type_of(attr) in (INTEGER, REAL)


@dataclass
class Relation:
    schema: Schema
    rows: list[tuple]
    mults: list[int]
    row_ids: list[int]

    @classmethod
    def build(cls, schema, rows, mults=None, row_ids=None) -> "Relation":
        rows = [tuple(r) for r in rows]
        if mults is None:
            mults = [1] * len(rows)
        if row_ids is None:
            row_ids = list(range(len(rows)))
        arity = len(schema.attributes)
        for r in rows:
            if len(r) != arity:
                raise SchemaError(f"row arity {len(r)} != schema arity {arity}")
        if any(m < 1 for m in mults):
            raise SchemaError("multiplicities must be >= 1")
        if len(set(row_ids)) != len(row_ids):
            raise SchemaError("row ids must be unique")
        if not (len(rows) == len(mults) == len(row_ids)):
            raise SchemaError("rows, mults and row_ids must align")
        return cls(schema, rows, list(mults), list(row_ids))

    @property
    def total_rows(self) -> int:
        return sum(self.mults)

    def column(self, attr: str) -> list:
        i = self.schema.index(attr)
        return [r[i] for r in self.rows]

    def as_bag(self) -> Counter:
        bag: Counter = Counter()
        for r, m in zip(self.rows, self.mults):
            bag[r] += m
        return bag

    def restrict(self, keep_ids) -> "Relation":
        """Sub-relation containing only the given row ids."""
        keep = set(keep_ids)
        rows, mults, rids = [], [], []
        for r, m, rid in zip(self.rows, self.mults, self.row_ids):
            if rid in keep:
                rows.append(r)
                mults.append(m)
                rids.append(rid)
        return Relation(self.schema, rows, mults, rids)

    def row_by_id(self) -> dict[int, tuple]:
        return dict(zip(self.row_ids, self.rows))


# ---------------------------------------------------------------------------
# expressions and predicates


@dataclass(frozen=True)
class Attr:
    name: str


@dataclass(frozen=True)
class Const:
    value: object


@dataclass(frozen=True)
class Add:
    left: object
    right: object


@dataclass(frozen=True)
class Mul:
    left: object
    right: object


@dataclass(frozen=True)
class Comparison:
    left: object
    op: str
    right: object

    def __post_init__(self):
        if self.op not in COMPARATORS:
            raise PlanError(f"unknown comparison operator {self.op!r}")


@dataclass(frozen=True)
class And:
    left: object
    right: object


@dataclass(frozen=True)
class Or:
    left: object
    right: object


@dataclass(frozen=True)
class Not:
    child: object


def expr_attrs(expr) -> set[str]:
    if isinstance(expr, Attr):
        return {expr.name}
    if isinstance(expr, Const):
        return set()
    if isinstance(expr, (Add, Mul)):
        return expr_attrs(expr.left) | expr_attrs(expr.right)
    raise PlanError(f"not an expression: {expr!r}")


def pred_attrs(pred) -> set[str]:
    if isinstance(pred, Comparison):
        return expr_attrs(pred.left) | expr_attrs(pred.right)
    if isinstance(pred, (And, Or)):
        return pred_attrs(pred.left) | pred_attrs(pred.right)
    if isinstance(pred, Not):
        return pred_attrs(pred.child)
    raise PlanError(f"not a predicate: {pred!r}")


def _const_type(value) -> str:
    if isinstance(value, bool):
        raise SchemaError("boolean constants are not supported")
    if isinstance(value, int):
        return INTEGER
    if isinstance(value, float):
        return REAL
    if isinstance(value, str):
        return TEXT
    raise SchemaError(f"unsupported constant {value!r}")


def expr_type(expr, schema: Schema) -> str:
    if isinstance(expr, Attr):
        return schema.type_of(expr.name)
    if isinstance(expr, Const):
        return _const_type(expr.value)
    if isinstance(expr, (Add, Mul)):
        lt = expr_type(expr.left, schema)
        rt = expr_type(expr.right, schema)
        if TEXT in (lt, rt):
            raise SchemaError("arithmetic over text values")
        return INTEGER if lt == rt == INTEGER else REAL
    raise PlanError(f"not an expression: {expr!r}")


def check_predicate(pred, schema: Schema) -> None:
    if isinstance(pred, Comparison):
        lt = expr_type(pred.left, schema)
        rt = expr_type(pred.right, schema)
        numeric = (INTEGER, REAL)
        if not ((lt in numeric and rt in numeric) or (lt == rt == TEXT)):
            raise SchemaError(f"type mismatch in comparison: {lt} {pred.op} {rt}")
    elif isinstance(pred, (And, Or)):
        check_predicate(pred.left, schema)
        check_predicate(pred.right, schema)
    elif isinstance(pred, Not):
        check_predicate(pred.child, schema)
    else:
        raise PlanError(f"not a predicate: {pred!r}")


def eval_expr(expr, idx: dict[str, int], row: tuple):
    if isinstance(expr, Attr):
        return row[idx[expr.name]]
    if isinstance(expr, Const):
        return expr.value
    if isinstance(expr, Add):
        return eval_expr(expr.left, idx, row) + eval_expr(expr.right, idx, row)
    if isinstance(expr, Mul):
        return eval_expr(expr.left, idx, row) * eval_expr(expr.right, idx, row)
    raise PlanError(f"not an expression: {expr!r}")


def eval_pred(pred, idx: dict[str, int], row: tuple) -> bool:
    if isinstance(pred, Comparison):
        return COMPARATORS[pred.op](
            eval_expr(pred.left, idx, row), eval_expr(pred.right, idx, row)
        )
    if isinstance(pred, And):
        return eval_pred(pred.left, idx, row) and eval_pred(pred.right, idx, row)
    if isinstance(pred, Or):
        return eval_pred(pred.left, idx, row) or eval_pred(pred.right, idx, row)
    if isinstance(pred, Not):
        return not eval_pred(pred.child, idx, row)
    raise PlanError(f"not a predicate: {pred!r}")


# ---------------------------------------------------------------------------
# operator nodes

# order key: (attribute, descending)
OrderKey = tuple[str, bool]


@dataclass(frozen=True)
class TableAccess:
    relation: str
    op_id: int | None = field(default=None, compare=False)


@dataclass(frozen=True)
class Selection:
    child: object
    predicate: object
    op_id: int | None = field(default=None, compare=False)


@dataclass(frozen=True)
class Projection:
    child: object
    exprs: tuple
    names: tuple[str, ...]
    op_id: int | None = field(default=None, compare=False)


@dataclass(frozen=True)
class Union:
    left: object
    right: object
    op_id: int | None = field(default=None, compare=False)


@dataclass(frozen=True)
class Intersection:
    left: object
    right: object
    op_id: int | None = field(default=None, compare=False)


@dataclass(frozen=True)
class Difference:
    left: object
    right: object
    op_id: int | None = field(default=None, compare=False)


@dataclass(frozen=True)
class CrossProduct:
    left: object
    right: object
    op_id: int | None = field(default=None, compare=False)


@dataclass(frozen=True)
class Join:
    left: object
    right: object
    predicate: object
    op_id: int | None = field(default=None, compare=False)


@dataclass(frozen=True)
class Aggregation:
    child: object
    func: str
    agg_expr: object  # None only for count
    group_by: tuple[str, ...]
    out_name: str = "result"
    op_id: int | None = field(default=None, compare=False)


@dataclass(frozen=True)
class DuplicateElim:
    child: object
    op_id: int | None = field(default=None, compare=False)


@dataclass(frozen=True)
class Window:
    child: object
    func: str
    agg_expr: object
    partition_by: tuple[str, ...]
    order_by: tuple[OrderKey, ...]
    out_name: str = "wresult"
    op_id: int | None = field(default=None, compare=False)


@dataclass(frozen=True)
class TopK:
    child: object
    limit: int
    order_by: tuple[OrderKey, ...]
    op_id: int | None = field(default=None, compare=False)


Node = (
    TableAccess
    | Selection
    | Projection
    | Union
    | Intersection
    | Difference
    | CrossProduct
    | Join
    | Aggregation
    | DuplicateElim
    | Window
    | TopK
)

_UNARY = (Selection, Projection, Aggregation, DuplicateElim, Window, TopK)
_BINARY = (Union, Intersection, Difference, CrossProduct, Join)


def children(node) -> tuple:
    if isinstance(node, TableAccess):
        return ()
    if isinstance(node, _UNARY):
        return (node.child,)
    if isinstance(node, _BINARY):
        return (node.left, node.right)
    raise PlanError(f"not an operator node: {node!r}")


def with_children(node, kids: tuple):
    if isinstance(node, TableAccess):
        return node
    if isinstance(node, _UNARY):
        return replace(node, child=kids[0])
    return replace(node, left=kids[0], right=kids[1])


def assign_ids(plan):
    """Return an equal tree whose op_ids are pre-order positions (root = 1)."""
    counter = itertools.count(1)

    def walk(node):
        nid = next(counter)
        kids = tuple(walk(c) for c in children(node))
        return replace(with_children(node, kids) if kids else node, op_id=nid)

    return walk(plan)


def _index_plan(plan) -> list[tuple[int, object, int | None]]:
    """Pre-order (id, node, parent_id) triples, ids recomputed positionally."""
    out = []
    counter = itertools.count(1)

    def walk(node, parent):
        nid = next(counter)
        out.append((nid, node, parent))
        for c in children(node):
            walk(c, nid)

    walk(plan, None)
    return out


def node_at(plan, op_id: int):
    for nid, node, _ in _index_plan(plan):
        if nid == op_id:
            return node
    raise PlanError(f"no operator with id {op_id}")


def path_to_root(plan, op_id: int) -> tuple[int, ...]:
    """Ids of the strict ancestors of op_id, ordered root first."""
    entries = {nid: parent for nid, _, parent in _index_plan(plan)}
    if op_id not in entries:
        raise PlanError(f"no operator with id {op_id}")
    path = []
    cur = entries[op_id]
    while cur is not None:
        path.append(cur)
        cur = entries[cur]
    return tuple(reversed(path))


def table_accesses(plan) -> list[tuple[int, str]]:
    """(op_id, relation name) for every table access, in pre-order."""
    return [
        (nid, node.relation)
        for nid, node, _ in _index_plan(plan)
        if isinstance(node, TableAccess)
    ]


# ---------------------------------------------------------------------------
# schema inference (doubles as static plan validation)


def _agg_out_type(func: str, expr, schema: Schema) -> str:
    if func not in AGG_FUNCS:
        raise PlanError(f"unknown aggregation function {func!r}")
    if func == "count":
        if expr is not None:
            expr_type(expr, schema)  # must still be well formed
        return INTEGER
    if expr is None:
        raise PlanError(f"{func} requires an input expression")
    t = expr_type(expr, schema)
    if t == TEXT:
        raise SchemaError(f"{func} over a text column")
    if func == "avg":
        return REAL
    return t  # sum/min/max keep the input type


def infer_schema(plan, schemas) -> Schema:
    """Output schema of the plan; raises on any static inconsistency."""
    if isinstance(plan, TableAccess):
        if plan.relation not in schemas:
            raise UnknownRelationError(plan.relation)
        return schemas[plan.relation]

    if isinstance(plan, Selection):
        s = infer_schema(plan.child, schemas)
        check_predicate(plan.predicate, s)
        return s

    if isinstance(plan, Projection):
        s = infer_schema(plan.child, schemas)
        if len(plan.exprs) != len(plan.names) or not plan.names:
            raise PlanError("projection expressions and names must align")
        if len(set(plan.names)) != len(plan.names):
            raise SchemaError("duplicate projection output names")
        attrs = tuple(
            (name, expr_type(e, s)) for e, name in zip(plan.exprs, plan.names)
        )
        return Schema(s.relation_name, attrs)

    if isinstance(plan, (Union, Intersection, Difference)):
        ls = infer_schema(plan.left, schemas)
        rs = infer_schema(plan.right, schemas)
        if ls.attributes != rs.attributes:
            raise SchemaError("set operation inputs must share the schema")
        return Schema(ls.relation_name, ls.attributes)

    if isinstance(plan, (CrossProduct, Join)):
        ls = infer_schema(plan.left, schemas)
        rs = infer_schema(plan.right, schemas)
        overlap = set(ls.names()) & set(rs.names())
        if overlap:
            raise SchemaError(f"join inputs share attribute names: {sorted(overlap)}")
        merged = Schema(ls.relation_name, ls.attributes + rs.attributes)
        if isinstance(plan, Join):
            check_predicate(plan.predicate, merged)
        return merged

    if isinstance(plan, Aggregation):
        s = infer_schema(plan.child, schemas)
        for g in plan.group_by:
            s.index(g)
        if plan.out_name in plan.group_by:
            raise SchemaError("aggregate output name collides with a group attribute")
        out_t = _agg_out_type(plan.func, plan.agg_expr, s)
        attrs = tuple((g, s.type_of(g)) for g in plan.group_by) + (
            (plan.out_name, out_t),
        )
        return Schema(s.relation_name, attrs)

    if isinstance(plan, DuplicateElim):
        return infer_schema(plan.child, schemas)

    if isinstance(plan, Window):
        s = infer_schema(plan.child, schemas)
        for g in plan.partition_by:
            s.index(g)
        if not plan.order_by:
            raise PlanError("window requires an order")
        for a, _ in plan.order_by:
            s.index(a)
        if set(plan.partition_by) & {a for a, _ in plan.order_by}:
            raise PlanError("window partition and order attributes must be disjoint")
        if s.has(plan.out_name):
            raise SchemaError("window output name collides with input attribute")
        out_t = _agg_out_type(plan.func, plan.agg_expr, s)
        return Schema(s.relation_name, s.attributes + ((plan.out_name, out_t),))

    if isinstance(plan, TopK):
        s = infer_schema(plan.child, schemas)
        if plan.limit < 0:
            raise PlanError("limit must be nonnegative")
        if not plan.order_by:
            raise PlanError("top-k requires an order")
        for a, _ in plan.order_by:
            s.index(a)
        return s

    raise PlanError(f"not an operator node: {plan!r}")


# ---------------------------------------------------------------------------
# evaluation

# internal row: (values, multiplicity, lineage or None)
# lineage: dict relation-name -> frozenset of row ids


def _lin_union(a, b):
    if not b:
        return a or {}
    if not a:
        return b
    out = dict(a)
    for k, v in b.items():
        cur = out.get(k)
        out[k] = v if cur is None else cur | v
    return out


def _merge(rows, track: bool):
    """Combine equal value tuples: sum multiplicities, union lineage."""
    mults: dict[tuple, int] = {}
    if not track:
        for vals, m, _ in rows:
            mults[vals] = mults.get(vals, 0) + m
        return [(vals, m, None) for vals, m in mults.items()]
    lins: dict[tuple, dict] = {}
    for vals, m, ln in rows:
        if vals in mults:
            mults[vals] += m
            lins[vals] = _lin_union(lins[vals], ln)
        else:
            mults[vals] = m
            lins[vals] = ln or {}
    return [(vals, mults[vals], lins[vals]) for vals in mults]


@functools.total_ordering
class _Rev:
    """Inverts comparisons, for descending sort keys over any ordered type."""

    __slots__ = ("v",)

    def __init__(self, v):
        self.v = v

    def __eq__(self, other):
        return self.v == other.v

    def __lt__(self, other):
        return other.v < self.v


def _order_key(order_by, idx):
    cols = [(idx[a], desc) for a, desc in order_by]

    def key(vals):
        return tuple(_Rev(vals[i]) if desc else vals[i] for i, desc in cols)

    return key


def _agg_value(func: str, pairs):
    """Aggregate over a bag of (value, multiplicity) pairs."""
    if func == "count":
        return sum(m for _, m in pairs)
    if func == "sum":
        return sum(v * m for v, m in pairs)
    if func == "avg":
        n = sum(m for _, m in pairs)
        return sum(v * m for v, m in pairs) / n
    if func == "min":
        return min(v for v, _ in pairs)
    if func == "max":
        return max(v for v, _ in pairs)
    raise PlanError(f"unknown aggregation function {func!r}")


def _eval(node, db, schemas, track: bool):
    if isinstance(node, TableAccess):
        rel = db[node.relation]
        if track:
            return [
                (vals, m, {node.relation: frozenset((rid,))})
                for vals, m, rid in zip(rel.rows, rel.mults, rel.row_ids)
            ]
        return [(vals, m, None) for vals, m in zip(rel.rows, rel.mults)]

    if isinstance(node, Selection):
        rows = _eval(node.child, db, schemas, track)
        idx = _attr_idx(node.child, schemas)
        return [r for r in rows if eval_pred(node.predicate, idx, r[0])]

    if isinstance(node, Projection):
        rows = _eval(node.child, db, schemas, track)
        idx = _attr_idx(node.child, schemas)
        out = [
            (tuple(eval_expr(e, idx, vals) for e in node.exprs), m, ln)
            for vals, m, ln in rows
        ]
        return _merge(out, track)

    if isinstance(node, Union):
        rows = _eval(node.left, db, schemas, track) + _eval(
            node.right, db, schemas, track
        )
        return _merge(rows, track)

    if isinstance(node, (Intersection, Difference)):
        left = _merge(_eval(node.left, db, schemas, track), track)
        right = _merge(_eval(node.right, db, schemas, track), track)
        rmap = {vals: (m, ln) for vals, m, ln in right}
        out = []
        for vals, m, ln in left:
            rm, rln = rmap.get(vals, (0, None))
            keep = min(m, rm) if isinstance(node, Intersection) else max(m - rm, 0)
            if keep > 0:
                out.append((vals, keep, _lin_union(ln, rln) if track else None))
        return out

    if isinstance(node, (CrossProduct, Join)):
        left = _eval(node.left, db, schemas, track)
        right = _eval(node.right, db, schemas, track)
        pred = node.predicate if isinstance(node, Join) else None
        idx = _attr_idx(node, schemas) if pred is not None else None
        out = []
        for lv, lm, lln in left:
            for rv, rm, rln in right:
                vals = lv + rv
                if pred is not None and not eval_pred(pred, idx, vals):
                    continue
                out.append((vals, lm * rm, _lin_union(lln, rln) if track else None))
        return out

    if isinstance(node, Aggregation):
        rows = _eval(node.child, db, schemas, track)
        idx = _attr_idx(node.child, schemas)
        gidx = [idx[g] for g in node.group_by]
        groups: dict[tuple, list] = {}
        lins: dict[tuple, dict] = {}
        for vals, m, ln in rows:
            key = tuple(vals[i] for i in gidx)
            v = None if node.agg_expr is None else eval_expr(node.agg_expr, idx, vals)
            groups.setdefault(key, []).append((v, m))
            if track:
                lins[key] = _lin_union(lins.get(key), ln)
        return [
            (key + (_agg_value(node.func, pairs),), 1, lins.get(key) if track else None)
            for key, pairs in groups.items()
        ]

    if isinstance(node, DuplicateElim):
        rows = _merge(_eval(node.child, db, schemas, track), track)
        return [(vals, 1, ln) for vals, _, ln in rows]

    if isinstance(node, Window):
        rows = _merge(_eval(node.child, db, schemas, track), track)
        idx = _attr_idx(node.child, schemas)
        pidx = [idx[g] for g in node.partition_by]
        okey = _order_key(node.order_by, idx)
        parts: dict[tuple, list] = {}
        plins: dict[tuple, dict] = {}
        for vals, m, ln in rows:
            key = tuple(vals[i] for i in pidx)
            parts.setdefault(key, []).append((vals, m))
            if track:
                plins[key] = _lin_union(plins.get(key), ln)
        out = []
        for key, members in parts.items():
            ln = plins.get(key) if track else None
            for vals, m in members:
                k = okey(vals)
                window = []
                for v2, m2 in members:
                    if okey(v2) <= k:
                        v = None if node.agg_expr is None else eval_expr(
                            node.agg_expr, idx, v2
                        )
                        window.append((v, m2))
                out.append((vals + (_agg_value(node.func, window),), m, ln))
        return out

    if isinstance(node, TopK):
        rows = _merge(_eval(node.child, db, schemas, track), track)
        idx = _attr_idx(node.child, schemas)
        okey = _order_key(node.order_by, idx)
        # stable total order: requested order first, then full tuple value
        # order, so that evaluation over any sufficient subset cuts the
        # same boundary
        rows.sort(key=lambda r: (okey(r[0]), r[0]))
        out = []
        remaining = node.limit
        for vals, m, ln in rows:
            if remaining <= 0:
                break
            take = min(m, remaining)
            out.append((vals, take, ln))
            remaining -= take
        return out

    raise PlanError(f"not an operator node: {node!r}")


def _attr_idx(node, schemas) -> dict[str, int]:
    s = infer_schema(node, schemas)
    return {a: i for i, (a, _) in enumerate(s.attributes)}


def _schemas_of(db) -> dict[str, Schema]:
    return {name: rel.schema for name, rel in db.items()}


def evaluate(plan, db) -> Relation:
    """Evaluate the plan over db (relation name -> Relation)."""
    schemas = _schemas_of(db)
    out_schema = infer_schema(plan, schemas)  # validates the whole tree
    rows = _merge(_eval(plan, db, schemas, False), False)
    return Relation.build(
        Schema("result", out_schema.attributes),
        [vals for vals, _, _ in rows],
        [m for _, m, _ in rows],
    )


def evaluate_annotated(plan, db):
    """Like evaluate, but also returns per-output-row input lineage.

    Returns (relation, lineages) where lineages[i] maps relation name ->
    frozenset of row ids that produced relation.rows[i].
    """
    schemas = _schemas_of(db)
    out_schema = infer_schema(plan, schemas)
    rows = _merge(_eval(plan, db, schemas, True), True)
    rel = Relation.build(
        Schema("result", out_schema.attributes),
        [vals for vals, _, _ in rows],
        [m for _, m, _ in rows],
    )
    lineages = [{k: frozenset(v) for k, v in (ln or {}).items()} for _, _, ln in rows]
    return rel, lineages
