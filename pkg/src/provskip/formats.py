"""File formats: CSV relations with a JSON schema sidecar, query plans,
range sets, and provenance row-id maps."""

from __future__ import annotations

import csv
import json

from .partition import RangeSet
from .relalg import (
    INTEGER,
    REAL,
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
    EngineError,
    Intersection,
    Join,
    Mul,
    Not,
    Or,
    Projection,
    Relation,
    Schema,
    Selection,
    TableAccess,
    TopK,
    Union,
    Window,
)


class FormatError(EngineError):
    pass


# ---------------------------------------------------------------------------
# schema sidecar and CSV data


def schema_to_json(schema: Schema) -> dict:
    return {
        "relation": schema.relation_name,
        "attributes": [[n, t] for n, t in schema.attributes],
        "primary_key": list(schema.primary_key),
    }


def schema_from_json(obj: dict) -> Schema:
    try:
        attrs = tuple((n, t) for n, t in obj["attributes"])
        return Schema(obj["relation"], attrs, tuple(obj.get("primary_key", ())))
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad schema object: {exc}") from exc


def load_schema(path) -> Schema:
    with open(path) as f:
        return schema_from_json(json.load(f))


def _parse_value(text: str, type_name: str):
    try:
        if type_name == INTEGER:
            return int(text)
        if type_name == REAL:
            return float(text)
        if type_name == TEXT:
            return text
    except ValueError as exc:
        raise FormatError(f"cannot parse {text!r} as {type_name}") from exc
    raise FormatError(f"unknown type {type_name!r}")


def load_relation_csv(data_path, schema: Schema) -> Relation:
    """CSV with a header row matching the schema's attribute names."""
    with open(data_path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError("empty CSV file") from None
        if tuple(header) != schema.names():
            raise FormatError(
                f"CSV header {header} does not match schema {list(schema.names())}"
            )
        types = [t for _, t in schema.attributes]
        rows = []
        for lineno, raw in enumerate(reader, start=2):
            if len(raw) != len(types):
                raise FormatError(f"line {lineno}: expected {len(types)} fields")
            rows.append(tuple(_parse_value(v, t) for v, t in zip(raw, types)))
    return Relation.build(schema, rows)


def dump_relation_csv(rel: Relation, path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(rel.schema.names())
        for row, mult in zip(rel.rows, rel.mults):
            for _ in range(mult):
                writer.writerow(row)


# ---------------------------------------------------------------------------
# expressions / predicates / plans


def expr_to_json(expr):
    if isinstance(expr, Attr):
        return {"attr": expr.name}
    if isinstance(expr, Const):
        return {"const": expr.value}
    if isinstance(expr, Add):
        return {"add": [expr_to_json(expr.left), expr_to_json(expr.right)]}
    if isinstance(expr, Mul):
        return {"mul": [expr_to_json(expr.left), expr_to_json(expr.right)]}
    raise FormatError(f"not an expression: {expr!r}")


def expr_from_json(obj):
    if not isinstance(obj, dict) or len(obj) != 1:
        raise FormatError(f"bad expression object: {obj!r}")
    key, val = next(iter(obj.items()))
    if key == "attr":
        return Attr(val)
    if key == "const":
        return Const(val)
    if key in ("add", "mul"):
        left, right = (expr_from_json(v) for v in val)
        return Add(left, right) if key == "add" else Mul(left, right)
    raise FormatError(f"unknown expression kind {key!r}")


def pred_to_json(pred):
    if isinstance(pred, Comparison):
        return {"cmp": [expr_to_json(pred.left), pred.op, expr_to_json(pred.right)]}
    if isinstance(pred, And):
        return {"and": [pred_to_json(pred.left), pred_to_json(pred.right)]}
    if isinstance(pred, Or):
        return {"or": [pred_to_json(pred.left), pred_to_json(pred.right)]}
    if isinstance(pred, Not):
        return {"not": pred_to_json(pred.child)}
    raise FormatError(f"not a predicate: {pred!r}")


def pred_from_json(obj):
    if not isinstance(obj, dict) or len(obj) != 1:
        raise FormatError(f"bad predicate object: {obj!r}")
    key, val = next(iter(obj.items()))
    if key == "cmp":
        left, op, right = val
        return Comparison(expr_from_json(left), op, expr_from_json(right))
    if key in ("and", "or"):
        left, right = (pred_from_json(v) for v in val)
        return And(left, right) if key == "and" else Or(left, right)
    if key == "not":
        return Not(pred_from_json(val))
    raise FormatError(f"unknown predicate kind {key!r}")


def plan_to_json(plan) -> dict:
    if isinstance(plan, TableAccess):
        return {"op": "table", "relation": plan.relation}
    if isinstance(plan, Selection):
        return {
            "op": "select",
            "predicate": pred_to_json(plan.predicate),
            "child": plan_to_json(plan.child),
        }
    if isinstance(plan, Projection):
        return {
            "op": "project",
            "exprs": [expr_to_json(e) for e in plan.exprs],
            "names": list(plan.names),
            "child": plan_to_json(plan.child),
        }
    if isinstance(plan, (Union, Intersection, Difference, CrossProduct)):
        op = {
            Union: "union",
            Intersection: "intersect",
            Difference: "difference",
            CrossProduct: "product",
        }[type(plan)]
        return {
            "op": op,
            "left": plan_to_json(plan.left),
            "right": plan_to_json(plan.right),
        }
    if isinstance(plan, Join):
        return {
            "op": "join",
            "predicate": pred_to_json(plan.predicate),
            "left": plan_to_json(plan.left),
            "right": plan_to_json(plan.right),
        }
    if isinstance(plan, Aggregation):
        return {
            "op": "aggregate",
            "func": plan.func,
            "expr": None if plan.agg_expr is None else expr_to_json(plan.agg_expr),
            "group_by": list(plan.group_by),
            "out": plan.out_name,
            "child": plan_to_json(plan.child),
        }
    if isinstance(plan, DuplicateElim):
        return {"op": "distinct", "child": plan_to_json(plan.child)}
    if isinstance(plan, Window):
        return {
            "op": "window",
            "func": plan.func,
            "expr": expr_to_json(plan.agg_expr),
            "partition_by": list(plan.partition_by),
            "order_by": [[a, d] for a, d in plan.order_by],
            "out": plan.out_name,
            "child": plan_to_json(plan.child),
        }
    if isinstance(plan, TopK):
        return {
            "op": "topk",
            "limit": plan.limit,
            "order_by": [[a, d] for a, d in plan.order_by],
            "child": plan_to_json(plan.child),
        }
    raise FormatError(f"not an operator node: {plan!r}")


def plan_from_json(obj) -> object:
    if not isinstance(obj, dict) or "op" not in obj:
        raise FormatError(f"bad plan object: {obj!r}")
    op = obj["op"]
    try:
        if op == "table":
            return TableAccess(obj["relation"])
        if op == "select":
            return Selection(plan_from_json(obj["child"]), pred_from_json(obj["predicate"]))
        if op == "project":
            return Projection(
                plan_from_json(obj["child"]),
                tuple(expr_from_json(e) for e in obj["exprs"]),
                tuple(obj["names"]),
            )
        if op in ("union", "intersect", "difference", "product"):
            cls = {
                "union": Union,
                "intersect": Intersection,
                "difference": Difference,
                "product": CrossProduct,
            }[op]
            return cls(plan_from_json(obj["left"]), plan_from_json(obj["right"]))
        if op == "join":
            return Join(
                plan_from_json(obj["left"]),
                plan_from_json(obj["right"]),
                pred_from_json(obj["predicate"]),
            )
        if op == "aggregate":
            expr = obj.get("expr")
            return Aggregation(
                plan_from_json(obj["child"]),
                func=obj["func"],
                agg_expr=None if expr is None else expr_from_json(expr),
                group_by=tuple(obj["group_by"]),
                out_name=obj.get("out", "result"),
            )
        if op == "distinct":
            return DuplicateElim(plan_from_json(obj["child"]))
        if op == "window":
            return Window(
                plan_from_json(obj["child"]),
                func=obj["func"],
                agg_expr=expr_from_json(obj["expr"]),
                partition_by=tuple(obj["partition_by"]),
                order_by=tuple((a, bool(d)) for a, d in obj["order_by"]),
                out_name=obj.get("out", "wresult"),
            )
        if op == "topk":
            return TopK(
                plan_from_json(obj["child"]),
                limit=obj["limit"],
                order_by=tuple((a, bool(d)) for a, d in obj["order_by"]),
            )
    except (KeyError, TypeError) as exc:
        raise FormatError(f"bad {op!r} node: {exc}") from exc
    raise FormatError(f"unknown operator kind {op!r}")


def load_plan(path):
    with open(path) as f:
        return plan_from_json(json.load(f))


# ---------------------------------------------------------------------------
# range sets and provenance maps


def range_set_to_json(rs: RangeSet) -> dict:
    return {"attribute": rs.attribute, "ranges": [[lo, hi] for lo, hi in rs.ranges]}


def range_set_from_json(obj) -> RangeSet:
    try:
        return RangeSet(obj["attribute"], tuple((lo, hi) for lo, hi in obj["ranges"]))
    except (KeyError, TypeError) as exc:
        raise FormatError(f"bad range set object: {exc}") from exc


def provenance_to_json(prov: dict) -> dict:
    return {rel: sorted(ids) for rel, ids in prov.items()}


def provenance_from_json(obj) -> dict:
    return {rel: frozenset(ids) for rel, ids in obj.items()}
