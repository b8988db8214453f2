"""Row-membership sketches over range partitions.

A sketch remembers, for one partitioned attribute of one relation, which
ranges hold at least one row that some query's answer depends on.  The
union of those ranges' rows (the sketch instance) is enough to answer the
query, so later runs can scan only that slice.  An index keeps captured
sketches and answers reuse probes: a new query may reuse a sketch when it
has the same normalized shape and its thresholds can only shrink the set
of contributing rows.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .lineage import lineage
from .partition import RangeSet, build_range_partition
from .relalg import (
    And,
    Attr,
    Comparison,
    Const,
    EngineError,
    Or,
    eval_expr,
)
from .safety import monotonicity_one, Bound
from .formats import pred_to_json, expr_to_json, range_set_from_json
from .templates import TemplateInfo, recognize, where_comparison


class SketchError(EngineError):
    pass


@dataclass(frozen=True)
class Sketch:
    relation: str
    range_set: RangeSet
    member_bits: int  # bit i set when range i holds a contributing row
    size_rows: int  # rows (with multiplicity) in all member ranges
    fingerprint: str | None

    @property
    def attribute(self) -> str:
        return self.range_set.attribute

    def members(self) -> tuple[int, ...]:
        return tuple(
            i for i in range(len(self.range_set)) if self.member_bits >> i & 1
        )


def capture_rows(partition, row_ids, fingerprint: str | None = None) -> Sketch:
    """Sketch of a known contributing-row set over a prebuilt partition."""
    wanted = row_ids if isinstance(row_ids, (set, frozenset)) else set(row_ids)
    bits = 0
    size = 0
    for i, ids in enumerate(partition.fragments):
        if ids & wanted:
            bits |= 1 << i
            size += partition.fragment_sizes[i]
    return Sketch(
        relation=partition.relation_name,
        range_set=partition.range_set,
        member_bits=bits,
        size_rows=size,
        fingerprint=fingerprint,
    )


def capture(plan, db, relation: str, range_set: RangeSet) -> Sketch:
    """Build the sketch of plan over one partitioned attribute of relation."""
    if relation not in db:
        raise SketchError(f"unknown relation {relation!r}")
    prov = lineage(plan, db).get(relation)
    if prov is None:
        raise SketchError(f"plan does not access {relation!r}")
    partition = build_range_partition(db[relation], range_set)
    return capture_rows(partition, prov, fingerprint(plan, db))


def instance(sketch: Sketch, db, partition=None) -> frozenset:
    """Row ids of the relation slice the sketch stands for.

    An already-built partition of the same relation and range set skips the
    rebuild; it is the caller's job that the two match.
    """
    if partition is None:
        if sketch.relation not in db:
            raise SketchError(f"unknown relation {sketch.relation!r}")
        partition = build_range_partition(db[sketch.relation], sketch.range_set)
    ids: set = set()
    for i in sketch.members():
        ids |= partition.fragments[i]
    return frozenset(ids)


def selectivity(sketch: Sketch, db) -> float:
    if sketch.relation not in db:
        raise SketchError(f"unknown relation {sketch.relation!r}")
    total = db[sketch.relation].total_rows
    if total == 0:
        return 0.0
    return sketch.size_rows / total


def compile_filter(sketch: Sketch):
    """Predicate keeping exactly the rows of the member ranges.

    Adjacent member ranges coalesce into one interval; values between two
    ranges never occur in the data (the range set covers every value), so
    the wider interval selects the same rows.
    """
    attr = Attr(sketch.attribute)
    members = sketch.members()
    if not members:
        return Comparison(attr, "<", attr)  # always false
    ranges = sketch.range_set.ranges
    intervals = []
    run_start = members[0]
    prev = members[0]
    for i in members[1:]:
        if i != prev + 1:
            intervals.append((ranges[run_start][0], ranges[prev][1]))
            run_start = i
        prev = i
    intervals.append((ranges[run_start][0], ranges[prev][1]))
    pred = None
    for lo, hi in intervals:
        clause = And(
            Comparison(attr, ">=", Const(lo)), Comparison(attr, "<=", Const(hi))
        )
        pred = clause if pred is None else Or(pred, clause)
    return pred


def sketch_to_json(sketch: Sketch) -> dict:
    return {
        "relation": sketch.relation,
        "attribute": sketch.attribute,
        "ranges": [[lo, hi] for lo, hi in sketch.range_set.ranges],
        "bits": format(sketch.member_bits, "x"),
        "size_rows": sketch.size_rows,
        "fingerprint": sketch.fingerprint,
    }


def sketch_from_json(obj: dict) -> Sketch:
    try:
        range_set = range_set_from_json(
            {"attribute": obj["attribute"], "ranges": obj["ranges"]}
        )
        return Sketch(
            relation=obj["relation"],
            range_set=range_set,
            member_bits=int(obj["bits"], 16),
            size_rows=obj["size_rows"],
            fingerprint=obj.get("fingerprint"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise SketchError(f"bad sketch object: {exc}") from exc


# ---------------------------------------------------------------------------
# fingerprints and reuse


_LOWER = (">", ">=")
_UPPER = ("<", "<=")


def _direction(having) -> str | None:
    if having is None:
        return None
    if having.comparator in _LOWER:
        return "lo"
    if having.comparator in _UPPER:
        return "hi"
    return "eq"


def _canon_expr(expr) -> str | None:
    if expr is None:
        return None
    return json.dumps(expr_to_json(expr), sort_keys=True, separators=(",", ":"))


def fingerprint(plan, db) -> str | None:
    """Normalized shape of a supported query, constants left out.

    Two queries share a fingerprint when they touch the same relations with
    the same join conditions, group by the same attribute set, aggregate
    the same expression with the same function, and filter the aggregate in
    the same direction.  Thresholds and row-filter details are compared
    separately when reuse is decided.
    """
    info = recognize(plan, {name: rel.schema for name, rel in db.items()})
    if info is None:
        return None
    obj = {
        "kind": info.kind,
        "relations": sorted(info.relations),
        "joins": [[list(a), list(b)] for a, b in info.join_pairs],
        "group_by": sorted(info.inner.group_by),
        "agg": [info.inner.func, _canon_expr(info.inner.agg_expr)],
        "dir": _direction(info.inner.having),
    }
    if info.outer is not None:
        obj["outer"] = {
            "group_by": sorted(info.outer.group_by),
            "agg": [info.outer.func, _canon_expr(info.outer.agg_expr)],
            "dir": _direction(info.outer.having),
        }
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


@dataclass
class _ReuseKey:
    nested: bool
    func: str
    agg_expr: object
    fact: str
    where_canon: str | None
    where_cmp: tuple | None  # (gb attr, comparator, constant)
    inner_having: tuple | None  # (comparator, constant)
    outer_having: tuple | None


def _reuse_key(info: TemplateInfo) -> _ReuseKey:
    inner = info.inner.having
    outer = info.outer.having if info.outer is not None else None
    return _ReuseKey(
        nested=info.nested,
        func=info.inner.func,
        agg_expr=info.inner.agg_expr,
        fact=info.fact,
        where_canon=None
        if info.where is None
        else json.dumps(pred_to_json(info.where), sort_keys=True),
        where_cmp=where_comparison(info),
        inner_having=None if inner is None else (inner.comparator, inner.constant),
        outer_having=None if outer is None else (outer.comparator, outer.constant),
    )


def _interval_contained(op_new, c_new, op_old, c_old) -> bool:
    """Does (value op_new c_new) imply (value op_old c_old)?"""
    if op_new in _LOWER and op_old in _LOWER:
        if c_new > c_old:
            return True
        return c_new == c_old and not (op_old == ">" and op_new == ">=")
    if op_new in _UPPER and op_old in _UPPER:
        if c_new < c_old:
            return True
        return c_new == c_old and not (op_old == "<" and op_new == "<=")
    return False


def _where_subsumed(new: _ReuseKey, old: _ReuseKey) -> bool:
    if new.where_canon == old.where_canon:
        return True
    # a filter over a grouping attribute drops whole groups, so adding one
    # (or tightening one) can only lose contributing rows
    if new.where_cmp is None:
        return False
    if old.where_canon is None:
        return True
    if old.where_cmp is None or new.where_cmp[0] != old.where_cmp[0]:
        return False
    return _interval_contained(
        new.where_cmp[1], new.where_cmp[2], old.where_cmp[1], old.where_cmp[2]
    )


def _agg_input_bound(key: _ReuseKey, db) -> Bound:
    if key.agg_expr is None or key.fact not in db:
        return Bound()
    rel = db[key.fact]
    idx = {a: i for i, a in enumerate(rel.schema.names())}
    values = [eval_expr(key.agg_expr, idx, row) for row in rel.rows]
    if not values:
        return Bound()
    return Bound(min(values), max(values))


def _having_subsumed(new: _ReuseKey, old: _ReuseKey, db) -> bool:
    if new.inner_having == old.inner_having:
        return True
    if new.inner_having is None or old.inner_having is None:
        return False
    op_new, c_new = new.inner_having
    op_old, c_old = old.inner_having
    # tightening the threshold is only sound when partial groups cannot
    # overshoot, which is what the monotone direction check guarantees
    if not monotonicity_one(new.func, op_new, _agg_input_bound(new, db)):
        return False
    return _interval_contained(op_new, c_new, op_old, c_old)


@dataclass
class IndexEntry:
    sketch: Sketch
    fingerprint: str
    usage: int = 0
    reuse_key: _ReuseKey | None = None


@dataclass
class SketchIndex:
    entries: list[IndexEntry] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)


def insert(index: SketchIndex, sketch: Sketch, plan, db) -> IndexEntry:
    if sketch.fingerprint is None:
        raise SketchError("only sketches of supported query shapes are indexed")
    info = recognize(plan, {name: rel.schema for name, rel in db.items()})
    if info is None or fingerprint(plan, db) != sketch.fingerprint:
        raise SketchError("plan does not match the sketch fingerprint")
    entry = IndexEntry(sketch, sketch.fingerprint, 0, _reuse_key(info))
    index.entries.append(entry)
    return entry


def find_reusable(index: SketchIndex, plan, db) -> Sketch | None:
    """First indexed sketch the plan may reuse, bumping its usage count.

    Reuse needs an identical fingerprint, a row filter at least as strict,
    and thresholds that are either identical or strictly tighter in the
    monotone direction.  Nested shapes reuse on identical thresholds only:
    the outer aggregate sees estimated inner rows, so threshold slack does
    not translate across levels.
    """
    schemas = {name: rel.schema for name, rel in db.items()}
    info = recognize(plan, schemas)
    if info is None:
        return None
    fp = fingerprint(plan, db)
    new_key = _reuse_key(info)
    for entry in index.entries:
        if entry.fingerprint != fp or entry.reuse_key is None:
            continue
        if new_key.nested:
            # the outer level aggregates the inner level's output, so any
            # slack below changes what the outer level sees: exact match only
            if (
                new_key.where_canon != entry.reuse_key.where_canon
                or new_key.inner_having != entry.reuse_key.inner_having
                or new_key.outer_having != entry.reuse_key.outer_having
            ):
                continue
        elif not _where_subsumed(new_key, entry.reuse_key) or not _having_subsumed(
            new_key, entry.reuse_key, db
        ):
            continue
        entry.usage += 1
        return entry.sketch
    return None
