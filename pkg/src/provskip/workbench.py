"""Synthetic-data experiments over capture, reuse and attribute selection.

generate_data builds integer tables from per-column distribution specs,
generate_workload draws supported-shape queries whose thresholds sit inside
the central band of the true per-group aggregates, and run_end_to_end
replays a workload against a sketch index, accounting rows scanned and
checking every sliced answer against the full one.

Queries inside the loop are evaluated through a direct group-and-aggregate
pass over the recognized shape instead of the generic evaluator; a test
holds the two bag-equal.  All generated columns are integers, so aggregate
values come out identical on either route.
"""

from __future__ import annotations

import csv
import json
import math
import random
import statistics
from collections import Counter
from dataclasses import dataclass, replace

import numpy as np

from .estimator import relevant_rows, rse, template_satisfied
from .partition import build_range_partition, equi_depth_ranges
from .relalg import (
    COMPARATORS,
    Aggregation,
    Attr,
    Comparison,
    Const,
    EngineError,
    Join,
    Relation,
    Schema,
    Selection,
    TableAccess,
    eval_expr,
    eval_pred,
)
from .sampling import SampleCache, stratified_sample
from .sketch import SketchIndex, capture_rows, find_reusable, fingerprint, insert, instance
from .strategy import (
    expected_random_size,
    candidate_pool,
    ranking_accuracy,
    select_attribute,
)
from .templates import TemplateInfo, recognize
from .util import derive_seed


class WorkbenchError(EngineError):
    pass


# ---------------------------------------------------------------------------
# data generation

DISTRIBUTIONS = ("uniform", "zipf", "normal", "serial", "constant")


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    dist: str = "uniform"
    lo: int = 0
    hi: int = 99
    skew: float = 1.5  # zipf exponent, must stay above 1
    sd: float | None = None  # normal deviation, default a sixth of the span


@dataclass(frozen=True)
class TableSpec:
    relation: str
    rows: int
    columns: tuple[ColumnSpec, ...]
    primary_key: tuple[str, ...] = ()


def _column_values(spec: ColumnSpec, rows: int, rng) -> np.ndarray:
    if spec.dist == "uniform":
        return rng.integers(spec.lo, spec.hi + 1, size=rows)
    if spec.dist == "zipf":
        raw = rng.zipf(spec.skew, size=rows)
        return np.clip(spec.lo + raw - 1, spec.lo, spec.hi)
    if spec.dist == "normal":
        sd = spec.sd if spec.sd is not None else max((spec.hi - spec.lo) / 6.0, 1.0)
        center = (spec.lo + spec.hi) / 2.0
        drawn = np.rint(rng.normal(center, sd, size=rows)).astype(np.int64)
        return np.clip(drawn, spec.lo, spec.hi)
    if spec.dist == "serial":
        return spec.lo + np.arange(rows, dtype=np.int64)
    if spec.dist == "constant":
        return np.full(rows, spec.lo, dtype=np.int64)
    raise WorkbenchError(f"unknown distribution {spec.dist!r}")


def generate_table(spec: TableSpec, seed: int = 0) -> Relation:
    """One integer relation; every column draws from its own seeded stream,
    so adding a column never reshuffles the others."""
    if spec.rows < 1:
        raise WorkbenchError(f"{spec.relation} needs at least one row")
    if not spec.columns:
        raise WorkbenchError(f"{spec.relation} needs at least one column")
    cols = []
    for c in spec.columns:
        if c.lo > c.hi:
            raise WorkbenchError(f"column {c.name}: empty value range")
        rng = np.random.default_rng(derive_seed(seed, "column", spec.relation, c.name))
        cols.append(_column_values(c, spec.rows, rng))
    schema = Schema(
        spec.relation,
        tuple((c.name, "integer") for c in spec.columns),
        spec.primary_key,
    )
    rows = [tuple(int(col[i]) for col in cols) for i in range(spec.rows)]
    return Relation.build(schema, rows)


def generate_data(tables, seed: int = 0) -> dict[str, Relation]:
    return {t.relation: generate_table(t, seed) for t in tables}


# ---------------------------------------------------------------------------
# direct evaluation of recognized shapes


def _source_rows(db, info: TemplateInfo):
    """Joined (combined_row, multiplicity) pairs of the query source, plus
    the attribute index of the combined tuple."""
    fact = db[info.fact]
    attr_pos = {a: i for i, a in enumerate(fact.schema.names())}
    rows = list(zip(fact.rows, fact.mults))
    if not info.join_pairs:
        return rows, attr_pos

    placed = {info.fact}
    pairs = list(info.join_pairs)
    while pairs:
        progress = False
        for pair in list(pairs):
            (rel_a, attr_a), (rel_b, attr_b) = pair
            if rel_a in placed and rel_b in placed:
                # an extra equality between already-joined relations
                ia, ib = attr_pos[attr_a], attr_pos[attr_b]
                rows = [(vals, m) for vals, m in rows if vals[ia] == vals[ib]]
                pairs.remove(pair)
                progress = True
                continue
            if rel_a in placed:
                src_attr, other_rel, other_attr = attr_a, rel_b, attr_b
            elif rel_b in placed:
                src_attr, other_rel, other_attr = attr_b, rel_a, attr_a
            else:
                continue
            other = db[other_rel]
            oi = other.schema.index(other_attr)
            lookup: dict = {}
            for vals, m in zip(other.rows, other.mults):
                lookup.setdefault(vals[oi], []).append((vals, m))
            si = attr_pos[src_attr]
            joined = []
            for vals, m in rows:
                for ovals, om in lookup.get(vals[si], ()):
                    joined.append((vals + ovals, m * om))
            rows = joined
            base = len(attr_pos)
            for j, name in enumerate(other.schema.names()):
                attr_pos[name] = base + j
            placed.add(other_rel)
            pairs.remove(pair)
            progress = True
        if not progress:
            raise WorkbenchError("join graph does not connect to the fact table")
    return rows, attr_pos


def _fold(acc: dict, key, v, m: int) -> None:
    slot = acc.get(key)
    if slot is None:
        acc[key] = [m, 0 if v is None else v * m, v, v]
        return
    slot[0] += m
    if v is not None:
        slot[1] += v * m
        if v < slot[2]:
            slot[2] = v
        if v > slot[3]:
            slot[3] = v


def _finish(acc: dict, func: str) -> dict:
    if func == "count":
        return {k: s[0] for k, s in acc.items()}
    if func == "sum":
        return {k: s[1] for k, s in acc.items()}
    if func == "avg":
        return {k: s[1] / s[0] for k, s in acc.items()}
    if func == "min":
        return {k: s[2] for k, s in acc.items()}
    if func == "max":
        return {k: s[3] for k, s in acc.items()}
    raise WorkbenchError(f"unsupported aggregate {func!r}")


def _passes(having, value) -> bool:
    return having is None or COMPARATORS[having.comparator](value, having.constant)


def level_values(db, info: TemplateInfo) -> tuple[dict, dict | None]:
    """True aggregate per group at each level.

    The bottom level sees the row-filtered source; the top level (None for
    single-level queries) sees only bottom groups passing their threshold.
    """
    rows, attr_pos = _source_rows(db, info)
    gb_pos = [attr_pos[a] for a in info.inner.group_by]
    where = info.where
    expr = info.inner.agg_expr
    acc: dict = {}
    for vals, m in rows:
        if where is not None and not eval_pred(where, attr_pos, vals):
            continue
        key = tuple(vals[i] for i in gb_pos)
        v = eval_expr(expr, attr_pos, vals) if expr is not None else None
        _fold(acc, key, v, m)
    inner = _finish(acc, info.inner.func)
    if info.outer is None:
        return inner, None

    positions = [info.inner.group_by.index(a) for a in info.outer.group_by]
    inner_pos = {a: i for i, a in enumerate(info.inner.group_by)}
    inner_pos[info.inner.out_name] = len(info.inner.group_by)
    oexpr = info.outer.agg_expr
    oacc: dict = {}
    for key, value in inner.items():
        if not _passes(info.inner.having, value):
            continue
        okey = tuple(key[i] for i in positions)
        row = key + (value,)
        v = eval_expr(oexpr, inner_pos, row) if oexpr is not None else None
        _fold(oacc, okey, v, 1)
    return inner, _finish(oacc, info.outer.func)


def true_satisfied(db, info: TemplateInfo) -> frozenset:
    """Bottom-level group keys that contribute to the final answer."""
    inner, outer = level_values(db, info)
    inner_sat = {k for k, v in inner.items() if _passes(info.inner.having, v)}
    if info.outer is None:
        return frozenset(inner_sat)
    outer_sat = {k for k, v in outer.items() if _passes(info.outer.having, v)}
    positions = [info.inner.group_by.index(a) for a in info.outer.group_by]
    return frozenset(
        k for k in inner_sat if tuple(k[i] for i in positions) in outer_sat
    )


def template_result(db, info: TemplateInfo) -> Counter:
    """Bag of final output tuples; equal to evaluating the original plan."""
    inner, outer = level_values(db, info)
    if info.outer is None:
        values, having = inner, info.inner.having
    else:
        values, having = outer, info.outer.having
    return Counter({k + (v,): 1 for k, v in values.items() if _passes(having, v)})


# ---------------------------------------------------------------------------
# workload generation

_OPS_FOR = {
    "sum": (">", ">="),
    "count": (">", ">="),
    "max": (">", ">="),
    "min": ("<", "<="),
    "avg": (">=",),
}


@dataclass(frozen=True)
class JoinSpec:
    relation: str  # joined dimension table
    fact_attr: str
    dim_attr: str


@dataclass(frozen=True)
class WorkloadSpec:
    fact: str
    group_attrs: tuple[str, ...]
    agg_attrs: tuple[str, ...]
    queries: int = 100
    nested: bool = False
    join: JoinSpec | None = None
    funcs: tuple[str, ...] = ("sum", "count", "max")
    outer_funcs: tuple[str, ...] = ("count", "max")
    where_rate: float = 0.0
    band: tuple[float, float] = (0.2, 0.8)


def _band_value(values, band, rng):
    """One of the true values from the interior quantile band."""
    vals = sorted(values)
    if not vals:
        return 0
    lo = int(math.floor(band[0] * (len(vals) - 1)))
    hi = max(lo, int(math.ceil(band[1] * (len(vals) - 1))))
    return vals[rng.randint(lo, hi)]


def _check_workload_spec(db, spec: WorkloadSpec) -> None:
    if spec.fact not in db:
        raise WorkbenchError(f"unknown relation {spec.fact!r}")
    names = set(db[spec.fact].schema.names())
    missing = (set(spec.group_attrs) | set(spec.agg_attrs)) - names
    if missing:
        raise WorkbenchError(f"attributes {sorted(missing)} not on {spec.fact}")
    if not spec.group_attrs or not spec.agg_attrs:
        raise WorkbenchError("need at least one grouping and one input attribute")
    if spec.nested and len(spec.group_attrs) < 2:
        raise WorkbenchError("nested queries need two grouping attributes")
    if spec.join is not None:
        if spec.join.relation not in db:
            raise WorkbenchError(f"unknown relation {spec.join.relation!r}")
        if spec.join.fact_attr not in names:
            raise WorkbenchError(f"{spec.join.fact_attr} not on {spec.fact}")
        if not db[spec.join.relation].schema.has(spec.join.dim_attr):
            raise WorkbenchError(f"{spec.join.dim_attr} not on {spec.join.relation}")
        overlap = names & set(db[spec.join.relation].schema.names())
        if overlap:
            raise WorkbenchError(f"joined tables share attribute names {sorted(overlap)}")


def generate_workload(db, spec: WorkloadSpec, seed: int = 0) -> tuple:
    """Query plans of the supported shapes with data-calibrated thresholds.

    Thresholds are drawn from the interior band of the true per-group
    aggregate values, so every query keeps some groups and drops others.
    """
    _check_workload_spec(db, spec)
    schemas = {name: rel.schema for name, rel in db.items()}
    fact_col = {a: sorted(db[spec.fact].column(a)) for a in spec.group_attrs}
    plans = []
    for i in range(spec.queries):
        rng = random.Random(derive_seed(seed, "workload", str(i)))
        g1 = rng.choice(spec.group_attrs)
        func = rng.choice(spec.funcs)
        agg_attr = rng.choice(spec.agg_attrs)
        expr = None if func == "count" else Attr(agg_attr)
        out1 = func + "_" + ("rows" if expr is None else agg_attr)

        source = TableAccess(spec.fact)
        if spec.join is not None:
            source = Join(
                source,
                TableAccess(spec.join.relation),
                Comparison(Attr(spec.join.fact_attr), "=", Attr(spec.join.dim_attr)),
            )
        node = source
        if rng.random() < spec.where_rate:
            col = fact_col[g1]
            cut = col[int(rng.uniform(0.3, 0.9) * (len(col) - 1))]
            node = Selection(node, Comparison(Attr(g1), "<=", Const(cut)))

        if spec.nested:
            g2 = rng.choice([a for a in spec.group_attrs if a != g1])
            inner_gb = (g1, g2)
        else:
            inner_gb = (g1,)
        agg1 = Aggregation(node, func, expr, inner_gb, out1)

        probe = recognize(agg1, schemas)
        if probe is None:
            raise WorkbenchError(f"query {i} fell outside the supported shapes")
        inner_vals, _ = level_values(db, probe)
        op1 = rng.choice(_OPS_FOR[func])
        c1 = _band_value(inner_vals.values(), spec.band, rng)
        plan = Selection(agg1, Comparison(Attr(out1), op1, Const(c1)))

        if spec.nested:
            ofunc = rng.choice(spec.outer_funcs)
            oexpr = None if ofunc == "count" else Attr(out1)
            out2 = ofunc + "2"
            agg2 = Aggregation(plan, ofunc, oexpr, (g1,), out2)
            probe = recognize(agg2, schemas)
            if probe is None:
                raise WorkbenchError(f"query {i} fell outside the supported shapes")
            _, outer_vals = level_values(db, probe)
            op2 = rng.choice(_OPS_FOR[ofunc])
            c2 = _band_value(outer_vals.values(), spec.band, rng)
            plan = Selection(agg2, Comparison(Attr(out2), op2, Const(c2)))

        plans.append(plan)
    return tuple(plans)


# ---------------------------------------------------------------------------
# end-to-end runs


@dataclass(frozen=True)
class RunConfig:
    strategy: str = "cb-opt-gb"
    fragment_count: int = 1000
    theta: float = 0.05
    resamples: int = 50
    seed: int = 0
    reuse: bool = True


@dataclass(frozen=True)
class QueryRecord:
    index: int
    kind: str
    attribute: str | None  # None when no eligible attribute existed
    reused: bool
    est_size: int | None
    actual_size: int | None
    size_rse: float | None
    scanned: int
    relation_rows: int
    pool: tuple[str, ...] = ()
    ranking: tuple[str, ...] | None = None
    pool_sizes: tuple[int, ...] | None = None  # aligned with pool
    correct: bool = True
    contained: bool | None = None  # reuse only: query rows inside the slice


@dataclass(frozen=True)
class RunReport:
    records: tuple
    summary: dict


class PartitionStore:
    """Equi-depth partitions built once per (relation, attribute)."""

    def __init__(self, db, fragment_count: int):
        self.db = db
        self.fragment_count = fragment_count
        self._cache: dict = {}

    def get(self, relation: str, attr: str):
        key = (relation, attr)
        part = self._cache.get(key)
        if part is None:
            ranges = equi_depth_ranges(self.db[relation], attr, self.fragment_count)
            part = build_range_partition(self.db[relation], ranges)
            self._cache[key] = part
        return part


def _sliced(db, relation: str, keep_ids) -> dict:
    out = dict(db)
    out[relation] = db[relation].restrict(keep_ids)
    return out


def run_end_to_end(db, plans, config: RunConfig = RunConfig()) -> RunReport:
    """Replay a workload against one sketch index.

    A reuse hit answers from the stored slice and scans only its rows.  A
    miss answers from the full table (one full scan pays for the capture),
    stores the new sketch, and replays the query over the fresh slice; both
    sliced answers are checked bag-equal against the full one.
    """
    schemas = {name: rel.schema for name, rel in db.items()}
    index = SketchIndex()
    samples = SampleCache()
    parts = PartitionStore(db, config.fragment_count)
    records = []
    for qi, plan in enumerate(plans):
        info = recognize(plan, schemas)
        if info is None:
            raise WorkbenchError(f"query {qi} does not fit the supported shapes")
        fact = db[info.fact]
        total = fact.total_rows
        truth = template_result(db, info)

        hit = find_reusable(index, plan, db) if config.reuse else None
        if hit is not None:
            ids = instance(hit, db, parts.get(info.fact, hit.attribute))
            contained = relevant_rows(db, info, true_satisfied(db, info))[info.fact] <= ids
            correct = template_result(_sliced(db, info.fact, ids), info) == truth
            records.append(
                QueryRecord(
                    qi, info.kind, hit.attribute, True,
                    None, None, None, hit.size_rows, total,
                    correct=correct, contained=contained,
                )
            )
            continue

        pool = candidate_pool(plan, db, info.fact, config.fragment_count, config.strategy)
        if not pool:
            records.append(
                QueryRecord(qi, info.kind, None, False, None, None, None, total, total)
            )
            continue

        est_sel = None
        est_sizes: dict = {}
        ranking = None
        if config.strategy.startswith("cb-"):
            gb = info.inner.group_by
            sample_seed = derive_seed(config.seed, "sample", info.fact)
            sample = samples.get(info.fact, gb, config.theta, sample_seed)
            if sample is None:
                sample = stratified_sample(fact, gb, config.theta, sample_seed)
                samples.put(sample)
            _, sat_est = template_satisfied(
                info, db, sample, config.resamples, derive_seed(config.seed, "boot", str(qi))
            )
            est_rows = relevant_rows(db, info, sat_est)[info.fact]
            est_sel = {}
            for a in pool:
                est_sizes[a] = capture_rows(parts.get(info.fact, a), est_rows).size_rows
                est_sel[a] = est_sizes[a] / total if total else 0.0
            ranking = tuple(sorted(pool, key=lambda a: (est_sel[a], a)))

        attr = select_attribute(
            config.strategy, pool, est_sel, config.seed, label=f"q{qi}"
        )

        prov = relevant_rows(db, info, true_satisfied(db, info))[info.fact]
        pool_sizes = tuple(
            capture_rows(parts.get(info.fact, a), prov).size_rows for a in pool
        )
        sketch = capture_rows(parts.get(info.fact, attr), prov, fingerprint(plan, db))
        insert(index, sketch, plan, db)

        ids = instance(sketch, db, parts.get(info.fact, attr))
        correct = template_result(_sliced(db, info.fact, ids), info) == truth

        est_size = est_sizes.get(attr)
        records.append(
            QueryRecord(
                qi, info.kind, attr, False,
                est_size,
                sketch.size_rows,
                None if est_size is None else rse(est_size, sketch.size_rows),
                total + sketch.size_rows,
                total,
                pool,
                ranking,
                pool_sizes,
                correct,
            )
        )
    return RunReport(tuple(records), summarize(records, config))


def summarize(records, config: RunConfig | None = None) -> dict:
    recs = list(records)
    fresh = [r for r in recs if not r.reused and r.attribute is not None]
    rses = [r.size_rse for r in fresh if r.size_rse is not None]
    ranked = [
        (r.ranking, dict(zip(r.pool, r.pool_sizes))) for r in fresh if r.ranking
    ]
    rel_sizes = [r.actual_size / r.relation_rows for r in fresh if r.relation_rows]
    expected_rand = [
        expected_random_size(r.pool_sizes) / r.relation_rows
        for r in fresh
        if r.pool_sizes and r.relation_rows
    ]
    scanned = sum(r.scanned for r in recs)
    baseline = sum(r.relation_rows for r in recs)
    out = {
        "queries": len(recs),
        "reused": sum(1 for r in recs if r.reused),
        "unsketched": sum(1 for r in recs if not r.reused and r.attribute is None),
        "all_correct": all(r.correct for r in recs),
        "median_rse": float(statistics.median(rses)) if rses else None,
        "mean_rse": float(statistics.fmean(rses)) if rses else None,
        "top_k_accuracy": (
            {str(k): ranking_accuracy(ranked, k) for k in (1, 2, 3)} if ranked else None
        ),
        "mean_relative_size": float(statistics.fmean(rel_sizes)) if rel_sizes else None,
        "mean_expected_random_size": (
            float(statistics.fmean(expected_rand)) if expected_rand else None
        ),
        "rows_scanned": scanned,
        "rows_full_scan": baseline,
        "scan_ratio": scanned / baseline if baseline else None,
    }
    if config is not None:
        out["config"] = {
            "strategy": config.strategy,
            "fragment_count": config.fragment_count,
            "theta": config.theta,
            "resamples": config.resamples,
            "seed": config.seed,
            "reuse": config.reuse,
        }
    return out


def compare_strategies(db, plans, config: RunConfig, strategies) -> dict:
    """Summaries of the same workload replayed once per strategy."""
    return {
        s: run_end_to_end(db, plans, replace(config, strategy=s)).summary
        for s in strategies
    }


# ---------------------------------------------------------------------------
# report files

_CSV_COLUMNS = (
    "index",
    "kind",
    "attribute",
    "reused",
    "est_size",
    "actual_size",
    "size_rse",
    "scanned",
    "relation_rows",
    "correct",
)


def write_records_csv(records, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_CSV_COLUMNS)
        for r in records:
            writer.writerow([getattr(r, c) for c in _CSV_COLUMNS])


def write_summary_json(summary: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
