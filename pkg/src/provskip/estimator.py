"""Sample-based estimation of group aggregates and slice sizes.

Every group keeps its own stratum, so a group's aggregate is estimated by
scaling the stratum's per-row statistics up to the group size.  Threshold
decisions use the point estimates; each group also carries a satisfaction
probability (normal tail around the estimate) that feeds the expected-size
bounds.  Join shapes are handled by stratifying the relation that owns the
aggregated attribute and looking sampled rows up in the other relations.
"""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass

import numpy as np

from .partition import RangeSet, build_range_partition
from .relalg import COMPARATORS, EngineError, eval_expr, eval_pred
from .sampling import StratifiedSample, bootstrap_stats
from .templates import TemplateInfo
from .util import derive_seed


class EstimationError(EngineError):
    pass


_NORMAL = statistics.NormalDist()


@dataclass(frozen=True)
class GroupEstimate:
    key: tuple
    group_size: int  # rows of the full group in the stratified relation
    sample_size: int
    qualifying: int  # sampled rows with at least one row-filter pass
    estimate: float | None  # None when no sampled row qualifies
    sigma: float  # standard error of the estimate
    p_satisfied: float


@dataclass(frozen=True)
class SizeEstimate:
    relation: str
    attribute: str
    est_size: int
    est_selectivity: float
    members: tuple[int, ...]


# ---------------------------------------------------------------------------
# joined-tuple expansion


def _join_maps(db, info: TemplateInfo):
    """Lookup tables for walking a sampled fact row into the other relations.

    Returns steps [(from_attr, relation, key_attr)] in join order plus the
    combined attribute index of the fully joined tuple.
    """
    fact_schema = db[info.fact].schema
    placed = {info.fact}
    attr_pos = {a: i for i, a in enumerate(fact_schema.names())}
    width = len(fact_schema.names())
    steps = []
    pairs = list(info.join_pairs)
    while pairs:
        progress = False
        for pair in list(pairs):
            (rel_a, attr_a), (rel_b, attr_b) = pair
            if rel_a in placed and rel_b not in placed:
                src_attr, rel, key = attr_a, rel_b, attr_b
            elif rel_b in placed and rel_a not in placed:
                src_attr, rel, key = attr_b, rel_a, attr_a
            elif rel_a in placed and rel_b in placed:
                pairs.remove(pair)  # cycle edge; verified during the walk
                continue
            else:
                continue
            schema = db[rel].schema
            lookup: dict = {}
            key_idx = schema.index(key)
            for row, rid in zip(db[rel].rows, db[rel].row_ids):
                lookup.setdefault(row[key_idx], []).append((rid, row))
            steps.append((attr_pos[src_attr], rel, lookup))
            for i, a in enumerate(schema.names()):
                attr_pos[a] = width + i
            width += len(schema.names())
            placed.add(rel)
            pairs.remove(pair)
            progress = True
        if not progress:
            raise EstimationError("join graph does not connect the relations")
    return steps, attr_pos


def _joined_tuples(row, rid, steps):
    """All full joined tuples a fact row expands to, with per-relation ids.

    Each result is (combined_row, {relation_position: row_id...}) where ids
    are keyed by join step order; missing matches drop the tuple.
    """
    results = [(tuple(row), (rid,))]
    for src_pos, _, lookup in steps:
        extended = []
        for combined, ids in results:
            for other_rid, other_row in lookup.get(combined[src_pos], ()):
                extended.append((combined + tuple(other_row), ids + (other_rid,)))
        results = extended
        if not results:
            return []
    return results


# ---------------------------------------------------------------------------
# group aggregate estimation


def _compare(value, op: str, const) -> bool:
    return COMPARATORS[op](value, const)


def _p_satisfied(having, estimate, sigma) -> float:
    if having is None:
        return 1.0
    op, const = having.comparator, having.constant
    if sigma == 0 or op == "=":
        return 1.0 if _compare(estimate, op, const) else 0.0
    if op in (">", ">="):
        return _NORMAL.cdf((estimate - const) / sigma)
    return _NORMAL.cdf((const - estimate) / sigma)


def _statistic_sigma(values, func: str, resamples: int, seed: int) -> float:
    """Bootstrap standard error of min/max over the qualifying values."""
    arr = np.asarray(values, dtype=float)
    if len(arr) == 1:
        return 0.0
    rng = np.random.default_rng(seed)
    picks = rng.integers(0, len(arr), size=(resamples, len(arr)))
    stats = arr[picks].min(axis=1) if func == "min" else arr[picks].max(axis=1)
    return float(stats.std(ddof=1))


def estimate_groups(
    info: TemplateInfo, db, sample: StratifiedSample, resamples: int = 50, seed: int = 0
) -> tuple[GroupEstimate, ...]:
    """Per-group estimates of the inner aggregation from a stratified sample."""
    if sample.relation != info.fact:
        raise EstimationError(
            f"sample covers {sample.relation!r}, query stratifies {info.fact!r}"
        )
    fact = db[info.fact]
    gb = info.inner.group_by
    if not set(gb) <= set(fact.schema.names()):
        raise EstimationError("grouping attributes must belong to the sampled relation")
    if frozenset(sample.attrs) != frozenset(gb):
        raise EstimationError("sample is stratified on different attributes")

    steps, attr_pos = _join_maps(db, info) if info.join_pairs else ([], None)
    if attr_pos is None:
        attr_pos = {a: i for i, a in enumerate(fact.schema.names())}
    row_map = fact.row_by_id()
    func = info.inner.func
    agg_expr = info.inner.agg_expr

    out = []
    for stratum in sample.strata:
        per_row_counts: list[int] = []
        per_row_sums: list[float] = []
        qual_values: list[float] = []
        for rid in stratum.row_ids:
            row = row_map[rid]
            tuples = _joined_tuples(row, rid, steps) if steps else [(row, (rid,))]
            cnt = 0
            acc = 0.0
            for combined, _ids in tuples:
                if info.where is not None and not eval_pred(
                    info.where, attr_pos, combined
                ):
                    continue
                cnt += 1
                if agg_expr is not None:
                    v = eval_expr(agg_expr, attr_pos, combined)
                    acc += v
                    qual_values.append(v)
            per_row_counts.append(cnt)
            per_row_sums.append(acc)

        n_s = len(stratum.row_ids)
        n_g = stratum.size
        qualifying = sum(1 for c in per_row_counts if c > 0)
        total_pass = sum(per_row_counts)
        if total_pass == 0:
            out.append(GroupEstimate(stratum.key, n_g, n_s, 0, None, 0.0, 0.0))
            continue

        boot_seed = derive_seed(seed, "group-boot", sample.relation, *map(str, stratum.key))
        # scale first: a full sample makes the factor exactly 1.0, so the
        # estimate reproduces the true integer aggregate bit for bit
        if func == "sum":
            estimate = (n_g / n_s) * sum(per_row_sums)
            _, var = bootstrap_stats(per_row_sums, resamples, boot_seed)
            sigma = n_g * math.sqrt(var)
        elif func == "count":
            estimate = (n_g / n_s) * total_pass
            if all(c <= 1 for c in per_row_counts):
                p_hat = total_pass / n_s
                sigma = n_g * math.sqrt(p_hat * (1 - p_hat) / n_s)
            else:
                _, var = bootstrap_stats(per_row_counts, resamples, boot_seed)
                sigma = n_g * math.sqrt(var)
        elif func == "avg":
            estimate = sum(per_row_sums) / total_pass
            _, var = bootstrap_stats(qual_values, resamples, boot_seed)
            sigma = math.sqrt(var)
        elif func in ("min", "max"):
            estimate = min(qual_values) if func == "min" else max(qual_values)
            sigma = _statistic_sigma(qual_values, func, resamples, boot_seed)
        else:
            raise EstimationError(f"unsupported aggregate {func!r}")

        p = _p_satisfied(info.inner.having, estimate, sigma)
        out.append(
            GroupEstimate(stratum.key, n_g, n_s, qualifying, float(estimate), sigma, p)
        )
    return tuple(out)


def satisfied_groups(estimates, having) -> frozenset:
    """Keys whose point estimate passes the threshold (all present groups
    when there is none)."""
    keys = set()
    for est in estimates:
        if est.estimate is None:
            continue
        if having is None or _compare(est.estimate, having.comparator, having.constant):
            keys.add(est.key)
    return frozenset(keys)


@dataclass(frozen=True)
class NestedAnalysis:
    inner: tuple[GroupEstimate, ...]
    inner_satisfied: frozenset  # inner keys passing the inner threshold
    outer_values: dict  # outer key -> exact aggregate of estimated inner rows
    outer_satisfied: frozenset  # outer keys passing the outer threshold
    satisfied: frozenset  # inner keys surviving both levels


def _exact_agg(func: str, values) -> float:
    if func == "sum":
        return float(sum(values))
    if func == "count":
        return float(len(values))
    if func == "avg":
        return float(sum(values) / len(values))
    if func == "min":
        return float(min(values))
    if func == "max":
        return float(max(values))
    raise EstimationError(f"unsupported aggregate {func!r}")


def nested_estimates(
    info: TemplateInfo, db, sample: StratifiedSample, resamples: int = 50, seed: int = 0
) -> NestedAnalysis:
    """Estimate the inner level, then run the outer level exactly over the
    estimated inner rows."""
    if info.outer is None:
        raise EstimationError("plan has a single aggregation level")
    inner = estimate_groups(info, db, sample, resamples, seed)
    inner_sat = satisfied_groups(inner, info.inner.having)

    positions = [info.inner.group_by.index(a) for a in info.outer.group_by]
    by_outer: dict = {}
    for est in inner:
        if est.key not in inner_sat:
            continue
        outer_key = tuple(est.key[i] for i in positions)
        by_outer.setdefault(outer_key, []).append(est.estimate)

    outer_values = {
        key: _exact_agg(info.outer.func, values) for key, values in by_outer.items()
    }
    having = info.outer.having
    outer_sat = frozenset(
        key
        for key, value in outer_values.items()
        if having is None or _compare(value, having.comparator, having.constant)
    )
    satisfied = frozenset(
        est.key
        for est in inner
        if est.key in inner_sat
        and tuple(est.key[i] for i in positions) in outer_sat
    )
    return NestedAnalysis(inner, inner_sat, outer_values, outer_sat, satisfied)


def template_satisfied(
    info: TemplateInfo, db, sample: StratifiedSample, resamples: int = 50, seed: int = 0
):
    """(estimates, satisfied inner keys) for either template depth."""
    if info.outer is None:
        estimates = estimate_groups(info, db, sample, resamples, seed)
        return estimates, satisfied_groups(estimates, info.inner.having)
    nested = nested_estimates(info, db, sample, resamples, seed)
    return nested.inner, nested.satisfied


# ---------------------------------------------------------------------------
# relevant rows and size estimation


def relevant_rows(db, info: TemplateInfo, satisfied: frozenset) -> dict:
    """Estimated contributing row ids per relation.

    A fact row contributes when its group key is satisfied and at least one
    of its joined tuples passes the row filter; the matching rows of the
    other relations contribute through those tuples.
    """
    fact = db[info.fact]
    gb_idx = [fact.schema.index(a) for a in info.inner.group_by]
    steps, attr_pos = _join_maps(db, info) if info.join_pairs else ([], None)
    if attr_pos is None:
        attr_pos = {a: i for i, a in enumerate(fact.schema.names())}
    step_rels = [info.fact] + [rel for _, rel, _ in steps]

    ids: dict = {rel: set() for rel in info.relations}
    for row, rid in zip(fact.rows, fact.row_ids):
        if tuple(row[i] for i in gb_idx) not in satisfied:
            continue
        tuples = _joined_tuples(row, rid, steps) if steps else [(row, (rid,))]
        for combined, tuple_ids in tuples:
            if info.where is not None and not eval_pred(info.where, attr_pos, combined):
                continue
            for rel, rel_rid in zip(step_rels, tuple_ids):
                ids[rel].add(rel_rid)
    return {rel: frozenset(v) for rel, v in ids.items()}


def estimate_size(
    db, relation: str, row_ids, range_set: RangeSet, partition=None
) -> SizeEstimate:
    """Rows of every range that holds at least one relevant row."""
    if relation not in db:
        raise EstimationError(f"unknown relation {relation!r}")
    if partition is None:
        partition = build_range_partition(db[relation], range_set)
    members = []
    size = 0
    wanted = set(row_ids)
    for i, frag in enumerate(partition.fragments):
        if frag & wanted:
            members.append(i)
            size += partition.fragment_sizes[i]
    total = db[relation].total_rows
    return SizeEstimate(
        relation=relation,
        attribute=range_set.attribute,
        est_size=size,
        est_selectivity=size / total if total else 0.0,
        members=tuple(members),
    )


def rse(estimate: float, actual: float) -> float:
    """Relative size error, zero when both sides agree on empty."""
    if actual == 0:
        return 0.0 if estimate == 0 else math.inf
    return abs(estimate - actual) / actual


# ---------------------------------------------------------------------------
# expected size under group satisfaction probabilities


def union_probability_independent(probs) -> float:
    out = 1.0
    for p in probs:
        out *= 1.0 - p
    return 1.0 - out


def union_probability_bounds(probs) -> tuple[float, float]:
    probs = list(probs)
    if not probs:
        return 0.0, 0.0
    return max(probs), min(1.0, sum(probs))


def _touching_keys(db, info: TemplateInfo, relation: str) -> dict:
    """Group keys per row of relation, over row-filter-passing tuples.

    A row of a joined relation can serve several groups; a range is needed
    as soon as any of them is satisfied, so every key counts.
    """
    fact = db[info.fact]
    gb_idx = [fact.schema.index(a) for a in info.inner.group_by]
    steps, attr_pos = _join_maps(db, info) if info.join_pairs else ([], None)
    if attr_pos is None:
        attr_pos = {a: i for i, a in enumerate(fact.schema.names())}
    step_rels = [info.fact] + [rel for _, rel, _ in steps]

    keys_of: dict = {}
    for row, rid in zip(fact.rows, fact.row_ids):
        key = tuple(row[i] for i in gb_idx)
        tuples = _joined_tuples(row, rid, steps) if steps else [(row, (rid,))]
        for combined, tuple_ids in tuples:
            if info.where is not None and not eval_pred(info.where, attr_pos, combined):
                continue
            for rel, rel_rid in zip(step_rels, tuple_ids):
                if rel == relation:
                    keys_of.setdefault(rel_rid, set()).add(key)
    return keys_of


def size_expectation_bounds(
    db, info: TemplateInfo, estimates, relation: str, range_set: RangeSet
) -> tuple[float, float, float]:
    """(lower, expected, upper) slice size in rows.

    A range is needed when any group touching it is satisfied; the expected
    value multiplies range sizes by that union's probability assuming the
    groups decide independently, and the bounds hold for any dependence.
    """
    p_by_key = {est.key: est.p_satisfied for est in estimates}
    keys_of = _touching_keys(db, info, relation)
    partition = build_range_partition(db[relation], range_set)

    lo = point = hi = 0.0
    for frag, size in zip(partition.fragments, partition.fragment_sizes):
        keys: set = set()
        for rid in frag:
            keys |= keys_of.get(rid, set())
        probs = [p_by_key[k] for k in keys if k in p_by_key]
        if not probs:
            continue
        b_lo, b_hi = union_probability_bounds(probs)
        lo += size * b_lo
        point += size * union_probability_independent(probs)
        hi += size * b_hi
    return lo, point, hi


# ---------------------------------------------------------------------------
# large-sample confidence intervals


@dataclass(frozen=True)
class HaasStats:
    """Moments of a uniform sample and the half-width of the normal
    confidence interval for the per-row mean of the chosen aggregate."""

    n: int
    point: float  # mean of f over the sample (ratio of means for avg)
    variance: float  # sample variance of f
    cov_uv_u: float  # sample covariance of u*v with u
    var_uv: float  # sample variance of u*v
    var_u: float  # sample variance of u
    sigma_sq: float  # per-observation variance of the estimator
    epsilon: float  # z_alpha * sigma / sqrt(n)
    z_alpha: float


def _sample_var(arr) -> float:
    return float(np.var(arr, ddof=1)) if len(arr) > 1 else 0.0


def _sample_cov(a, b) -> float:
    if len(a) <= 1:
        return 0.0
    return float(np.cov(a, b, ddof=1)[0, 1])


def haas_interval(flags, values, func: str, alpha: float = 0.95) -> HaasStats:
    """Normal-theory interval for sum, count, or avg over a uniform sample.

    flags mark rows passing the filter; values carry the aggregated
    expression.  The interval is for the per-row mean; callers scale by the
    population size for totals.
    """
    if not 0 < alpha < 1:
        raise EstimationError(f"confidence level must be in (0, 1), got {alpha}")
    u = np.asarray(flags, dtype=float)
    v = np.asarray(values, dtype=float)
    if len(u) != len(v) or len(u) == 0:
        raise EstimationError("flags and values must align and be nonempty")
    n = len(u)
    uv = u * v
    var_uv = _sample_var(uv)
    var_u = _sample_var(u)
    cov = _sample_cov(uv, u)

    if func == "sum":
        point = float(uv.mean())
        sigma_sq = var_uv
        variance = var_uv
    elif func == "count":
        point = float(u.mean())
        sigma_sq = var_u
        variance = var_u
    elif func == "avg":
        mean_u = float(u.mean())
        if mean_u == 0:
            raise EstimationError("no row passes the filter, avg is undefined")
        point = float(uv.mean()) / mean_u
        sigma_sq = (var_uv - 2 * point * cov + point * point * var_u) / (mean_u**2)
        variance = var_uv
    else:
        raise EstimationError(f"no interval for aggregate {func!r}")

    sigma_sq = max(sigma_sq, 0.0)
    z_alpha = _NORMAL.inv_cdf((alpha + 1) / 2)
    return HaasStats(
        n=n,
        point=point,
        variance=variance,
        cov_uv_u=cov,
        var_uv=var_uv,
        var_u=var_u,
        sigma_sq=sigma_sq,
        epsilon=z_alpha * math.sqrt(sigma_sq / n),
        z_alpha=z_alpha,
    )
