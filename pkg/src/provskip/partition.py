"""Range and hash horizontal partitioning on a single attribute.

Ranges are closed intervals [lo, hi]. A range set is valid for a
relation when every value of the partitioning attribute falls inside
exactly one interval; the intervals themselves may leave numeric gaps
between observed values (boundaries always sit on observed data, with
cuts strictly between adjacent distinct values).
"""

from __future__ import annotations

import hashlib
from bisect import bisect_right
from collections import Counter
from dataclasses import dataclass

from .relalg import EngineError, Relation


class PartitionError(EngineError):
    pass


class UncoveredValueError(PartitionError):
    pass


@dataclass(frozen=True)
class RangeSet:
    attribute: str
    ranges: tuple[tuple, ...]  # ((lo, hi), ...) closed intervals

    def __post_init__(self):
        if not self.ranges:
            raise PartitionError("a range set needs at least one range")
        for lo, hi in self.ranges:
            if lo > hi:
                raise PartitionError(f"empty interval [{lo}, {hi}]")
        for (_, hi), (lo, _) in zip(self.ranges, self.ranges[1:]):
            if lo <= hi:
                raise PartitionError("ranges must be sorted and disjoint")

    def __len__(self) -> int:
        return len(self.ranges)

    def locate(self, value) -> int | None:
        """Index of the interval containing value, or None."""
        los = [lo for lo, _ in self.ranges]
        i = bisect_right(los, value) - 1
        if i >= 0 and value <= self.ranges[i][1]:
            return i
        return None


@dataclass
class RangePartition:
    relation_name: str
    range_set: RangeSet
    fragments: tuple[frozenset, ...]  # row ids per range
    fragment_sizes: tuple[int, ...]  # row counts per range (with multiplicity)

    @property
    def total_rows(self) -> int:
        return sum(self.fragment_sizes)


@dataclass
class HashPartition:
    relation_name: str
    attribute: str
    bucket_count: int
    seed: int
    fragments: tuple[frozenset, ...]
    fragment_sizes: tuple[int, ...]


def build_range_partition(rel: Relation, range_set: RangeSet) -> RangePartition:
    """Assign every row of rel to the range containing its attribute value."""
    if not rel.schema.is_numeric(range_set.attribute):
        raise PartitionError(f"attribute {range_set.attribute} is not numeric")
    col = rel.column(range_set.attribute)
    ids: list[set] = [set() for _ in range_set.ranges]
    sizes = [0] * len(range_set.ranges)
    # same lookup as RangeSet.locate, with the boundary list hoisted out of
    # the per-row loop
    los = [lo for lo, _ in range_set.ranges]
    for value, rid, mult in zip(col, rel.row_ids, rel.mults):
        i = bisect_right(los, value) - 1
        if i < 0 or value > range_set.ranges[i][1]:
            raise UncoveredValueError(
                f"value {value!r} of {range_set.attribute} is outside every range"
            )
        ids[i].add(rid)
        sizes[i] += mult
    return RangePartition(
        rel.schema.relation_name,
        range_set,
        tuple(frozenset(s) for s in ids),
        tuple(sizes),
    )


def fragment_of(partition: RangePartition, value) -> int:
    """Index of the unique range containing value."""
    i = partition.range_set.locate(value)
    if i is None:
        raise UncoveredValueError(f"value {value!r} is outside every range")
    return i


def equi_depth_ranges(rel: Relation, attribute: str, k: int) -> RangeSet:
    """k closed ranges with near-equal row counts, boundaries on data values.

    Greedy quantile sweep over the distinct values; a bucket closes once it
    reached its share of the remaining rows, closing early when the leftover
    distinct values are only just enough to give each remaining bucket one.
    """
    if k < 1:
        raise PartitionError("bucket count must be positive")
    if not rel.schema.is_numeric(attribute):
        raise PartitionError(f"attribute {attribute} is not numeric")
    weights = Counter()
    for v, m in zip(rel.column(attribute), rel.mults):
        weights[v] += m
    distinct = sorted(weights)
    m = len(distinct)
    if k > m:
        raise PartitionError(f"{k} buckets exceed {m} distinct values")
    ranges = []
    start = 0
    acc = 0
    rows_left = sum(weights.values())
    buckets_left = k
    for i, v in enumerate(distinct):
        acc += weights[v]
        if buckets_left == 1:
            continue
        distinct_after = m - (i + 1)
        must_close = distinct_after == buckets_left - 1
        want_close = acc * buckets_left >= rows_left
        if must_close or (want_close and distinct_after >= buckets_left - 1):
            ranges.append((distinct[start], v))
            start = i + 1
            rows_left -= acc
            acc = 0
            buckets_left -= 1
    ranges.append((distinct[start], distinct[-1]))
    return RangeSet(attribute, tuple(ranges))


def _hash_bucket(seed: int, value, n: int) -> int:
    h = hashlib.sha256(f"{seed}|{value!r}".encode()).digest()
    return int.from_bytes(h[:8], "big") % n


def build_hash_partition(
    rel: Relation, attribute: str, bucket_count: int, seed: int
) -> HashPartition:
    if bucket_count < 1:
        raise PartitionError("bucket count must be positive")
    ids: list[set] = [set() for _ in range(bucket_count)]
    sizes = [0] * bucket_count
    for value, rid, mult in zip(rel.column(attribute), rel.row_ids, rel.mults):
        i = _hash_bucket(seed, value, bucket_count)
        ids[i].add(rid)
        sizes[i] += mult
    return HashPartition(
        rel.schema.relation_name,
        attribute,
        bucket_count,
        seed,
        tuple(frozenset(s) for s in ids),
        tuple(sizes),
    )
