"""Per-group reservoir sampling and bootstrap moments.

Rows are grouped by the values of the chosen attributes in one sorted
pass; each group keeps its own uniform reservoir whose target is the
sampling fraction of the group size, never less than one row.  Seeding is
derived per stratum, so adding a group leaves every other group's pick
unchanged.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass

import numpy as np

from .relalg import EngineError, Relation
from .util import derive_seed


class SamplingError(EngineError):
    pass


@dataclass(frozen=True)
class Stratum:
    key: tuple
    size: int  # rows in the full group, with multiplicity
    row_ids: tuple[int, ...]  # sampled ids; repeats mirror multiplicity


@dataclass(frozen=True)
class StratifiedSample:
    relation: str
    attrs: tuple[str, ...]
    theta: float
    seed: int
    strata: tuple[Stratum, ...]

    @property
    def over_budget(self) -> bool:
        """True when one row per group already exceeds the row budget."""
        total = sum(s.size for s in self.strata)
        return len(self.strata) > self.theta * total

    @property
    def sampled_rows(self) -> int:
        return sum(len(s.row_ids) for s in self.strata)


def _reservoir(items: list, k: int, rng: random.Random) -> list:
    reservoir = list(items[:k])
    for i in range(k, len(items)):
        j = rng.randrange(i + 1)
        if j < k:
            reservoir[j] = items[i]
    return reservoir


def _target(theta: float, size: int) -> int:
    return min(size, max(1, math.floor(theta * size + 0.5)))


def stratified_sample(
    rel: Relation, attrs, theta: float, seed: int
) -> StratifiedSample:
    if not 0 < theta <= 1:
        raise SamplingError(f"sampling fraction must be in (0, 1], got {theta}")
    attrs = tuple(attrs)
    idx = [rel.schema.index(a) for a in attrs]

    occurrences = []  # (key, row id), one entry per multiplicity unit
    for row, mult, rid in zip(rel.rows, rel.mults, rel.row_ids):
        key = tuple(row[i] for i in idx)
        occurrences.extend((key, rid) for _ in range(mult))
    occurrences.sort(key=lambda kr: (kr[0], kr[1]))

    strata = []
    start = 0
    for end in range(1, len(occurrences) + 1):
        if end == len(occurrences) or occurrences[end][0] != occurrences[start][0]:
            key = occurrences[start][0]
            ids = [rid for _, rid in occurrences[start:end]]
            rng = random.Random(
                derive_seed(seed, "stratum", rel.schema.relation_name, *map(str, key))
            )
            picked = _reservoir(ids, _target(theta, len(ids)), rng)
            strata.append(Stratum(key, len(ids), tuple(sorted(picked))))
            start = end
    return StratifiedSample(
        relation=rel.schema.relation_name,
        attrs=attrs,
        theta=theta,
        seed=seed,
        strata=tuple(strata),
    )


def reservoir_sample(rel: Relation, k: int, seed: int) -> tuple[int, ...]:
    """k uniform row ids from the whole relation (with multiplicity)."""
    if k < 0:
        raise SamplingError("sample size must be nonnegative")
    ids = [rid for rid, m in zip(rel.row_ids, rel.mults) for _ in range(m)]
    rng = random.Random(derive_seed(seed, "reservoir", rel.schema.relation_name))
    return tuple(sorted(_reservoir(ids, min(k, len(ids)), rng)))


def bootstrap_stats(values, resamples: int = 50, seed: int = 0) -> tuple[float, float]:
    """(mean of resample means, variance of resample means).

    Each resample redraws len(values) items with replacement; the variance
    estimates the squared standard error of the stratum mean.
    """
    if len(values) == 0:
        raise SamplingError("cannot bootstrap an empty stratum")
    if resamples < 1:
        raise SamplingError("need at least one resample")
    arr = np.asarray(values, dtype=float)
    if len(arr) == 1:
        return float(arr[0]), 0.0
    rng = np.random.default_rng(seed)
    picks = rng.integers(0, len(arr), size=(resamples, len(arr)))
    means = arr[picks].mean(axis=1)
    variance = float(means.var(ddof=1)) if resamples > 1 else 0.0
    return float(means.mean()), variance


class SampleCache:
    """Samples keyed by relation and the exact attribute set.

    A lookup with a different attribute set always misses, supersets
    included: a sample stratified on fewer attributes cannot stand in for
    one stratified on more.
    """

    def __init__(self):
        self._entries: dict = {}

    @staticmethod
    def _key(relation: str, attrs, theta: float, seed: int):
        return relation, frozenset(attrs), float(theta), int(seed)

    def get(self, relation: str, attrs, theta: float, seed: int):
        return self._entries.get(self._key(relation, attrs, theta, seed))

    def put(self, sample: StratifiedSample) -> None:
        key = self._key(sample.relation, sample.attrs, sample.theta, sample.seed)
        self._entries[key] = sample

    def __len__(self) -> int:
        return len(self._entries)


def sample_to_json(sample: StratifiedSample) -> dict:
    return {
        "relation": sample.relation,
        "attrs": list(sample.attrs),
        "theta": sample.theta,
        "seed": sample.seed,
        "strata": [
            {"key": list(s.key), "size": s.size, "sample_row_ids": list(s.row_ids)}
            for s in sample.strata
        ],
    }


def sample_from_json(obj: dict) -> StratifiedSample:
    try:
        return StratifiedSample(
            relation=obj["relation"],
            attrs=tuple(obj["attrs"]),
            theta=obj["theta"],
            seed=obj["seed"],
            strata=tuple(
                Stratum(tuple(s["key"]), s["size"], tuple(s["sample_row_ids"]))
                for s in obj["strata"]
            ),
        )
    except (KeyError, TypeError) as exc:
        raise SamplingError(f"bad sample object: {exc}") from exc
