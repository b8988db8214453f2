"""Command line around the sketching toolkit.

Every command reads plain files (CSV tables, JSON schemas, JSON plans) and
writes JSON to stdout or --out.  Numeric knobs resolve in one order: an
explicit flag wins, then a --config JSON file, then the built-in default.
Failures print a JSON error object to stderr and exit nonzero.
"""

from __future__ import annotations

import functools
import json
import os
import sys

import click

from .estimator import (
    estimate_size,
    relevant_rows,
    rse,
    size_expectation_bounds,
    template_satisfied,
)
from .formats import (
    FormatError,
    load_plan,
    load_relation_csv,
    load_schema,
    range_set_from_json,
    range_set_to_json,
)
from .partition import equi_depth_ranges
from .relalg import EngineError, assign_ids, evaluate, table_accesses
from .safety import safe_types
from .sampling import sample_from_json, sample_to_json, stratified_sample
from .sketch import capture as capture_sketch
from .sketch import instance, sketch_from_json, sketch_to_json
from .strategy import candidate_pool, select_attribute
from .templates import recognize
from .util import derive_seed
from .workbench import (
    ColumnSpec,
    JoinSpec,
    RunConfig,
    TableSpec,
    WorkloadSpec,
    compare_strategies,
    generate_data,
    generate_workload,
    run_end_to_end,
    true_satisfied,
    write_records_csv,
    write_summary_json,
)

_DEFAULTS = {
    "fragments": 1000,
    "theta": 0.05,
    "bootstrap": 50,
    "alpha": 0.95,
    "seed": 0,
    "strategy": "cb-opt-gb",
}


def _resolve(config_path, **flags) -> dict:
    """Effective settings: flags beat the config file beat the defaults."""
    settings = dict(_DEFAULTS)
    if config_path:
        with open(config_path) as fh:
            loaded = json.load(fh)
        unknown = set(loaded) - set(_DEFAULTS)
        if unknown:
            raise FormatError(f"unknown config keys {sorted(unknown)}")
        settings.update(loaded)
    for key, value in flags.items():
        if value is not None:
            settings[key] = value
    return settings


def _guarded(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (EngineError, OSError, json.JSONDecodeError) as exc:
            click.echo(
                json.dumps({"error": type(exc).__name__, "message": str(exc)}),
                err=True,
            )
            sys.exit(1)

    return wrapper


def _emit(payload, out_path=None) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True)
    if out_path:
        with open(out_path, "w") as fh:
            fh.write(text + "\n")
    else:
        click.echo(text)


def _load_db(data_paths, schema_paths) -> dict:
    if not data_paths:
        raise FormatError("no input tables")
    if len(data_paths) != len(schema_paths):
        raise FormatError("each --data file needs a matching --schema file")
    db = {}
    for data_path, schema_path in zip(data_paths, schema_paths):
        schema = load_schema(schema_path)
        if schema.relation_name in db:
            raise FormatError(f"duplicate relation {schema.relation_name!r}")
        db[schema.relation_name] = load_relation_csv(data_path, schema)
    return db


def _owner_of(db, attribute: str) -> str:
    owners = [name for name, rel in db.items() if rel.schema.has(attribute)]
    if not owners:
        raise FormatError(f"attribute {attribute!r} not found in any table")
    if len(owners) > 1:
        raise FormatError(f"attribute {attribute!r} is ambiguous across {sorted(owners)}")
    return owners[0]


def _target_ranges(db, attribute, ranges_path, fragments):
    """(relation, range set) for the partitioned attribute."""
    if ranges_path:
        with open(ranges_path) as fh:
            range_set = range_set_from_json(json.load(fh))
        return _owner_of(db, range_set.attribute), range_set
    if not attribute:
        raise FormatError("need --attribute or --ranges")
    relation = _owner_of(db, attribute)
    return relation, equi_depth_ranges(db[relation], attribute, fragments)


def _recognized(db, plan):
    info = recognize(plan, {name: rel.schema for name, rel in db.items()})
    if info is None:
        raise FormatError("query does not fit the supported shapes")
    return info


def _estimation(db, info, settings):
    """Sample the fact table and estimate the contributing rows."""
    sample_seed = derive_seed(settings["seed"], "sample", info.fact)
    sample = stratified_sample(
        db[info.fact], info.inner.group_by, settings["theta"], sample_seed
    )
    estimates, satisfied = template_satisfied(
        info, db, sample, settings["bootstrap"], derive_seed(settings["seed"], "boot")
    )
    return estimates, relevant_rows(db, info, satisfied)


def _table_options(fn):
    fn = click.option(
        "--schema",
        "schema_paths",
        multiple=True,
        required=True,
        type=click.Path(exists=True, dir_okay=False),
        help="schema JSON, one per --data, in the same order",
    )(fn)
    fn = click.option(
        "--data",
        "data_paths",
        multiple=True,
        required=True,
        type=click.Path(exists=True, dir_okay=False),
        help="CSV table file (repeatable)",
    )(fn)
    return fn


def _config_option(fn):
    return click.option(
        "--config",
        "config_path",
        type=click.Path(exists=True, dir_okay=False),
        default=None,
        help="JSON file with default settings",
    )(fn)


def _out_option(fn):
    return click.option("--out", "out_path", default=None, help="write JSON here instead of stdout")(fn)


@click.group()
def main():
    """Answer-preserving data skipping: sketches, samples and strategies."""


# ---------------------------------------------------------------------------
# ingest and safety


@main.command()
@_table_options
@click.option("--attribute", default=None, help="also emit equi-depth ranges over this attribute")
@click.option("--fragments", type=int, default=None)
@_config_option
@_out_option
@_guarded
def ingest(data_paths, schema_paths, attribute, fragments, config_path, out_path):
    """Load and validate CSV tables, summarizing what they hold."""
    settings = _resolve(config_path, fragments=fragments)
    db = _load_db(data_paths, schema_paths)
    tables = []
    for name in sorted(db):
        rel = db[name]
        tables.append(
            {
                "relation": name,
                "rows": rel.total_rows,
                "attributes": [list(a) for a in rel.schema.attributes],
                "distinct": {a: len(set(rel.column(a))) for a in rel.schema.names()},
            }
        )
    payload = {"tables": tables}
    if attribute:
        relation = _owner_of(db, attribute)
        ranges = equi_depth_ranges(db[relation], attribute, settings["fragments"])
        payload["ranges"] = range_set_to_json(ranges)
    _emit(payload, out_path)


@main.command("analyze-safety")
@_table_options
@click.option("--query", "query_path", required=True, type=click.Path(exists=True, dir_okay=False))
@_out_option
@_guarded
def analyze_safety(data_paths, schema_paths, query_path, out_path):
    """Which sketch types each table access tolerates under the whole plan."""
    db = _load_db(data_paths, schema_paths)
    plan = assign_ids(load_plan(query_path))
    accesses = [
        {
            "access_id": op_id,
            "relation": relation,
            "safe": safe_types(plan, op_id, db).to_json(),
        }
        for op_id, relation in table_accesses(plan)
    ]
    _emit({"accesses": accesses}, out_path)


# ---------------------------------------------------------------------------
# samples


@main.group()
def sample():
    """Build and inspect stratified samples."""


@sample.command("build")
@_table_options
@click.option("--query", "query_path", default=None, type=click.Path(exists=True, dir_okay=False))
@click.option("--attributes", default=None, help="comma-separated stratification attributes")
@click.option("--theta", type=float, default=None)
@click.option("--seed", type=int, default=None)
@_config_option
@_out_option
@_guarded
def sample_build(data_paths, schema_paths, query_path, attributes, theta, seed, config_path, out_path):
    """Stratify one table on its grouping attributes."""
    settings = _resolve(config_path, theta=theta, seed=seed)
    db = _load_db(data_paths, schema_paths)
    if attributes:
        attrs = tuple(a.strip() for a in attributes.split(",") if a.strip())
        if not attrs:
            raise FormatError("no stratification attributes given")
        relation = _owner_of(db, attrs[0])
    elif query_path:
        info = _recognized(db, load_plan(query_path))
        relation, attrs = info.fact, info.inner.group_by
    else:
        raise FormatError("need --query or --attributes")
    built = stratified_sample(
        db[relation],
        attrs,
        settings["theta"],
        derive_seed(settings["seed"], "sample", relation),
    )
    _emit(sample_to_json(built), out_path)


@sample.command("ls")
@click.option("--sample", "sample_path", required=True, type=click.Path(exists=True, dir_okay=False))
@_out_option
@_guarded
def sample_ls(sample_path, out_path):
    """Summarize a stored sample."""
    with open(sample_path) as fh:
        stored = sample_from_json(json.load(fh))
    _emit(
        {
            "relation": stored.relation,
            "attrs": list(stored.attrs),
            "theta": stored.theta,
            "strata": len(stored.strata),
            "covered_rows": sum(s.size for s in stored.strata),
            "sampled_rows": stored.sampled_rows,
            "over_budget": stored.over_budget,
        },
        out_path,
    )


# ---------------------------------------------------------------------------
# estimation, capture, selection


@main.command()
@_table_options
@click.option("--query", "query_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--attribute", default=None)
@click.option("--ranges", "ranges_path", default=None, type=click.Path(exists=True, dir_okay=False))
@click.option("--fragments", type=int, default=None)
@click.option("--theta", type=float, default=None)
@click.option("--bootstrap", type=int, default=None)
@click.option("--alpha", type=float, default=None)
@click.option("--seed", type=int, default=None)
@_config_option
@_out_option
@_guarded
def estimate(
    data_paths, schema_paths, query_path, attribute, ranges_path,
    fragments, theta, bootstrap, alpha, seed, config_path, out_path,
):
    """Estimate the slice a sketch on one attribute would keep."""
    settings = _resolve(
        config_path, fragments=fragments, theta=theta,
        bootstrap=bootstrap, alpha=alpha, seed=seed,
    )
    db = _load_db(data_paths, schema_paths)
    plan = load_plan(query_path)
    info = _recognized(db, plan)
    relation, range_set = _target_ranges(db, attribute, ranges_path, settings["fragments"])
    estimates, est_rows = _estimation(db, info, settings)
    est = estimate_size(db, relation, est_rows[relation], range_set)
    lo, _, hi = size_expectation_bounds(db, info, estimates, relation, range_set)
    actual_rows = relevant_rows(db, info, true_satisfied(db, info))
    actual = estimate_size(db, relation, actual_rows[relation], range_set)
    _emit(
        {
            "relation": relation,
            "attribute": range_set.attribute,
            "est_size": est.est_size,
            "est_selectivity": est.est_selectivity,
            "bounds": [lo, hi],
            "alpha": settings["alpha"],
            "actual_size": actual.est_size,
            "rse_if_actual_known": rse(est.est_size, actual.est_size),
        },
        out_path,
    )


@main.command()
@_table_options
@click.option("--query", "query_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--attribute", default=None)
@click.option("--ranges", "ranges_path", default=None, type=click.Path(exists=True, dir_okay=False))
@click.option("--fragments", type=int, default=None)
@click.option("--index", "index_path", default=None, help="append the sketch to this JSON array file")
@_config_option
@_out_option
@_guarded
def capture(
    data_paths, schema_paths, query_path, attribute, ranges_path,
    fragments, index_path, config_path, out_path,
):
    """Record which ranges hold contributing rows, from a full evaluation."""
    settings = _resolve(config_path, fragments=fragments)
    db = _load_db(data_paths, schema_paths)
    plan = load_plan(query_path)
    relation, range_set = _target_ranges(db, attribute, ranges_path, settings["fragments"])
    sk = capture_sketch(plan, db, relation, range_set)
    payload = sketch_to_json(sk)
    if index_path:
        stored = []
        if os.path.exists(index_path):
            with open(index_path) as fh:
                stored = json.load(fh)
            if not isinstance(stored, list):
                raise FormatError("index file must hold a JSON array of sketches")
        stored.append(payload)
        with open(index_path, "w") as fh:
            json.dump(stored, fh, indent=2)
            fh.write("\n")
    _emit(payload, out_path)


@main.command()
@_table_options
@click.option("--query", "query_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--strategy", default=None)
@click.option("--relation", default=None, help="table to sketch (default: the aggregated one)")
@click.option(
    "--ranges", "ranges_paths", multiple=True,
    type=click.Path(exists=True, dir_okay=False),
    help="range file overriding the equi-depth split for its attribute (repeatable)",
)
@click.option("--fragments", type=int, default=None)
@click.option("--theta", type=float, default=None)
@click.option("--bootstrap", type=int, default=None)
@click.option("--seed", type=int, default=None)
@_config_option
@_out_option
@_guarded
def choose(
    data_paths, schema_paths, query_path, strategy, relation,
    ranges_paths, fragments, theta, bootstrap, seed, config_path, out_path,
):
    """Pick the partitioning attribute a strategy would sketch."""
    settings = _resolve(
        config_path, strategy=strategy, fragments=fragments,
        theta=theta, bootstrap=bootstrap, seed=seed,
    )
    db = _load_db(data_paths, schema_paths)
    plan = load_plan(query_path)
    if relation is None:
        accessed = {rel for _, rel in table_accesses(plan)}
        if len(accessed) == 1:
            relation = accessed.pop()
        else:
            relation = _recognized(db, plan).fact
    pool = candidate_pool(plan, db, relation, settings["fragments"], settings["strategy"])
    overrides = {}
    for path in ranges_paths:
        with open(path) as fh:
            rs = range_set_from_json(json.load(fh))
        overrides[rs.attribute] = rs
    est_sel = None
    if settings["strategy"].startswith("cb-"):
        info = _recognized(db, plan)
        _, est_rows = _estimation(db, info, settings)
        est_sel = {}
        for a in pool:
            ranges = overrides.get(a)
            if ranges is None:
                ranges = equi_depth_ranges(db[relation], a, settings["fragments"])
            est_sel[a] = estimate_size(db, relation, est_rows[relation], ranges).est_selectivity
    chosen = select_attribute(
        settings["strategy"], pool, est_sel, settings["seed"], label="choose"
    )
    payload = {
        "strategy": settings["strategy"],
        "relation": relation,
        "pool": list(pool),
        "attribute": chosen,
    }
    if est_sel is not None:
        payload["est_selectivity"] = est_sel
    _emit(payload, out_path)


@main.command()
@_table_options
@click.option("--query", "query_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--sketch", "sketch_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--check/--no-check", default=True, help="also verify against the full answer")
@_out_option
@_guarded
def apply(data_paths, schema_paths, query_path, sketch_path, check, out_path):
    """Answer the query scanning only the sketch slice."""
    db = _load_db(data_paths, schema_paths)
    plan = load_plan(query_path)
    with open(sketch_path) as fh:
        sk = sketch_from_json(json.load(fh))
    if sk.relation not in db:
        raise FormatError(f"sketch covers unknown relation {sk.relation!r}")
    restricted = dict(db)
    restricted[sk.relation] = db[sk.relation].restrict(instance(sk, db))
    result = evaluate(plan, restricted)
    payload = {
        "relation": sk.relation,
        "scanned_rows": sk.size_rows,
        "total_rows": db[sk.relation].total_rows,
        "rows": [
            {"values": list(vals), "multiplicity": m}
            for vals, m in zip(result.rows, result.mults)
        ],
    }
    if check:
        payload["matches_full"] = evaluate(plan, db).as_bag() == result.as_bag()
    _emit(payload, out_path)


# ---------------------------------------------------------------------------
# benchmarks


@main.group()
def bench():
    """Synthetic end-to-end benchmarks."""


def _bench_options(fn):
    for option in (
        click.option("--rows", type=int, default=20_000, show_default=True),
        click.option("--queries", type=int, default=50, show_default=True),
        click.option("--groups", type=int, default=None, help="distinct grouping values (default: twice the fragment count)"),
        click.option("--nested", is_flag=True, help="two aggregation levels"),
        click.option("--join", is_flag=True, help="aggregate over a two-table join"),
        click.option("--where-rate", type=float, default=0.0, show_default=True),
        click.option("--fragments", type=int, default=None),
        click.option("--theta", type=float, default=None),
        click.option("--bootstrap", type=int, default=None),
        click.option("--seed", type=int, default=None),
        click.option("--out-dir", type=click.Path(file_okay=False), default=None),
    ):
        fn = option(fn)
    return fn


def _bench_instance(rows, queries, groups, nested, join, where_rate, fragments, seed):
    groups = groups if groups is not None else max(2, 2 * fragments)
    columns = [
        ColumnSpec("pk", "serial", lo=1),
        ColumnSpec("g1", "uniform", lo=0, hi=groups - 1),
        ColumnSpec("g2", "uniform", lo=0, hi=groups - 1),
        ColumnSpec("val", "uniform", lo=50, hi=100),
    ]
    tables = []
    join_spec = None
    if join:
        dim_rows = max(2, groups // 2)
        columns.append(ColumnSpec("fk", "uniform", lo=0, hi=dim_rows - 1))
        tables.append(
            TableSpec(
                "dim",
                dim_rows,
                (
                    ColumnSpec("dk", "serial", lo=0),
                    ColumnSpec("weight", "uniform", lo=1, hi=9),
                ),
                primary_key=("dk",),
            )
        )
        join_spec = JoinSpec("dim", "fk", "dk")
    tables.insert(0, TableSpec("fact", rows, tuple(columns), primary_key=("pk",)))
    db = generate_data(tuple(tables), derive_seed(seed, "data"))
    spec = WorkloadSpec(
        "fact",
        ("g1", "g2"),
        ("val",),
        queries=queries,
        nested=nested,
        join=join_spec,
        where_rate=where_rate,
    )
    return db, generate_workload(db, spec, derive_seed(seed, "workload"))


@bench.command("run")
@_bench_options
@click.option("--strategy", default=None)
@click.option("--no-reuse", is_flag=True, help="capture every query from scratch")
@_config_option
@_guarded
def bench_run(
    rows, queries, groups, nested, join, where_rate,
    fragments, theta, bootstrap, seed, out_dir, strategy, no_reuse, config_path,
):
    """Generate data and a workload, then replay it against one index."""
    settings = _resolve(
        config_path, fragments=fragments, theta=theta,
        bootstrap=bootstrap, seed=seed, strategy=strategy,
    )
    db, plans = _bench_instance(
        rows, queries, groups, nested, join, where_rate,
        settings["fragments"], settings["seed"],
    )
    cfg = RunConfig(
        strategy=settings["strategy"],
        fragment_count=settings["fragments"],
        theta=settings["theta"],
        resamples=settings["bootstrap"],
        seed=settings["seed"],
        reuse=not no_reuse,
    )
    report = run_end_to_end(db, plans, cfg)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        write_records_csv(report.records, os.path.join(out_dir, "report.csv"))
        write_summary_json(report.summary, os.path.join(out_dir, "summary.json"))
    _emit(report.summary)


@bench.command("compare")
@_bench_options
@click.option(
    "--strategies",
    default="cb-opt,cb-opt-gb,rand-gb,rand-pk",
    show_default=True,
    help="comma-separated strategy names",
)
@_config_option
@_guarded
def bench_compare(
    rows, queries, groups, nested, join, where_rate,
    fragments, theta, bootstrap, seed, out_dir, strategies, config_path,
):
    """Replay the same workload once per strategy and compare summaries."""
    settings = _resolve(
        config_path, fragments=fragments, theta=theta, bootstrap=bootstrap, seed=seed
    )
    names = tuple(s.strip() for s in strategies.split(",") if s.strip())
    if not names:
        raise FormatError("no strategies given")
    db, plans = _bench_instance(
        rows, queries, groups, nested, join, where_rate,
        settings["fragments"], settings["seed"],
    )
    cfg = RunConfig(
        strategy=names[0],
        fragment_count=settings["fragments"],
        theta=settings["theta"],
        resamples=settings["bootstrap"],
        seed=settings["seed"],
    )
    payload = compare_strategies(db, plans, cfg, names)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        write_summary_json(payload, os.path.join(out_dir, "compare.json"))
    _emit(payload)


# ---------------------------------------------------------------------------
# sketch index files


@main.group()
def index():
    """Inspect sketch collections."""


@index.command("list")
@click.option("--index", "index_path", required=True, type=click.Path(exists=True, dir_okay=False))
@_out_option
@_guarded
def index_list(index_path, out_path):
    """List the sketches stored in an index file."""
    with open(index_path) as fh:
        stored = json.load(fh)
    if not isinstance(stored, list):
        raise FormatError("index file must hold a JSON array of sketches")
    sketches = []
    for i, entry in enumerate(stored):
        sk = sketch_from_json(entry)
        sketches.append(
            {
                "position": i,
                "relation": sk.relation,
                "attribute": sk.attribute,
                "ranges": len(sk.range_set),
                "members": len(sk.members()),
                "size_rows": sk.size_rows,
                "fingerprint": sk.fingerprint,
            }
        )
    _emit({"sketches": sketches}, out_path)
