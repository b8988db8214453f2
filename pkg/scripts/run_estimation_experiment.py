#!/usr/bin/env python3
"""Size-estimation accuracy across sampling rates.

Builds one wide synthetic fact table, generates a seeded group-by-having
workload, and replays it once per sampling rate with the cost-based
strategy.  Reports the size-estimate error and how often the estimated
ranking finds a truly smallest attribute.
"""

import argparse
import json
import sys

from provskip.workbench import (
    ColumnSpec,
    RunConfig,
    TableSpec,
    WorkloadSpec,
    generate_data,
    generate_workload,
    run_end_to_end,
)


def build_parser():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--rows", type=int, default=100_000)
    p.add_argument("--queries", type=int, default=100)
    p.add_argument("--fragments", type=int, default=200)
    p.add_argument("--thetas", default="0.01,0.05,0.10,0.25")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--strategy", default="cb-opt")
    p.add_argument("--out", help="write the full results as JSON")
    return p


def make_instance(rows, seed):
    tables = (
        TableSpec(
            "facts",
            rows,
            (
                ColumnSpec("pk", "serial", lo=1),
                ColumnSpec("g1", "uniform", 0, rows // 200),
                ColumnSpec("g2", "uniform", 0, rows // 125),
                ColumnSpec("g3", "zipf", 0, rows // 250, skew=1.3),
                ColumnSpec("d1", "uniform", 0, rows // 100),
                ColumnSpec("d2", "normal", 0, rows // 50),
                ColumnSpec("val", "uniform", 0, 999),
            ),
            primary_key=("pk",),
        ),
    )
    return generate_data(tables, seed=seed)


def main(argv=None):
    args = build_parser().parse_args(argv)
    thetas = [float(t) for t in args.thetas.split(",") if t.strip()]
    db = make_instance(args.rows, args.seed)
    spec = WorkloadSpec(
        fact="facts",
        group_attrs=("g1", "g2", "g3"),
        agg_attrs=("val",),
        queries=args.queries,
    )
    plans = generate_workload(db, spec, seed=args.seed)

    results = []
    print(f"{'theta':>6}  {'median_rse':>10}  {'mean_rse':>8}  {'top1':>5}  {'top3':>5}")
    for theta in thetas:
        config = RunConfig(
            strategy=args.strategy,
            fragment_count=args.fragments,
            theta=theta,
            seed=args.seed,
            reuse=False,
        )
        summary = run_end_to_end(db, plans, config).summary
        top = summary["top_k_accuracy"] or {}
        print(
            f"{theta:>6.2f}  {summary['median_rse']:>10.4f}  {summary['mean_rse']:>8.4f}"
            f"  {top.get('1', float('nan')):>5.2f}  {top.get('3', float('nan')):>5.2f}"
        )
        results.append({"theta": theta, **summary})

    if args.out:
        with open(args.out, "w") as fh:
            json.dump(results, fh, indent=2, sort_keys=True)
            fh.write("\n")
        print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
