"""Desk-scale re-localization experiment: exhaustive vs cascade across k.

    python scripts/desk_experiment.py --queries 300 --csv results.csv

Builds the grid library over the desk world, draws held-out random-pose
queries and prints success rates and timings for every mode.  Use
--max-radius / --lsh-bits / --knn to sweep the setup.
"""
import argparse
import csv
import time

from screloc.evaluation import (
    DESK_FOOTPRINT, DESK_LSH_BITS, DESK_MAX_RADIUS, DESK_SPACING, DESK_WORLD, THRESHOLDS, format_table,
    random_queries, run_eval,
)
from screloc.descriptor import DescriptorConfig
from screloc.index import IndexParams
from screloc.library import save_library
from screloc.lidar_sim import load_world, sample_positions
from screloc.pipeline import BuildConfig, ClusterParams, build_library


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--world", default=DESK_WORLD)
    ap.add_argument("--spacing", type=float, default=DESK_SPACING)
    ap.add_argument("--footprint", type=float, default=DESK_FOOTPRINT)
    ap.add_argument("--max-radius", type=float, default=DESK_MAX_RADIUS)
    ap.add_argument("--lsh-bits", type=int, default=DESK_LSH_BITS)
    ap.add_argument("--lsh-tables", type=int, default=4)
    ap.add_argument("--knn", type=int, default=30)
    ap.add_argument("--linkage", default="max")
    ap.add_argument("--threshold", type=float, default=0.4)
    ap.add_argument("--ks", default="1,5,10,50")
    ap.add_argument("--queries", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=2024)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--save", help="also write the library to this .sctl path")
    ap.add_argument("--csv", help="write one row per mode to this file")
    args = ap.parse_args(argv)

    world = load_world(args.world)
    with open(args.world, encoding="utf-8") as fh:
        text = fh.read()
    config = BuildConfig(descriptor=DescriptorConfig(max_radius=args.max_radius),
                         cluster=ClusterParams(args.knn, args.linkage, args.threshold),
                         index=IndexParams(args.lsh_bits, args.lsh_tables, 0), workers=args.workers)
    t = time.perf_counter()
    lib, timings = build_library(world, sample_positions(world, args.spacing, args.footprint), config, text,
                                 args.spacing)
    print(f"built {len(lib.templates)} templates, {len(lib.clusters.clusters)} clusters, "
          f"{lib.clusters.similarity_evaluations} similarity evaluations in {time.perf_counter() - t:.0f}s")
    if args.save:
        save_library(lib, args.save)
    qset = random_queries(world, args.queries, config, args.seed, args.footprint)

    reports = [run_eval(lib, qset, "exhaustive"), run_eval(lib, qset, "representative")]
    reports += [run_eval(lib, qset, "cascade", int(k)) for k in args.ks.split(",")]
    header = ["mode"] + [f"s@{e:.1f}m" for e in THRESHOLDS] + ["mean ms", "p95 ms", "scored"]
    rows = []
    for r in reports:
        name = r.mode + (f" k={r.k}" if r.k is not None else "")
        rows.append([name] + [f"{r.success(e):.4f}" for e in THRESHOLDS]
                    + [f"{r.mean_ms:.2f}", f"{r.p95_ms:.2f}", f"{r.candidates.mean():.0f}"])
    print(format_table(rows, header))
    if args.csv:
        with open(args.csv, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows(rows)


if __name__ == "__main__":
    main()
