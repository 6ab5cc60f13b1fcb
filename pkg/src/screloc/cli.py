"""Command line front end: sample, build, match, eval, bench."""
from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import replace

import numpy as np

from .descriptor import DescriptorConfig
from .evaluation import (
    BENCH_HEADER, MODES, format_table, make_queries, match_one, random_queries, run_eval, bench_sweep,
)
from .index import IndexParams
from .library import load_library, save_library
from .lidar_sim import (
    LidarModel, Pose2D, format_poses, load_world, parse_scan, random_poses, raycast_scan, read_poses,
    sample_positions,
)
from .pipeline import BuildConfig, ClusterParams, build_library, extract_query

log = logging.getLogger("screloc")


def _common(p: argparse.ArgumentParser):
    p.add_argument("--world", help="world description file")
    p.add_argument("--library", help=".sctl template library")
    p.add_argument("--seed", type=int, default=0, help="RNG seed (random poses, RBP hash bases)")
    p.add_argument("--k", type=int, default=10, help="candidate representatives per query")
    p.add_argument("--linkage", choices=("max", "min", "avg"), default="max")
    p.add_argument("--threshold", type=float, default=0.4, help="merge stops at this linkage distance")
    p.add_argument("--knn", type=int, default=30, help="XY neighbours allowed to merge")
    p.add_argument("--lsh-bits", type=int, default=8)
    p.add_argument("--lsh-tables", type=int, default=4)
    p.add_argument("--spacing", type=float, default=0.25, help="template grid spacing (m)")
    p.add_argument("--footprint", type=float, default=0.3, help="robot radius kept clear of boxes (m)")
    p.add_argument("--rows", type=int, default=20)
    p.add_argument("--cols", type=int, default=60)
    p.add_argument("--max-radius", type=float, default=80.0)
    p.add_argument("--sensor-height", type=float, default=0.5)
    p.add_argument("--workers", type=int, default=1, help="processes for raycasting")
    p.add_argument("-v", "--verbose", action="store_true")


def build_config(args, descriptor: DescriptorConfig | None = None) -> BuildConfig:
    desc = descriptor or DescriptorConfig(args.rows, args.cols, args.max_radius, args.sensor_height)
    desc = replace(desc, sensor_height=args.sensor_height)
    return BuildConfig(
        lidar=LidarModel(sensor_height=args.sensor_height),
        descriptor=desc,
        cluster=ClusterParams(args.knn, args.linkage, args.threshold),
        index=IndexParams(args.lsh_bits, args.lsh_tables, args.seed),
        workers=args.workers,
    )


def _need(args, *names):
    for n in names:
        if getattr(args, n) is None:
            raise SystemExit(f"error: --{n.replace('_', '-')} is required for this command")


def _library_config(args, lib) -> BuildConfig:
    """Query-side config that matches the library's descriptor dimensions."""
    return build_config(args, DescriptorConfig(lib.rows, lib.cols, lib.max_radius, args.sensor_height))


def cmd_sample(args) -> int:
    _need(args, "world")
    world = load_world(args.world)
    if args.count:
        poses = random_poses(world, args.count, args.footprint, np.random.default_rng(args.seed))
    else:
        poses = sample_positions(world, args.spacing, args.footprint)
    text = format_poses(poses)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
        print(f"wrote {len(poses)} poses to {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def cmd_build(args) -> int:
    _need(args, "world", "library")
    with open(args.world, encoding="utf-8") as fh:
        world_text = fh.read()
    world = load_world(args.world)
    if args.poses:
        with open(args.poses, encoding="utf-8") as fh:
            poses = read_poses(fh.read())
    else:
        poses = sample_positions(world, args.spacing, args.footprint)
    config = build_config(args)
    lib, timings = build_library(world, poses, config, world_text, args.spacing)
    save_library(lib, args.library)
    sizes = [len(c.members) for c in lib.clusters.clusters]
    print(format_table([
        ("library", args.library),
        ("templates", len(lib.templates)),
        ("clusters", len(sizes)),
        ("mean cluster size", f"{np.mean(sizes):.2f}"),
        ("largest cluster", max(sizes)),
        ("similarity evaluations", lib.clusters.similarity_evaluations),
        ("hash tables", f"{len(lib.index.tables)} x {lib.index.params.bits} bits"
                        + (" (PCA-BP fell back to RBP)" if lib.index.pca_fallback else "")),
        ("raycast+describe (s)", f"{timings['templates']:.1f}"),
        ("cluster+index (s)", f"{timings['cluster+index']:.1f}"),
    ]))
    return 0


def cmd_match(args) -> int:
    _need(args, "library")
    lib = load_library(args.library)
    config = _library_config(args, lib)
    truth = None
    if args.scan:
        with open(args.scan, encoding="utf-8") as fh:
            cloud = parse_scan(fh.read())
    else:
        _need(args, "world", "pose")
        truth = Pose2D(*args.pose)
        cloud = raycast_scan(load_world(args.world), config.lidar, truth)
    query = extract_query(cloud, config.descriptor)
    t = time.perf_counter()
    res = match_one(lib, query, args.mode, args.k)
    elapsed = time.perf_counter() - t
    rows = [("mode", args.mode), ("template", res.template_id),
            ("x", f"{res.position.x:.3f}"), ("y", f"{res.position.y:.3f}"), ("yaw", f"{res.position.yaw:.4f}"),
            ("similarity", f"{res.similarity:.6f}"), ("shift", res.best_shift),
            ("templates scored", res.candidates_examined), ("time (ms)", f"{1e3 * elapsed:.3f}")]
    if truth is not None:
        err = float(np.hypot(res.position.x - truth.x, res.position.y - truth.y))
        rows.append(("position error (m)", f"{err:.3f}"))
    print(format_table(rows))
    return 0


def cmd_eval(args) -> int:
    _need(args, "library", "world")
    lib = load_library(args.library)
    world = load_world(args.world)
    config = _library_config(args, lib)
    if args.poses:
        with open(args.poses, encoding="utf-8") as fh:
            qset = make_queries(world, read_poses(fh.read()), config)
    else:
        qset = random_queries(world, args.count, config, args.seed, args.footprint)
    modes = MODES[:2] if args.mode == "both" else (args.mode,)
    reports = [run_eval(lib, qset, m, args.k) for m in modes]
    keys = [r[0] for r in reports[0].rows()]
    table = [[k] + [dict(r.rows())[k] for r in reports] for k in keys]
    print(format_table(table[1:], header=table[0]))
    return 0


def cmd_bench(args) -> int:
    counts = [int(c) for c in args.counts.split(",")]
    dims = [int(d) for d in args.dims.split(",")]
    params = IndexParams(args.lsh_bits, args.lsh_tables, args.seed)
    out = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        print(BENCH_HEADER, file=out, flush=True)
        for row in bench_sweep(counts, dims, args.seed, args.k, args.repeats, args.queries, params):
            print(row.csv(), file=out, flush=True)
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="screloc", description="LiDAR global re-localization with clustered "
                                 "Scan Context templates.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="write template grid poses (or random query poses)")
    _common(p)
    p.add_argument("--count", type=int, default=0, help="random poses instead of the grid")
    p.add_argument("--out", help="pose file (default stdout)")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("build", help="raycast, describe, cluster and index a world")
    _common(p)
    p.add_argument("--poses", help="pose file instead of the spacing grid")
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("match", help="re-localize one scan")
    _common(p)
    p.add_argument("--scan", help="scan file (x y z per line, sensor frame)")
    p.add_argument("--pose", type=float, nargs=3, metavar=("X", "Y", "YAW"),
                   help="simulate the scan at this pose in --world")
    p.add_argument("--mode", choices=MODES, default="cascade")
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("eval", help="success rate and timing on held-out queries")
    _common(p)
    p.add_argument("--poses", help="query pose file instead of random poses")
    p.add_argument("--count", type=int, default=1000, help="random query count")
    p.add_argument("--mode", choices=MODES + ("both",), default="both")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="KD-Tree vs LSH+KD-Tree search time sweep (CSV)")
    _common(p)
    p.add_argument("--counts", default="1000,3000,10000,30000,100000")
    p.add_argument("--dims", default="10,20,50,100")
    p.add_argument("--repeats", type=int, default=20)
    p.add_argument("--queries", type=int, default=10, help="queries per timing pass")
    p.add_argument("--out", help="CSV file (default stdout)")
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
