"""Re-localization evaluation and the search benchmark."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .clustering import Template
from .index import IndexParams, build_index, cascade_match, exhaustive_match, query_candidates, representative_match
from .kdtree import KDTree
from .library import TemplateLibrary
from .lidar_sim import Pose2D, World, random_poses, raycast_scan
from .descriptor import DescriptorConfig
from .pipeline import BuildConfig, ClusterParams, extract_query

THRESHOLDS = (0.2, 0.4, 0.6, 0.8, 1.0)
MODES = ("cascade", "exhaustive", "representative")

# Desk-scale experiment: a 25 m yard sampled every 0.25 m.  The descriptor
# radius is scaled to the yard and the hash width to the representative count
# (about 50 representatives per bucket), see scripts/desk_experiment.py.
DESK_WORLD = "worlds/desk25.world"
DESK_SPACING = 0.25
DESK_FOOTPRINT = 0.3
DESK_MAX_RADIUS = 30.0
DESK_LSH_BITS = 5


def desk_config(**cluster) -> BuildConfig:
    return BuildConfig(descriptor=DescriptorConfig(max_radius=DESK_MAX_RADIUS),
                       cluster=ClusterParams(**cluster),
                       index=IndexParams(bits=DESK_LSH_BITS))


@dataclass
class QuerySet:
    poses: list[Pose2D]
    queries: list[Template]


def make_queries(world: World, poses, config: BuildConfig) -> QuerySet:
    poses = list(poses)
    queries = [extract_query(raycast_scan(world, config.lidar, p), config.descriptor) for p in poses]
    return QuerySet(poses, queries)


def random_queries(world: World, count: int, config: BuildConfig, seed: int = 0,
                   footprint: float = 0.3) -> QuerySet:
    """Held-out queries at uniformly random free positions and random yaw."""
    poses = random_poses(world, count, footprint, np.random.default_rng(seed))
    return make_queries(world, poses, config)


@dataclass
class EvalReport:
    mode: str
    k: int | None
    errors: np.ndarray  # position error (m) per query
    times: np.ndarray  # seconds per query
    candidates: np.ndarray  # templates scored per query
    template_count: int
    cluster_count: int
    thresholds: tuple = THRESHOLDS

    def success(self, eps: float) -> float:
        return float(np.mean(self.errors <= eps)) if len(self.errors) else 0.0

    @property
    def mean_ms(self) -> float:
        return 1e3 * float(np.mean(self.times))

    @property
    def p95_ms(self) -> float:
        return 1e3 * float(np.percentile(self.times, 95))

    def rows(self) -> list[tuple[str, str]]:
        out = [("mode", self.mode + (f" (k={self.k})" if self.k is not None else "")),
               ("queries", str(len(self.errors))),
               ("templates", str(self.template_count)),
               ("clusters", str(self.cluster_count))]
        out += [(f"success@{eps:.1f}m", f"{self.success(eps):.4f}") for eps in self.thresholds]
        out += [("mean error (m)", f"{float(np.mean(self.errors)):.3f}"),
                ("mean time (ms)", f"{self.mean_ms:.3f}"),
                ("p95 time (ms)", f"{self.p95_ms:.3f}"),
                ("mean templates scored", f"{float(np.mean(self.candidates)):.1f}")]
        return out


def format_table(rows, header=None) -> str:
    """Aligned two-or-more column plain-text table."""
    rows = [tuple(str(c) for c in r) for r in rows]
    if header:
        rows = [tuple(header)] + rows
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
    if header:
        lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def match_one(lib: TemplateLibrary, query: Template, mode: str = "cascade", k: int = 10):
    if mode == "cascade":
        return cascade_match(lib.bank, lib.clusters, lib.index, query, k)
    if mode == "exhaustive":
        return exhaustive_match(lib.bank, query)
    if mode == "representative":
        return representative_match(lib.bank, lib.clusters, query)
    raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")


def run_eval(lib: TemplateLibrary, qset: QuerySet, mode: str = "cascade", k: int = 10) -> EvalReport:
    errors, times, cands = [], [], []
    for pose, q in zip(qset.poses, qset.queries):
        t = time.perf_counter()
        res = match_one(lib, q, mode, k)
        times.append(time.perf_counter() - t)
        errors.append(math.hypot(res.position.x - pose.x, res.position.y - pose.y))
        cands.append(res.candidates_examined)
    return EvalReport(mode, k if mode == "cascade" else None, np.array(errors), np.array(times),
                      np.array(cands), len(lib.templates), len(lib.clusters.clusters))


def trajectory_poses(world: World, spacing: float = 0.25, footprint: float = 0.3) -> list[Pose2D]:
    """A straight drive along the world's horizontal midline, obstacle poses skipped."""
    x0, y0, x1, y1 = world.bounds
    y = 0.5 * (y0 + y1)
    xs = x0 + spacing * np.arange(int(math.floor((x1 - x0) / spacing + 1e-9)) + 1)
    return [Pose2D(float(x), y, 0.0) for x in xs if not world.collides(float(x), y, footprint)]


# --- search benchmark ---------------------------------------------------------------------------

@dataclass
class BenchRow:
    count: int
    dim: int
    kdtree_us: float
    lsh_kdtree_us: float
    extra: dict = field(default_factory=dict)

    def csv(self) -> str:
        return f"{self.count},{self.dim},{self.kdtree_us:.3f},{self.lsh_kdtree_us:.3f}"


BENCH_HEADER = "count,dim,kdtree_us,lsh_kdtree_us"


def _median_us(fn, queries, repeats: int) -> float:
    """Median over `repeats` of the mean per-query time of one pass."""
    samples = []
    for _ in range(repeats):
        t = time.perf_counter()
        for q in queries:
            fn(q)
        samples.append((time.perf_counter() - t) / len(queries))
    return 1e6 * float(np.median(samples))


def bench_point(count: int, dim: int, rng: np.random.Generator, k: int = 10, repeats: int = 20,
                n_queries: int = 10, params: IndexParams = IndexParams()) -> BenchRow:
    """Exact KD-Tree search vs. LSH bucket selection plus bucket KD-Trees on uniform vectors."""
    data = rng.random((count, dim))
    queries = rng.random((n_queries, dim))
    tree = KDTree(data)
    index = build_index(np.arange(count), data, params)
    kd = _median_us(lambda q: tree.query(q, k), queries, repeats)
    lsh = _median_us(lambda q: query_candidates(index, q, k), queries, repeats)
    return BenchRow(count, dim, kd, lsh)


def bench_sweep(counts, dims, seed: int = 0, k: int = 10, repeats: int = 20, n_queries: int = 10,
                params: IndexParams = IndexParams()):
    """Yields one BenchRow per (dim, count), dims outermost."""
    rng = np.random.default_rng(seed)
    for dim in dims:
        for count in counts:
            yield bench_point(count, dim, rng, k, repeats, n_queries, params)


def growth_ratios(rows, dim: int) -> tuple[float, float]:
    """(kdtree, lsh) time ratio between the largest and smallest count at `dim`."""
    sel = sorted((r for r in rows if r.dim == dim), key=lambda r: r.count)
    lo, hi = sel[0], sel[-1]
    return hi.kdtree_us / lo.kdtree_us, hi.lsh_kdtree_us / lo.lsh_kdtree_us
