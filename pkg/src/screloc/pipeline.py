"""Offline library build and online query extraction."""
from __future__ import annotations

import hashlib
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .clustering import ClusterSet, TemplateBank, cluster_templates, make_template, Template
from .descriptor import DescriptorConfig, describe_cloud
from .index import IndexParams, build_index
from .library import TemplateLibrary
from .lidar_sim import LidarModel, Pose2D, World, raycast_scan

log = logging.getLogger(__name__)


class BuildError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage


@dataclass(frozen=True)
class ClusterParams:
    knn: int = 30
    linkage: str = "max"
    threshold: float = 0.4
    shift_radius: int = 2


@dataclass
class BuildConfig:
    lidar: LidarModel = field(default_factory=LidarModel)
    descriptor: DescriptorConfig = field(default_factory=DescriptorConfig)
    cluster: ClusterParams = field(default_factory=ClusterParams)
    index: IndexParams = field(default_factory=IndexParams)
    workers: int = 1


def extract_query(cloud: np.ndarray, config: DescriptorConfig = DescriptorConfig(),
                  position: Pose2D | None = None, id: int = -1) -> Template:
    desc, frame = describe_cloud(cloud, config)
    return make_template(id, position, desc, frame)


def _scan_and_describe(args):
    world, lidar, config, pose = args
    desc, frame = describe_cloud(raycast_scan(world, lidar, pose), config)
    return desc, frame


def scan_poses(world: World, lidar: LidarModel, config: DescriptorConfig, poses, workers: int = 1):
    """(descriptor, frame) per pose, in pose order."""
    jobs = [(world, lidar, config, p) for p in poses]
    if workers <= 1 or len(jobs) < 2:
        return [_scan_and_describe(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_scan_and_describe, jobs, chunksize=max(1, len(jobs) // (8 * workers))))


def make_templates(world: World, poses, config: BuildConfig) -> list[Template]:
    described = scan_poses(world, config.lidar, config.descriptor, poses, config.workers)
    return [make_template(i, p, d, f) for i, (p, (d, f)) in enumerate(zip(poses, described))]


def assemble_library(templates: list[Template], config: BuildConfig, provenance=None,
                     clusters: ClusterSet | None = None) -> TemplateLibrary:
    """Cluster (unless `clusters` is given), pick representatives, build the index."""
    bank = TemplateBank(templates)
    cp = config.cluster
    try:
        if clusters is None:
            clusters = cluster_templates(bank, cp.knn, cp.linkage, cp.threshold, cp.shift_radius)
    except Exception as exc:
        raise BuildError("cluster", exc) from exc
    try:
        rep_ids = np.array(sorted(clusters.representatives()), dtype=np.int64)
        rep_cnz = bank.cnz[[bank.row_of[i] for i in rep_ids]]
        index = build_index(rep_ids, rep_cnz, config.index)
    except Exception as exc:
        raise BuildError("index", exc) from exc
    d = config.descriptor
    lib = TemplateLibrary(d.rows, d.cols, float(np.float32(d.max_radius)), templates, clusters, index,
                          dict(provenance or {}))
    lib._bank = bank
    return lib


def build_library(world: World, poses, config: BuildConfig = BuildConfig(), world_text: str | None = None,
                  spacing: float | None = None) -> tuple[TemplateLibrary, dict]:
    """Whole offline stage.  Returns the library and per-stage timings (s)."""
    if len(poses) < 2:
        raise BuildError("input", ValueError("need at least 2 poses"))
    timings = {}
    t = time.perf_counter()
    try:
        templates = make_templates(world, poses, config)
    except Exception as exc:
        raise BuildError("raycast", exc) from exc
    timings["templates"] = time.perf_counter() - t
    t = time.perf_counter()
    prov = {"spacing": spacing}
    if world_text is not None:
        prov["world_sha256"] = hashlib.sha256(world_text.encode("utf-8")).hexdigest()
    lib = assemble_library(templates, config, prov)
    timings["cluster+index"] = time.perf_counter() - t
    log.info("built %d templates, %d clusters", len(templates), len(lib.clusters.clusters))
    return lib, timings
