"""Two-stage cascade search: LSH buckets of KD-Trees over representative CNZ
vectors, then descriptor matching inside the candidate clusters."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .clustering import ClusterSet, Template, TemplateBank
from .descriptor import ShiftPolicyScorer
from .kdtree import KDTree
from .lidar_sim import Pose2D, normalize_angle

log = logging.getLogger(__name__)

PCA_BP = 0
RBP = 1
KIND_NAMES = {PCA_BP: "PCA-BP", RBP: "RBP"}


class IndexConfigError(ValueError):
    pass


@dataclass(frozen=True)
class IndexParams:
    bits: int = 8
    tables: int = 4
    seed: int = 0


@dataclass(eq=False)
class HashFamily:
    kind: int
    center: np.ndarray  # (m,)
    basis: np.ndarray  # (b, m), unit rows

    @classmethod
    def from_stored(cls, kind: int, center, basis) -> "HashFamily":
        """Normalise float32-stored parameters exactly the same way on build and load."""
        center = np.asarray(center, dtype=np.float32).astype(np.float64)
        basis = np.asarray(basis, dtype=np.float32).astype(np.float64)
        basis = basis / np.linalg.norm(basis, axis=1, keepdims=True)
        return cls(int(kind), center, basis)

    @property
    def bits(self) -> int:
        return len(self.basis)

    def keys(self, vectors: np.ndarray) -> list[str]:
        proj = (np.asarray(vectors, dtype=np.float64) - self.center) @ self.basis.T
        bits = proj >= 0
        return ["".join("1" if b else "0" for b in row) for row in bits.tolist()]


def hash_key(v, family: HashFamily) -> str:
    """b-bit key: bit i is 1 iff the centred vector projects non-negatively on basis i."""
    return family.keys(np.asarray(v, dtype=np.float64)[None])[0]


def _pca_basis(x: np.ndarray, b: int) -> np.ndarray:
    centered = x - x.mean(axis=0)
    cov = centered.T @ centered / len(x)
    w, v = np.linalg.eigh(cov)
    basis = v[:, np.argsort(-w, kind="stable")[:b]].T
    # eigenvector sign is arbitrary; pin it so builds are reproducible
    for row in basis:
        j = int(np.argmax(np.abs(row)))
        if row[j] < 0:
            row *= -1.0
    return basis


def _random_basis(rng: np.random.Generator, b: int, m: int) -> np.ndarray:
    basis = rng.standard_normal((b, m))
    return basis / np.linalg.norm(basis, axis=1, keepdims=True)


def make_families(cnz: np.ndarray, params: IndexParams) -> list[HashFamily]:
    cnz = np.asarray(cnz, dtype=np.float64)
    n, m = cnz.shape
    b, t = params.bits, params.tables
    if b < 1 or t < 1:
        raise IndexConfigError("need at least 1 bit and 1 table")
    if b > m:
        raise IndexConfigError(f"{b} hash bits exceed the CNZ dimension {m}")
    center = cnz.mean(axis=0)
    rng = np.random.default_rng(params.seed)
    families = []
    for ti in range(t):
        if ti == 0 and n >= b:
            kind, basis = PCA_BP, _pca_basis(cnz, b)
        else:
            if ti == 0:
                log.warning("only %d representatives for %d PCA bits; table 0 falls back to RBP", n, b)
            kind, basis = RBP, _random_basis(rng, b, m)
        families.append(HashFamily.from_stored(kind, center.astype(np.float32), basis.astype(np.float32)))
    return families


@dataclass(eq=False)
class HashTable:
    family: HashFamily
    buckets: dict[str, KDTree]


@dataclass(eq=False)
class CascadeIndex:
    tables: list[HashTable]
    fallback: KDTree
    params: IndexParams
    rep_ids: np.ndarray

    @property
    def families(self) -> list[HashFamily]:
        return [t.family for t in self.tables]

    @property
    def pca_fallback(self) -> bool:
        return self.tables[0].family.kind != PCA_BP

    @classmethod
    def from_families(cls, families, rep_ids, rep_cnz, params: IndexParams, leaf_size: int = 16):
        rep_ids = np.asarray(rep_ids, dtype=np.int64)
        rep_cnz = np.asarray(rep_cnz, dtype=np.float64)
        tables = []
        for fam in families:
            groups: dict[str, list[int]] = {}
            for r, key in enumerate(fam.keys(rep_cnz)):
                groups.setdefault(key, []).append(r)
            buckets = {key: KDTree(rep_cnz[rows], rep_ids[rows], leaf_size) for key, rows in groups.items()}
            tables.append(HashTable(fam, buckets))
        return cls(tables, KDTree(rep_cnz, rep_ids, leaf_size), params, rep_ids)


def build_index(rep_ids, rep_cnz, params: IndexParams = IndexParams()) -> CascadeIndex:
    """Table 0 hashes with the top principal components of the representatives'
    CNZ vectors (PCA-BP), the others with seeded random unit bases (RBP)."""
    rep_cnz = np.asarray(rep_cnz, dtype=np.float64)
    if len(rep_cnz) < 1:
        raise IndexConfigError("index needs at least one representative")
    families = make_families(rep_cnz, params)
    return CascadeIndex.from_families(families, rep_ids, rep_cnz, params)


def query_candidates(index: CascadeIndex, cnz, k: int) -> list[int]:
    """Up to k representative ids: best of the probed buckets, topped up from the global tree."""
    if k < 1:
        raise ValueError("k must be >= 1")
    q = np.asarray(cnz, dtype=np.float64)
    best: dict[int, float] = {}
    for table in index.tables:
        tree = table.buckets.get(hash_key(q, table.family))
        if tree is None:
            continue
        for i, d in zip(*tree.query(q, k)):
            best[int(i)] = float(d)
    if len(best) < k:
        for i, d in zip(*index.fallback.query(q, k)):
            best[int(i)] = float(d)
    ranked = sorted(best.items(), key=lambda kv: (kv[1], kv[0]))
    return [i for i, _ in ranked[:k]]


@dataclass
class MatchResult:
    template_id: int
    position: Pose2D
    similarity: float
    best_shift: int
    candidates_examined: int
    timings: dict = field(default_factory=dict)

    def same_match(self, other: "MatchResult") -> bool:
        return (self.template_id == other.template_id and self.similarity == other.similarity
                and self.best_shift == other.best_shift)


def estimate_pose(template: Template, query: Template, best_shift: int) -> Pose2D:
    n = template.descriptor.cols
    yaw = template.pca_angle - query.pca_angle - best_shift * (2.0 * math.pi / n)
    return Pose2D(template.position.x, template.position.y, normalize_angle(yaw))


def _match_rows(bank: TemplateBank, rows: np.ndarray, query: Template, radius: int) -> tuple[int, float, int]:
    if query.descriptor.cells.shape != bank.descriptors.shape:
        raise ValueError("query descriptor dimensions differ from the library")
    scorer = ShiftPolicyScorer(query.descriptor.cells, query.confident, radius)
    d = bank.descriptors
    if len(rows) == len(bank) and np.array_equal(rows, np.arange(len(bank))):
        r, s, sh = scorer.argbest(d.unit, d.valid, bank.confident)
    else:
        r, s, sh = scorer.argbest(d.unit[rows], d.valid[rows], bank.confident[rows])
    return int(rows[r]), s, sh


def cascade_match(bank: TemplateBank, clusters: ClusterSet, index: CascadeIndex, query: Template,
                  k: int = 10, radius: int = 2) -> MatchResult:
    """Stage 1: k candidate representatives by CNZ; stage 2: every member of
    their clusters scored against the query descriptor."""
    t0 = time.perf_counter()
    cands = query_candidates(index, query.cnz, k)
    t1 = time.perf_counter()
    if not cands:
        raise RuntimeError("cascade produced no candidates")
    by_rep = _cluster_lookup(clusters)
    member_ids = sorted(m for c in cands for m in by_rep[c])
    rows = np.array([bank.row_of[i] for i in member_ids], dtype=np.int64)
    row, s, sh = _match_rows(bank, rows, query, radius)
    t2 = time.perf_counter()
    tmpl = bank.templates[row]
    return MatchResult(tmpl.id, estimate_pose(tmpl, query, sh), s, sh, len(rows),
                       {"knn_search": t1 - t0, "cluster_match": t2 - t1})


def _cluster_lookup(clusters: ClusterSet) -> dict[int, list[int]]:
    cache = clusters.extra.get("by_rep")
    if cache is None:
        cache = {c.representative: c.members for c in clusters.clusters}
        clusters.extra["by_rep"] = cache
    return cache


def exhaustive_match(bank: TemplateBank, query: Template, radius: int = 2) -> MatchResult:
    """Score every template; the accuracy oracle and timing baseline."""
    if not len(bank):
        raise ValueError("empty library")
    t0 = time.perf_counter()
    rows = np.argsort(bank.ids, kind="stable")
    row, s, sh = _match_rows(bank, rows, query, radius)
    t1 = time.perf_counter()
    tmpl = bank.templates[row]
    return MatchResult(tmpl.id, estimate_pose(tmpl, query, sh), s, sh, len(rows),
                       {"knn_search": 0.0, "cluster_match": t1 - t0})


def representative_match(bank: TemplateBank, clusters: ClusterSet, query: Template, radius: int = 2
                         ) -> MatchResult:
    """Exhaustive scan of the representatives, then of the winning cluster's members."""
    t0 = time.perf_counter()
    reps = sorted(clusters.representatives())
    rep_rows = np.array([bank.row_of[i] for i in reps], dtype=np.int64)
    rep_row, _, _ = _match_rows(bank, rep_rows, query, radius)
    t1 = time.perf_counter()
    members = _cluster_lookup(clusters)[int(bank.ids[rep_row])]
    rows = np.array([bank.row_of[i] for i in sorted(members)], dtype=np.int64)
    row, s, sh = _match_rows(bank, rows, query, radius)
    t2 = time.perf_counter()
    tmpl = bank.templates[row]
    return MatchResult(tmpl.id, estimate_pose(tmpl, query, sh), s, sh, len(rep_rows) + len(rows),
                       {"knn_search": t1 - t0, "cluster_match": t2 - t1})
