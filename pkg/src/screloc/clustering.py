"""Connectivity-constrained agglomerative clustering of templates.

Only pairs joined in the XY k-nearest-neighbour graph get a descriptor
distance; every other pair carries the surrogate distance 1 (similarity
zero).  Because merging stops once the smallest linkage reaches the
threshold (<= 1), two clusters with no edge between them can never merge, so
the linkage table only needs entries for connected cluster pairs.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from .descriptor import ScanContext, ShiftPolicyScorer, DescriptorBank, DegenerateInputError, compute_cnz
from .lidar_sim import Pose2D

LINKAGES = ("max", "min", "avg")


@dataclass(frozen=True, eq=False)
class Template:
    id: int
    position: Pose2D | None
    descriptor: ScanContext
    cnz: np.ndarray
    pca_angle: float
    eigen_gap: float
    confident: bool

    def __eq__(self, other):
        if not isinstance(other, Template):
            return NotImplemented
        return (self.id == other.id and self.position == other.position
                and self.descriptor == other.descriptor
                and np.array_equal(self.cnz, other.cnz)
                and self.pca_angle == other.pca_angle
                and self.eigen_gap == other.eigen_gap
                and self.confident == other.confident)


def make_template(id: int, position: Pose2D | None, descriptor: ScanContext, frame) -> Template:
    """Template with metadata rounded to the float32 precision it is stored at."""
    f32 = lambda v: float(np.float32(v))  # noqa: E731
    pos = None if position is None else Pose2D(f32(position.x), f32(position.y), 0.0)
    return Template(int(id), pos, descriptor, compute_cnz(descriptor), f32(frame.angle),
                    f32(frame.eigen_gap), bool(frame.confident))


class TemplateBank:
    """Stacked template arrays for vectorised scoring, rows in the given order."""

    def __init__(self, templates):
        self.templates = list(templates)
        self.ids = np.array([t.id for t in self.templates], dtype=np.int64)
        self.row_of = {int(i): r for r, i in enumerate(self.ids)}
        cells = np.stack([t.descriptor.cells for t in self.templates]) if self.templates else np.zeros((0, 1, 2))
        self.descriptors = DescriptorBank(cells)
        self.confident = np.array([t.confident for t in self.templates], dtype=bool)
        self.cnz = np.array([t.cnz for t in self.templates], dtype=np.float64).reshape(len(self.templates), -1)
        self.xy = np.array([(t.position.x, t.position.y) if t.position else (np.nan, np.nan)
                            for t in self.templates], dtype=np.float64).reshape(-1, 2)

    def __len__(self):
        return len(self.templates)

    def scorer(self, row: int, radius: int = 2) -> ShiftPolicyScorer:
        t = self.templates[row]
        return ShiftPolicyScorer(t.descriptor.cells, t.confident, radius)


@dataclass
class NeighborGraph:
    k: int
    lists: list[list[int]]  # raw k-NN lists, indexed by row
    edges: np.ndarray  # (E, 2) row pairs i < j, lexicographically sorted

    def neighbors(self) -> list[list[int]]:
        adj = [[] for _ in self.lists]
        for i, j in self.edges.tolist():
            adj[i].append(j)
            adj[j].append(i)
        return adj


def build_neighbor_graph(xy: np.ndarray, k: int, chunk: int = 512) -> NeighborGraph:
    """Exact k-NN by planar distance (ties to the smaller index), symmetrised by union."""
    xy = np.asarray(xy, dtype=np.float64)
    n = len(xy)
    if n < 2:
        raise DegenerateInputError("neighbour graph needs at least 2 templates")
    if k < 1:
        raise ValueError("k must be >= 1")
    kk = min(k, n - 1)
    lists: list[list[int]] = []
    for start in range(0, n, chunk):
        block = xy[start:start + chunk]
        dx = block[:, 0, None] - xy[None, :, 0]
        dy = block[:, 1, None] - xy[None, :, 1]
        d2 = dx * dx + dy * dy
        rows = np.arange(len(block))
        d2[rows, start + rows] = np.inf
        kth = np.partition(d2, kk - 1, axis=1)[:, kk - 1]
        for r in range(len(block)):
            cand = np.flatnonzero(d2[r] <= kth[r])
            cand = cand[np.lexsort((cand, d2[r, cand]))][:kk]
            lists.append(cand.tolist())
    pairs = {(min(i, j), max(i, j)) for i, lst in enumerate(lists) for j in lst}
    edges = np.array(sorted(pairs), dtype=np.int64).reshape(-1, 2)
    return NeighborGraph(kk, lists, edges)


@dataclass
class EdgeDistances:
    n: int
    edges: np.ndarray  # (E, 2)
    dist: np.ndarray  # (E,)
    evaluations: int

    def as_dict(self) -> dict[tuple[int, int], float]:
        return {(int(i), int(j)): float(d) for (i, j), d in zip(self.edges, self.dist)}

    def lookup(self, i: int, j: int) -> float:
        """Distance with the surrogate 1 for non-edges."""
        if i == j:
            return 0.0
        a, b = min(i, j), max(i, j)
        return self.as_dict().get((a, b), 1.0)


def sparse_descriptor_distances(bank: TemplateBank, graph: NeighborGraph, radius: int = 2) -> EdgeDistances:
    """d = 1 - s_max on every graph edge; one similarity evaluation per edge."""
    edges = graph.edges
    dist = np.empty(len(edges))
    if len(edges):
        starts = np.searchsorted(edges[:, 0], np.arange(len(bank) + 1))
        d = bank.descriptors
        for i in range(len(bank)):
            lo, hi = starts[i], starts[i + 1]
            if lo == hi:
                continue
            js = edges[lo:hi, 1]
            s, _ = bank.scorer(i, radius).best(d.unit[js], d.valid[js], bank.confident[js])
            dist[lo:hi] = 1.0 - s
    return EdgeDistances(len(bank), edges, dist, len(edges))


def agglomerate(distances: EdgeDistances, linkage: str = "max", threshold: float = 0.4) -> list[list[int]]:
    """Merge clusters in order of smallest linkage until it reaches `threshold`.

    Ties merge the pair with the lexicographically smallest
    (min member, other cluster's min member).  Returns sorted member lists,
    ordered by smallest member.
    """
    if linkage not in LINKAGES:
        raise ValueError(f"linkage must be one of {LINKAGES}")
    if not 0.0 < threshold <= 1.0:
        raise ValueError("threshold must lie in (0, 1]")
    n = distances.n
    members = {i: [i] for i in range(n)}
    version = [0] * n
    # link[a][b]: max/min -> linkage distance; avg -> summed pair distance
    # (non-edge pairs counted as 1), divided by |a||b| on use
    link: dict[int, dict[int, float]] = {i: {} for i in range(n)}
    for (i, j), d in zip(distances.edges.tolist(), distances.dist.tolist()):
        link[i][j] = link[j][i] = d

    def value(a, b, raw):
        if linkage == "avg":
            return raw / (len(members[a]) * len(members[b]))
        return raw

    heap = []
    for a in range(n):
        for b, raw in link[a].items():
            if a < b:
                v = value(a, b, raw)
                if v < threshold:
                    heap.append((v, a, b, 0, 0))
    heapq.heapify(heap)

    while heap:
        v, a, b, va, vb = heapq.heappop(heap)
        if a not in members or b not in members or version[a] != va or version[b] != vb:
            continue
        # a < b, so the merged cluster keeps a's id (its smallest member)
        la, lb = link.pop(a), link.pop(b)
        la.pop(b, None)
        lb.pop(a, None)
        na, nb = len(members[a]), len(members[b])
        merged: dict[int, float] = {}
        for c in set(la) | set(lb):
            nc = len(members[c])
            if linkage == "max":
                raw = max(la.get(c, 1.0), lb.get(c, 1.0))
            elif linkage == "min":
                raw = min(la.get(c, 1.0), lb.get(c, 1.0))
            else:
                raw = la.get(c, float(nc * na)) + lb.get(c, float(nc * nb))
            merged[c] = raw
            lc = link[c]
            lc.pop(b, None)
            lc[a] = raw
        members[a] = sorted(members[a] + members.pop(b))
        link[a] = merged
        version[a] += 1
        for c, raw in merged.items():
            v = value(a, c, raw)
            if v < threshold:
                x, y = (a, c) if a < c else (c, a)
                heapq.heappush(heap, (v, x, y, version[x], version[y]))
    return [members[i] for i in sorted(members)]


def linkage_distance(distances: EdgeDistances, ci, cj, linkage: str) -> float:
    """Direct evaluation of a cluster-to-cluster linkage (reference for tests)."""
    table = distances.as_dict()
    ds = [table.get((min(x, y), max(x, y)), 1.0) for x in ci for y in cj]
    if linkage == "max":
        return max(ds)
    if linkage == "min":
        return min(ds)
    return math.fsum(ds) / len(ds)


MEDOID_TIE_TOL = 1e-9


def medoid(ids, sim: np.ndarray) -> int:
    """argmax_x sum_y sim[x, y]; ties go to the smallest id.

    Totals within MEDOID_TIE_TOL of the best count as ties, so rounding noise
    in the similarity kernel cannot break mathematically exact ties.
    """
    totals = [math.fsum(row) for row in np.asarray(sim, dtype=np.float64).tolist()]
    top = max(totals)
    return int(min(ids[p] for p in range(len(ids)) if totals[p] >= top - MEDOID_TIE_TOL))


def select_representative(cluster, bank: TemplateBank, radius: int = 2) -> int:
    """Member (by row) maximising its summed s_max to the whole cluster; returns its id."""
    rows = sorted(cluster, key=lambda r: bank.ids[r])
    if len(rows) == 1:
        return int(bank.ids[rows[0]])
    d = bank.descriptors
    idx = np.array(rows)
    sim = np.stack([bank.scorer(r, radius).best(d.unit[idx], d.valid[idx], bank.confident[idx])[0]
                    for r in rows])
    return medoid([int(bank.ids[r]) for r in rows], sim)


@dataclass
class Cluster:
    members: list[int]
    representative: int


@dataclass
class ClusterSet:
    clusters: list[Cluster]
    linkage: str | None = None
    threshold: float | None = None
    similarity_evaluations: int = 0
    extra: dict = field(default_factory=dict)

    def representatives(self) -> list[int]:
        return [c.representative for c in self.clusters]

    def cluster_of(self) -> dict[int, int]:
        return {m: ci for ci, c in enumerate(self.clusters) for m in c.members}


def cluster_templates(bank: TemplateBank, k: int = 30, linkage: str = "max", threshold: float = 0.4,
                      radius: int = 2) -> ClusterSet:
    """Full offline clustering: neighbour graph, edge distances, merging, medoids.

    Cluster members and representatives are template ids.
    """
    if len(bank) == 1:
        tid = int(bank.ids[0])
        return ClusterSet([Cluster([tid], tid)], linkage, threshold, 0)
    graph = build_neighbor_graph(bank.xy, k)
    dist = sparse_descriptor_distances(bank, graph, radius)
    groups = agglomerate(dist, linkage, threshold)
    clusters = []
    for rows in groups:
        rep = select_representative(rows, bank, radius)
        clusters.append(Cluster(sorted(int(bank.ids[r]) for r in rows), rep))
    clusters.sort(key=lambda c: c.members[0])
    return ClusterSet(clusters, linkage, threshold, dist.evaluations)
