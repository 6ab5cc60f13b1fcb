"""Exact k-nearest-neighbour KD-Tree with leaf buckets.

Splits on the widest coordinate at the median; leaves are scanned with
numpy.  Results are exact: ordered by (distance, id), and subtrees are only
pruned when they cannot contain a point at distance <= the current k-th best,
so tied points are never lost.
"""
from __future__ import annotations

import numpy as np


def sq_distances(points: np.ndarray, q: np.ndarray) -> np.ndarray:
    diff = points - q
    return np.einsum("ij,ij->i", diff, diff)


class KDTree:
    def __init__(self, points, ids=None, leaf_size: int = 16):
        pts = np.ascontiguousarray(points, dtype=np.float64)
        if pts.ndim != 2:
            pts = pts.reshape(len(pts), -1)
        self.dim = pts.shape[1]
        self.ids = np.arange(len(pts), dtype=np.int64) if ids is None else np.asarray(ids, dtype=np.int64)
        if len(self.ids) != len(pts):
            raise ValueError("ids and points differ in length")
        self.leaf_size = max(1, int(leaf_size))
        # node arrays: split dim (-1 for a leaf), split value, children / leaf slice
        self._dim: list[int] = []
        self._val: list[float] = []
        self._a: list[int] = []
        self._b: list[int] = []
        order = np.arange(len(pts))
        if len(pts):
            self._perm = order
            self._build(pts, 0, len(pts))
            self.points = pts[self._perm]
            self.ids = self.ids[self._perm]
            del self._perm
        else:
            self.points = pts

    def __len__(self):
        return len(self.points)

    def _new_node(self, dim, val, a, b) -> int:
        self._dim.append(dim)
        self._val.append(val)
        self._a.append(a)
        self._b.append(b)
        return len(self._dim) - 1

    def _build(self, pts, lo, hi) -> int:
        idx = self._perm[lo:hi]
        if hi - lo <= self.leaf_size:
            return self._new_node(-1, 0.0, lo, hi)
        sub = pts[idx]
        spread = sub.max(axis=0) - sub.min(axis=0)
        dim = int(np.argmax(spread))
        if spread[dim] == 0.0:
            return self._new_node(-1, 0.0, lo, hi)
        mid = (hi - lo) // 2
        part = np.argpartition(sub[:, dim], mid)
        self._perm[lo:hi] = idx[part]
        val = float(pts[self._perm[lo + mid], dim])
        node = self._new_node(dim, val, 0, 0)
        left = self._build(pts, lo, lo + mid)
        right = self._build(pts, lo + mid, hi)
        self._a[node] = left
        self._b[node] = right
        return node

    def query(self, q, k: int) -> tuple[np.ndarray, np.ndarray]:
        """(ids, distances) of the k nearest points, ascending by (distance, id)."""
        if k < 1:
            raise ValueError("k must be >= 1")
        if not len(self.points):
            return np.empty(0, dtype=np.int64), np.empty(0)
        q = np.asarray(q, dtype=np.float64).reshape(-1)
        best_d = np.empty(0)
        best_i = np.empty(0, dtype=np.int64)
        worst = np.inf
        stack = [(0, 0.0)]
        dims, vals, aa, bb = self._dim, self._val, self._a, self._b
        while stack:
            node, bound = stack.pop()
            if bound > worst:
                continue
            dim = dims[node]
            if dim < 0:
                lo, hi = aa[node], bb[node]
                d = sq_distances(self.points[lo:hi], q)
                keep = np.flatnonzero(d <= worst)
                if not len(keep):
                    continue
                best_d = np.concatenate([best_d, d[keep]])
                best_i = np.concatenate([best_i, self.ids[lo:hi][keep]])
                if len(best_d) > k:
                    keep = np.lexsort((best_i, best_d))[:k]
                    best_d, best_i = best_d[keep], best_i[keep]
                if len(best_d) == k:
                    worst = best_d.max()
                continue
            diff = q[dim] - vals[node]
            plane = diff * diff
            near, far = (aa[node], bb[node]) if diff < 0 else (bb[node], aa[node])
            stack.append((far, max(bound, plane)))
            stack.append((near, bound))
        order = np.lexsort((best_i, best_d))
        return best_i[order], np.sqrt(best_d[order])


def linear_knn(points, q, k: int, ids=None) -> tuple[np.ndarray, np.ndarray]:
    """Brute-force reference: full scan, sorted by (distance, id)."""
    pts = np.asarray(points, dtype=np.float64)
    ids = np.arange(len(pts), dtype=np.int64) if ids is None else np.asarray(ids, dtype=np.int64)
    d = sq_distances(pts, np.asarray(q, dtype=np.float64))
    order = np.lexsort((ids, d))[:k]
    return ids[order], np.sqrt(d[order])
