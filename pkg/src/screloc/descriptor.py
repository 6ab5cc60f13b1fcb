"""PCA-aligned Scan Context descriptors, CNZ vectors and column-cosine similarity.

Cells are stored as float32 (the on-disk precision) so that a descriptor
computed in memory and one reloaded from a library compare bit-exactly.
All arithmetic on them is float64.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .lidar_sim import normalize_angle


class DegenerateInputError(ValueError):
    pass


class DimensionMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class DescriptorConfig:
    rows: int = 20
    cols: int = 60
    max_radius: float = 80.0
    sensor_height: float = 0.5
    confidence_threshold: float = 1.2

    def __post_init__(self):
        if self.rows < 1 or self.cols < 2:
            raise ValueError("need rows >= 1 and cols >= 2")
        if self.max_radius <= 0:
            raise ValueError("max_radius must be positive")


@dataclass(frozen=True)
class PCAFrame:
    angle: float
    eigen_gap: float
    confident: bool


@dataclass(frozen=True, eq=False)
class ScanContext:
    cells: np.ndarray  # (rows, cols) float32, >= 0
    max_radius: float

    @property
    def rows(self) -> int:
        return self.cells.shape[0]

    @property
    def cols(self) -> int:
        return self.cells.shape[1]

    def __eq__(self, other):
        if not isinstance(other, ScanContext):
            return NotImplemented
        return (self.max_radius == other.max_radius
                and self.cells.shape == other.cells.shape
                and np.array_equal(self.cells, other.cells))


def compute_pca_frame(cloud: np.ndarray, confidence_threshold: float = 1.2) -> PCAFrame:
    """Principal direction of the XY-projected cloud.

    The returned angle lies in [-pi/2, pi/2); the remaining pi ambiguity is
    resolved by :func:`describe_cloud`.
    """
    cloud = np.asarray(cloud, dtype=np.float64)
    if cloud.ndim != 2 or len(cloud) < 3:
        raise DegenerateInputError("PCA needs at least 3 points")
    xy = cloud[:, :2] - cloud[:, :2].mean(axis=0)
    cxx = float(np.dot(xy[:, 0], xy[:, 0])) / len(xy)
    cyy = float(np.dot(xy[:, 1], xy[:, 1])) / len(xy)
    cxy = float(np.dot(xy[:, 0], xy[:, 1])) / len(xy)
    half_tr = 0.5 * (cxx + cyy)
    rad = math.hypot(0.5 * (cxx - cyy), cxy)
    lam1 = half_tr + rad
    lam2 = max(half_tr - rad, 0.0)
    angle = 0.5 * math.atan2(2.0 * cxy, cxx - cyy)
    if angle >= math.pi / 2:
        angle -= math.pi
    if lam1 <= 0.0:
        return PCAFrame(0.0, 1.0, False)
    if lam2 <= 1e-12 * lam1:
        gap = math.inf
    else:
        gap = lam1 / lam2
    if rad <= 1e-12 * lam1:
        gap = 1.0  # isotropic: no preferred axis at all
    return PCAFrame(angle, gap, gap >= confidence_threshold)


def compute_scan_context(cloud: np.ndarray, frame: PCAFrame, rows: int = 20, cols: int = 60,
                         max_radius: float = 80.0, sensor_height: float = 0.5) -> ScanContext:
    """Bin the cloud, rotated into the PCA frame, into rings x sectors of max height."""
    cloud = np.asarray(cloud, dtype=np.float64).reshape(-1, 3)
    c, s = math.cos(frame.angle), math.sin(frame.angle)
    x = c * cloud[:, 0] + s * cloud[:, 1]
    y = -s * cloud[:, 0] + c * cloud[:, 1]
    r = np.hypot(x, y)
    keep = r <= max_radius
    x, y, r = x[keep], y[keep], r[keep]
    h = np.maximum(cloud[keep, 2] + sensor_height, 0.0)

    ring = np.minimum((r / max_radius * rows).astype(np.int64), rows - 1)
    theta = np.mod(np.arctan2(y, x), 2.0 * math.pi)
    sector = np.minimum((theta / (2.0 * math.pi) * cols).astype(np.int64), cols - 1)

    cells = np.zeros(rows * cols, dtype=np.float64)
    np.maximum.at(cells, ring * cols + sector, h)
    return ScanContext(cells.reshape(rows, cols).astype(np.float32), float(max_radius))


def describe_cloud(cloud: np.ndarray, config: DescriptorConfig = DescriptorConfig()
                   ) -> tuple[ScanContext, PCAFrame]:
    """PCA frame + Scan Context with the pi sign ambiguity resolved.

    The axis direction is flipped when the back half of the sectors carries
    more height mass than the front half.
    """
    frame = compute_pca_frame(cloud, config.confidence_threshold)
    args = (config.rows, config.cols, config.max_radius, config.sensor_height)
    desc = compute_scan_context(cloud, frame, *args)
    half = config.cols // 2
    cells = desc.cells.astype(np.float64)
    if cells[:, :half].sum() < cells[:, half:].sum():
        frame = PCAFrame(normalize_angle(frame.angle + math.pi), frame.eigen_gap, frame.confident)
        desc = compute_scan_context(cloud, frame, *args)
    return desc, frame


def compute_cnz(desc: ScanContext) -> np.ndarray:
    """Fraction of non-zero cells per ring (float32, exact multiples of 1/cols)."""
    counts = np.count_nonzero(desc.cells > 0, axis=1)
    return (counts / desc.cols).astype(np.float32)


def rotate_columns(cells: np.ndarray, r: int) -> np.ndarray:
    """Rotate sectors by `r` columns: column j moves to (j + r) mod n."""
    return np.roll(cells, r, axis=1)


def _unit_columns(cells: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    c = np.asarray(cells, dtype=np.float64)
    norms = np.sqrt(np.einsum("...ij,...ij->...j", c, c))
    valid = norms > 0
    with np.errstate(invalid="ignore", divide="ignore"):
        unit = np.where(valid[..., None, :], c / np.where(valid, norms, 1.0)[..., None, :], 0.0)
    return unit, valid


def _check_dims(x: ScanContext, y: ScanContext):
    if x.cells.shape != y.cells.shape:
        raise DimensionMismatchError(f"descriptor shapes differ: {x.cells.shape} vs {y.cells.shape}")


def similarity(x: ScanContext, y: ScanContext) -> float:
    """Mean cosine between paired columns, over columns non-zero in both."""
    _check_dims(x, y)
    ux, vx = _unit_columns(x.cells)
    uy, vy = _unit_columns(y.cells)
    n_valid = int((vx & vy).sum())
    if n_valid == 0:
        return 0.0
    # columns invalid in either descriptor are all-zero after normalisation;
    # same flattening and summation order as the shifted path at shift 0
    total = (ux.reshape(1, -1) * uy.reshape(1, -1)).sum(axis=1)[0]
    return float(min(max(total / n_valid, 0.0), 1.0))


def distance(x: ScanContext, y: ScanContext) -> float:
    return 1.0 - similarity(x, y)


def shift_priority(n: int) -> np.ndarray:
    """Shifts ordered by tie-break preference: small circular magnitude, then small value."""
    return np.array(sorted(range(n), key=lambda s: (min(s, n - s), s)), dtype=np.int64)


def policy_shifts(n: int, query_confident: bool, target_confident: bool, radius: int = 2) -> np.ndarray:
    """Shift set used in matching: a small window around 0 and n/2 when both
    PCA frames are trustworthy, every shift otherwise."""
    if not (query_confident and target_confident):
        return np.arange(n)
    near = {(d + c) % n for c in (0, n // 2) for d in range(-radius, radius + 1)}
    return np.array(sorted(near), dtype=np.int64)


def shifted_similarity(query: ScanContext, target: ScanContext, shifts) -> tuple[float, int]:
    """Best similarity of the query, rotated back by each shift, against the target.

    A shift `s` pairs query column (j + s) mod n with target column j, so a
    target equal to ``rotate_columns(query, r)`` is matched at ``(n - r) % n``.
    """
    _check_dims(query, target)
    n = query.cols
    shifts = sorted({int(s) % n for s in shifts}, key=lambda s: (min(s, n - s), s))
    if not shifts:
        raise ValueError("shift set is empty")
    qs = QueryStack(query.cells, np.array(shifts, dtype=np.int64))
    bank = DescriptorBank(target.cells[None])
    scores = _exact_scores(qs, bank.unit[0], bank.valid[0])
    best = int(np.argmax(scores))
    return float(scores[best]), shifts[best]


def _exact_scores(stack: "QueryStack", unit_row: np.ndarray, valid_row: np.ndarray) -> np.ndarray:
    """Per-shift similarity of one row, computed in a fixed summation order.

    The result depends only on the two inputs, never on how many other rows
    are being scored, unlike a batched matmul.
    """
    sums = (stack.unit_t * unit_row).sum(axis=1)
    counts = stack.valid.T @ valid_row
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(counts > 0, sums / np.where(counts > 0, counts, 1.0), 0.0)
    return np.clip(out, 0.0, 1.0)


class DescriptorBank:
    """Column-normalised descriptors stacked for batched scoring."""

    def __init__(self, cells: np.ndarray):
        cells = np.asarray(cells)
        self.shape = cells.shape[1:]
        unit, valid = _unit_columns(cells)
        self.unit = np.ascontiguousarray(unit.reshape(len(cells), -1))
        self.valid = valid.astype(np.float64)

    def __len__(self):
        return len(self.unit)


class QueryStack:
    """All requested column rotations of one query, laid out for a single matmul."""

    def __init__(self, cells: np.ndarray, shifts: np.ndarray):
        m, n = cells.shape
        self.shifts = np.asarray(shifts, dtype=np.int64)
        unit, valid = _unit_columns(cells)
        gather = (np.arange(n)[None, :] + self.shifts[:, None]) % n  # (S, n)
        # rot[:, s, j] = unit[:, (j + shift_s) % n]
        rot = unit[:, gather]  # (m, S, n)
        self.unit = np.ascontiguousarray(rot.transpose(0, 2, 1).reshape(m * n, len(self.shifts)))
        self.unit_t = np.ascontiguousarray(self.unit.T)
        self.valid = np.ascontiguousarray(valid.astype(np.float64)[gather].T)  # (n, S)

    def score(self, bank_unit: np.ndarray, bank_valid: np.ndarray) -> np.ndarray:
        """Similarity for every (bank row, shift) pair, shape (B, S)."""
        dots = bank_unit @ self.unit
        counts = bank_valid @ self.valid
        with np.errstate(invalid="ignore", divide="ignore"):
            sim = np.where(counts > 0, dots / np.where(counts > 0, counts, 1.0), 0.0)
        return np.clip(sim, 0.0, 1.0)


class ShiftPolicyScorer:
    """Scores one query against bank rows under the confidence-gated shift policy."""

    def __init__(self, cells: np.ndarray, confident: bool, radius: int = 2):
        n = cells.shape[1]
        self.n = n
        self.confident = bool(confident)
        order = shift_priority(n)
        self.stack = QueryStack(cells, order)
        narrow = set(policy_shifts(n, True, True, radius).tolist())
        self.narrow_mask = np.array([s in narrow for s in order.tolist()])
        self.order = order

    def best(self, bank_unit: np.ndarray, bank_valid: np.ndarray, bank_confident: np.ndarray
             ) -> tuple[np.ndarray, np.ndarray]:
        """Per bank row: (s_max, best_shift), via one BLAS matmul.

        BLAS results may differ in the last bits depending on how many rows
        are scored together; use :meth:`exact` when the value must not depend
        on the batch.
        """
        sim = self.stack.score(bank_unit, bank_valid)
        if self.confident:
            restrict = np.asarray(bank_confident, dtype=bool)
            if restrict.any():
                sim[np.ix_(restrict, ~self.narrow_mask)] = -1.0
        idx = np.argmax(sim, axis=1)
        return sim[np.arange(len(sim)), idx], self.order[idx]

    def exact(self, unit_row: np.ndarray, valid_row: np.ndarray, confident: bool) -> tuple[float, int]:
        """(s_max, best_shift) for one row, independent of batching."""
        sims = _exact_scores(self.stack, unit_row, valid_row)
        if self.confident and confident:
            sims[~self.narrow_mask] = -1.0
        i = int(np.argmax(sims))
        return float(sims[i]), int(self.order[i])

    def argbest(self, bank_unit: np.ndarray, bank_valid: np.ndarray, bank_confident: np.ndarray,
                margin: float = 1e-9) -> tuple[int, float, int]:
        """Row with the highest s_max: (row, s_max, best_shift).

        Rows within `margin` of the BLAS maximum are rescored one by one, so the
        winner and its score are the same however the rows were batched.
        Ties go to the earliest row.
        """
        approx, _ = self.best(bank_unit, bank_valid, bank_confident)
        finalists = np.flatnonzero(approx >= approx.max() - margin)
        best = None
        for r in finalists.tolist():
            s, sh = self.exact(bank_unit[r], bank_valid[r], bool(bank_confident[r]))
            if best is None or s > best[1]:
                best = (r, s, sh)
        return best
