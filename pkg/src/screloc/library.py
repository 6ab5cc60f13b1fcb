"""Template library container and its `.sctl` binary format.

Layout (little-endian)::

    "SCTL" | version u32 = 1 | m u32 | n u32 | max_radius f32 | count u32
    per template: id u32, x f32, y f32, pca_angle f32, eigen_gap f32,
                  confident u8, cells m*n f32 (row-major), cnz m f32
    cluster count u32
    per cluster: representative u32, member count u32, member ids u32[]
    b u32 | T u32 | seed u64
    per table: kind u8, center m f32, basis b*m f32
    CRC32 (u32) of every preceding byte

KD-Trees and bucket maps are rebuilt on load.
"""
from __future__ import annotations

import io
import os
import struct
import tempfile
import zlib
from dataclasses import dataclass, field

import numpy as np

from .clustering import Cluster, ClusterSet, Template, TemplateBank
from .descriptor import ScanContext, compute_cnz
from .index import CascadeIndex, HashFamily, IndexParams
from .lidar_sim import Pose2D

MAGIC = b"SCTL"
VERSION = 1
U32_MAX = 2**32 - 1


class LibraryFormatError(ValueError):
    pass


class LibraryIntegrityError(ValueError):
    pass


@dataclass(eq=False)
class TemplateLibrary:
    rows: int
    cols: int
    max_radius: float
    templates: list[Template]
    clusters: ClusterSet
    index: CascadeIndex
    provenance: dict = field(default_factory=dict)
    _bank: TemplateBank | None = field(default=None, repr=False)

    @property
    def bank(self) -> TemplateBank:
        if self._bank is None:
            self._bank = TemplateBank(self.templates)
        return self._bank

    @property
    def index_params(self) -> IndexParams:
        return self.index.params

    def structurally_equal(self, other: "TemplateLibrary") -> bool:
        if (self.rows, self.cols, self.max_radius) != (other.rows, other.cols, other.max_radius):
            return False
        if len(self.templates) != len(other.templates):
            return False
        if any(a != b for a, b in zip(self.templates, other.templates)):
            return False
        ca = [(c.representative, c.members) for c in self.clusters.clusters]
        cb = [(c.representative, c.members) for c in other.clusters.clusters]
        if ca != cb or self.index_params != other.index_params:
            return False
        fa, fb = self.index.families, other.index.families
        return len(fa) == len(fb) and all(
            x.kind == y.kind and np.array_equal(x.center, y.center) and np.array_equal(x.basis, y.basis)
            for x, y in zip(fa, fb))


def _u32(v, what: str) -> bytes:
    if not 0 <= v <= U32_MAX:
        raise LibraryFormatError(f"{what} = {v} does not fit in u32")
    return struct.pack("<I", v)


def encode_library(lib: TemplateLibrary) -> bytes:
    m, n = lib.rows, lib.cols
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<I", VERSION))
    out.write(_u32(m, "rows") + _u32(n, "cols") + struct.pack("<f", lib.max_radius))
    out.write(_u32(len(lib.templates), "template count"))
    f32 = np.dtype("<f4")
    for t in lib.templates:
        out.write(_u32(t.id, "template id"))
        out.write(struct.pack("<ffffB", t.position.x, t.position.y, t.pca_angle, t.eigen_gap, int(t.confident)))
        out.write(np.ascontiguousarray(t.descriptor.cells, dtype=f32).tobytes())
        out.write(np.ascontiguousarray(t.cnz, dtype=f32).tobytes())
    out.write(_u32(len(lib.clusters.clusters), "cluster count"))
    for c in lib.clusters.clusters:
        out.write(_u32(c.representative, "representative id") + _u32(len(c.members), "member count"))
        out.write(np.asarray([_check_u32(i) for i in c.members], dtype="<u4").tobytes())
    p = lib.index.params
    out.write(_u32(p.bits, "hash bits") + _u32(len(lib.index.tables), "table count"))
    out.write(struct.pack("<Q", p.seed))
    for fam in lib.index.families:
        out.write(struct.pack("<B", fam.kind))
        out.write(np.asarray(fam.center, dtype=f32).tobytes())
        out.write(np.asarray(fam.basis, dtype=f32).tobytes())
    body = out.getvalue()
    return body + struct.pack("<I", zlib.crc32(body))


def _check_u32(v: int) -> int:
    if not 0 <= v <= U32_MAX:
        raise LibraryFormatError(f"id {v} does not fit in u32")
    return v


def save_library(lib: TemplateLibrary, path) -> None:
    """Write atomically: a temp file in the same directory, then rename."""
    data = encode_library(lib)
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".sctl-", dir=directory)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, size: int, what: str) -> bytes:
        if self.pos + size > len(self.data):
            raise LibraryFormatError(
                f"truncated file: need {size} bytes for {what} at offset {self.pos}, "
                f"only {len(self.data) - self.pos} left")
        chunk = self.data[self.pos:self.pos + size]
        self.pos += size
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack("<" + fmt, self.take(struct.calcsize("<" + fmt), what))

    def array(self, count: int, dtype: str, what: str) -> np.ndarray:
        dt = np.dtype(dtype)
        return np.frombuffer(self.take(count * dt.itemsize, what), dtype=dt).copy()


def decode_library(data: bytes) -> TemplateLibrary:
    if len(data) < 8:
        raise LibraryFormatError(f"truncated file: {len(data)} bytes at offset 0")
    r = _Reader(data)
    if r.take(4, "magic") != MAGIC:
        raise LibraryFormatError("bad magic at offset 0 (not an .sctl file)")
    (version,) = r.unpack("I", "version")
    if version != VERSION:
        raise LibraryFormatError(f"unsupported version {version} at offset 4")
    if len(data) < 12:
        raise LibraryFormatError(f"truncated file at offset {len(data)}")
    (stored_crc,) = struct.unpack("<I", data[-4:])
    body = data[:-4]
    r = _Reader(body)
    r.pos = 8
    m, n = r.unpack("II", "dimensions")
    (max_radius,) = r.unpack("f", "max_radius")
    (count,) = r.unpack("I", "template count")
    templates = []
    for _ in range(count):
        tid, x, y, angle, gap, conf = r.unpack("IffffB", "template header")
        cells = r.array(m * n, "<f4", "descriptor cells").reshape(m, n).astype(np.float32)
        cnz = r.array(m, "<f4", "cnz vector").astype(np.float32)
        desc = ScanContext(cells, float(max_radius))
        templates.append(Template(tid, Pose2D(x, y, 0.0), desc, cnz, angle, gap, bool(conf)))
    (n_clusters,) = r.unpack("I", "cluster count")
    clusters = []
    for _ in range(n_clusters):
        rep, size = r.unpack("II", "cluster header")
        members = r.array(size, "<u4", "cluster members").astype(np.int64).tolist()
        clusters.append(Cluster(members, rep))
    bits, n_tables = r.unpack("II", "index params")
    (seed,) = r.unpack("Q", "index seed")
    families = []
    for _ in range(n_tables):
        (kind,) = r.unpack("B", "hash kind")
        center = r.array(m, "<f4", "hash center")
        basis = r.array(bits * m, "<f4", "hash basis").reshape(bits, m)
        families.append(HashFamily.from_stored(kind, center, basis))
    if r.pos != len(body):
        raise LibraryFormatError(f"{len(body) - r.pos} unexpected trailing bytes at offset {r.pos}")
    if zlib.crc32(body) != stored_crc:
        raise LibraryFormatError(f"checksum mismatch at offset {len(body)}")

    _validate(templates, clusters, m, n)
    cset = ClusterSet(clusters)
    params = IndexParams(bits, n_tables, seed)
    rep_ids = np.array(sorted(cset.representatives()), dtype=np.int64)
    by_id = {t.id: t for t in templates}
    rep_cnz = np.array([by_id[i].cnz for i in rep_ids], dtype=np.float64).reshape(len(rep_ids), m)
    index = CascadeIndex.from_families(families, rep_ids, rep_cnz, params)
    return TemplateLibrary(m, n, float(max_radius), templates, cset, index)


def _validate(templates, clusters, m, n):
    ids = [t.id for t in templates]
    if len(set(ids)) != len(ids):
        raise LibraryIntegrityError("duplicate template ids")
    for t in templates:
        if not np.array_equal(compute_cnz(t.descriptor), t.cnz):
            raise LibraryIntegrityError(f"template {t.id}: stored CNZ does not match its descriptor")
        if np.any(t.descriptor.cells < 0) or not np.all(np.isfinite(t.descriptor.cells)):
            raise LibraryIntegrityError(f"template {t.id}: invalid descriptor cells")
    seen = set()
    idset = set(ids)
    for c in clusters:
        if c.representative not in c.members:
            raise LibraryIntegrityError(f"representative {c.representative} is not a member of its cluster")
        for mid in c.members:
            if mid not in idset:
                raise LibraryIntegrityError(f"cluster member {mid} is not a template")
            if mid in seen:
                raise LibraryIntegrityError(f"template {mid} belongs to two clusters")
            seen.add(mid)
    if seen != idset:
        raise LibraryIntegrityError("clusters do not cover every template")


def load_library(path) -> TemplateLibrary:
    with open(path, "rb") as fh:
        return decode_library(fh.read())
