import struct
import zlib

import numpy as np
import pytest
from conftest import TOY_WORLD

from screloc.clustering import Cluster, ClusterSet, Template
from screloc.index import cascade_match, exhaustive_match
from screloc.library import (
    LibraryFormatError, LibraryIntegrityError, TemplateLibrary, decode_library, encode_library,
    load_library, save_library,
)
from screloc.lidar_sim import LidarModel, parse_world, random_poses, raycast_scan
from screloc.pipeline import extract_query


def _reseal(body: bytes) -> bytes:
    return body + struct.pack("<I", zlib.crc32(body))


def test_round_trip_is_structurally_identical(toy_library, tmp_path):
    lib, _ = toy_library
    path = tmp_path / "toy.sctl"
    save_library(lib, path)
    back = load_library(path)
    assert back.structurally_equal(lib)
    assert [t.id for t in back.templates] == [t.id for t in lib.templates]
    for a, b in zip(lib.index.tables, back.index.tables):
        assert set(a.buckets) == set(b.buckets)
        for key in a.buckets:
            assert sorted(a.buckets[key].ids.tolist()) == sorted(b.buckets[key].ids.tolist())


def test_repeated_saves_are_byte_identical(toy_library, tmp_path):
    lib, _ = toy_library
    save_library(lib, tmp_path / "a.sctl")
    save_library(lib, tmp_path / "b.sctl")
    back = load_library(tmp_path / "a.sctl")
    save_library(back, tmp_path / "c.sctl")
    a = (tmp_path / "a.sctl").read_bytes()
    assert a == (tmp_path / "b.sctl").read_bytes() == (tmp_path / "c.sctl").read_bytes()


def test_round_trip_is_behaviourally_identical(toy_library, tmp_path):
    lib, config = toy_library
    save_library(lib, tmp_path / "toy.sctl")
    back = load_library(tmp_path / "toy.sctl")
    world = parse_world(TOY_WORLD)
    for pose in random_poses(world, 25, 0.0, np.random.default_rng(5)):
        q = extract_query(raycast_scan(world, config.lidar, pose), config.descriptor)
        assert cascade_match(lib.bank, lib.clusters, lib.index, q, 3).same_match(
            cascade_match(back.bank, back.clusters, back.index, q, 3))
        assert exhaustive_match(lib.bank, q).same_match(exhaustive_match(back.bank, q))


def test_layout_header(toy_library):
    lib, _ = toy_library
    data = encode_library(lib)
    assert data[:4] == b"SCTL"
    assert struct.unpack("<IIIfI", data[4:24]) == (1, 20, 60, 80.0, len(lib.templates))
    per_template = 4 + 4 * 4 + 1 + 20 * 60 * 4 + 20 * 4
    clusters = sum(8 + 4 * len(c.members) for c in lib.clusters.clusters)
    tables = 4 * (1 + 20 * 4 + 8 * 20 * 4)
    assert len(data) == 24 + per_template * len(lib.templates) + 4 + clusters + 16 + tables + 4


def test_truncation_names_offset(toy_library):
    data = encode_library(toy_library[0])
    cut = data[:1000]
    with pytest.raises(LibraryFormatError, match="offset"):
        decode_library(cut)
    with pytest.raises(LibraryFormatError, match="offset 0"):
        decode_library(b"SCT")


def test_bad_magic_and_version(toy_library):
    data = bytearray(encode_library(toy_library[0]))
    with pytest.raises(LibraryFormatError, match="magic"):
        decode_library(b"XXXX" + bytes(data[4:]))
    data[4:8] = struct.pack("<I", 2)
    with pytest.raises(LibraryFormatError, match="version 2"):
        decode_library(bytes(data))


def test_checksum_detects_bit_flip(toy_library):
    data = bytearray(encode_library(toy_library[0]))
    data[500] ^= 0x01
    with pytest.raises(LibraryFormatError, match="checksum"):
        decode_library(bytes(data))


def test_trailing_bytes_rejected(toy_library):
    data = encode_library(toy_library[0])
    with pytest.raises(LibraryFormatError, match="trailing"):
        decode_library(_reseal(data[:-4] + b"\0\0"))


def _mutated(lib, templates=None, clusters=None):
    return TemplateLibrary(lib.rows, lib.cols, lib.max_radius, templates or lib.templates,
                           ClusterSet(clusters or lib.clusters.clusters), lib.index)


def test_integrity_duplicate_ids(toy_library):
    lib, _ = toy_library
    ts = list(lib.templates)
    t = ts[1]
    ts[1] = Template(ts[0].id, t.position, t.descriptor, t.cnz, t.pca_angle, t.eigen_gap, t.confident)
    with pytest.raises(LibraryIntegrityError, match="duplicate"):
        decode_library(encode_library(_mutated(lib, templates=ts)))


def test_integrity_cnz_mismatch(toy_library):
    lib, _ = toy_library
    ts = list(lib.templates)
    t = ts[3]
    ts[3] = Template(t.id, t.position, t.descriptor, t.cnz + np.float32(0.5), t.pca_angle, t.eigen_gap,
                     t.confident)
    with pytest.raises(LibraryIntegrityError, match="CNZ"):
        decode_library(encode_library(_mutated(lib, templates=ts)))


def test_integrity_partition(toy_library):
    lib, _ = toy_library
    cs = [Cluster(list(c.members), c.representative) for c in lib.clusters.clusters]
    dropped = cs[:-1]
    with pytest.raises(LibraryIntegrityError, match="cover"):
        decode_library(encode_library(_mutated(lib, clusters=dropped)))
    bad_rep = [Cluster(cs[0].members, cs[1].members[0])] + cs[1:]
    with pytest.raises(LibraryIntegrityError, match="representative"):
        decode_library(encode_library(_mutated(lib, clusters=bad_rep)))
    twice = cs + [Cluster([cs[0].members[0]], cs[0].members[0])]
    with pytest.raises(LibraryIntegrityError, match="two clusters"):
        decode_library(encode_library(_mutated(lib, clusters=twice)))


def test_failed_save_leaves_existing_file(toy_library, tmp_path, monkeypatch):
    lib, _ = toy_library
    path = tmp_path / "toy.sctl"
    save_library(lib, path)
    before = path.read_bytes()

    def boom(*a, **k):
        raise OSError("disk full")

    monkeypatch.setattr("screloc.library.os.replace", boom)
    with pytest.raises(OSError):
        save_library(lib, path)
    assert path.read_bytes() == before
    assert [p.name for p in tmp_path.iterdir()] == ["toy.sctl"]
