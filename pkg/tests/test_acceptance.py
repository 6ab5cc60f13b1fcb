"""Acceptance suite: one PASS/FAIL line per criterion.

The desk-scale library (about 8K templates) is built once per session; the
whole module takes a few minutes on one core.
"""
import itertools
import math
import time
from pathlib import Path

import numpy as np
import pytest
from conftest import random_cells
from test_clustering import naive_agglomerate

from screloc.clustering import (
    EdgeDistances, agglomerate, linkage_distance, select_representative,
)
from screloc.descriptor import (
    ScanContext, compute_cnz, distance, policy_shifts, rotate_columns, shifted_similarity, similarity,
)
from screloc.evaluation import (
    DESK_FOOTPRINT, DESK_SPACING, DESK_WORLD, bench_sweep, desk_config, growth_ratios, make_queries,
    random_queries, run_eval, trajectory_poses,
)
from screloc.index import cascade_match, exhaustive_match, query_candidates
from screloc.kdtree import KDTree, linear_knn
from screloc.library import load_library, save_library
from screloc.lidar_sim import load_world, random_poses, sample_positions
from screloc.pipeline import assemble_library, build_library

pytestmark = pytest.mark.slow

ROOT = Path(__file__).resolve().parents[1]
N_QUERIES = 1000
QUERY_SEED = 2024


def report(capsys, label, ok, detail):
    with capsys.disabled():
        print(f"\n[acceptance] {label}: {'PASS' if ok else 'FAIL'} ({detail})")


@pytest.fixture(scope="module")
def desk():
    t0 = time.perf_counter()
    text = (ROOT / DESK_WORLD).read_text()
    world = load_world(ROOT / DESK_WORLD)
    config = desk_config()
    lib, _ = build_library(world, sample_positions(world, DESK_SPACING, DESK_FOOTPRINT), config, text,
                           DESK_SPACING)
    build_s = time.perf_counter() - t0
    t0 = time.perf_counter()
    qset = random_queries(world, N_QUERIES, config, QUERY_SEED, DESK_FOOTPRINT)
    query_s = time.perf_counter() - t0
    return {"world": world, "config": config, "lib": lib, "qset": qset, "build_s": build_s,
            "query_s": query_s, "reports": {}}


def exhaustive_report(desk):
    if "exhaustive" not in desk["reports"]:
        desk["reports"]["exhaustive"] = run_eval(desk["lib"], desk["qset"], "exhaustive")
    return desk["reports"]["exhaustive"]


# --- 1 -----------------------------------------------------------------------------------

def test_criterion_1_rotation_invariance(capsys):
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst, cnz_ok = 1.0, True
    for i in range(100):
        cells = random_cells(rng, density=float(rng.uniform(0.1, 0.9)), zero_cols=int(rng.integers(0, 10)))
        d = ScanContext(cells, 80.0)
        cnz = compute_cnz(d)
        for r in range(60):
            rot = ScanContext(rotate_columns(cells, r), 80.0)
            cnz_ok &= compute_cnz(rot).tobytes() == cnz.tobytes()
            worst = min(worst, shifted_similarity(rot, d, range(60))[0])
    elapsed = time.perf_counter() - t0
    ok = cnz_ok and abs(worst - 1.0) <= 1e-6 and elapsed < 10
    report(capsys, "criterion 1 rotation invariance", ok,
           f"CNZ bit-identical={cnz_ok}, min s_max={worst:.9f}, {elapsed:.1f}s")
    assert ok


# --- 2 -----------------------------------------------------------------------------------

def test_criterion_2_algebra(capsys):
    rng = np.random.default_rng(2)
    exact, sym = True, 0.0
    for _ in range(1000):
        x = ScanContext(random_cells(rng, density=float(rng.uniform(0.05, 1.0))), 80.0)
        y = ScanContext(random_cells(rng, density=float(rng.uniform(0.05, 1.0))), 80.0)
        s = similarity(x, y)
        exact &= distance(x, y) + s == 1.0
        sym = max(sym, abs(s - similarity(y, x)))
    m = rng.random((60, 60))
    m = (m + m.T) / 2
    edges = np.array(list(itertools.combinations(range(60), 2)))
    dist = EdgeDistances(60, edges, m[edges[:, 0], edges[:, 1]], len(edges))
    ordered = 0
    for _ in range(50):
        perm = rng.permutation(60)
        a, b = perm[:int(rng.integers(1, 20))], perm[30:30 + int(rng.integers(1, 20))]
        lo, mid, hi = (linkage_distance(dist, a, b, l) for l in ("min", "avg", "max"))
        ordered += lo <= mid <= hi
    ok = exact and sym <= 1e-12 and ordered == 50
    report(capsys, "criterion 2 similarity algebra", ok,
           f"d+s==1 exactly={exact}, max asymmetry={sym:.1e}, linkage ordered {ordered}/50")
    assert ok


# --- 3 -----------------------------------------------------------------------------------

def _brute_representative(bank, rows):
    ids = [int(bank.ids[r]) for r in rows]
    ts = [bank.templates[r] for r in rows]
    totals = [math.fsum(shifted_similarity(x.descriptor, y.descriptor,
                                           policy_shifts(60, x.confident, y.confident))[0] for y in ts)
              for x in ts]
    top = max(totals)
    return min(i for i, t in zip(ids, totals) if t >= top - 1e-9)


def test_criterion_3_oracles(capsys, desk):
    rng = np.random.default_rng(3)
    pts = rng.random((1000, 20))
    tree = KDTree(pts)
    kd_ok = all(np.array_equal(tree.query(q, 10)[0], linear_knn(pts, q, 10)[0])
                and np.array_equal(tree.query(q, 10)[1], linear_knn(pts, q, 10)[1])
                for q in rng.random((100, 20)))

    lib = desk["lib"]
    bank = lib.bank
    checked = rep_ok = 0
    for c in lib.clusters.clusters:
        if len(c.members) > 50:
            continue
        rows = [bank.row_of[m] for m in c.members]
        checked += 1
        rep_ok += select_representative(rows, bank) == _brute_representative(bank, rows) == c.representative

    dend_ok = 0
    trials = 0
    for linkage in ("max", "min", "avg"):
        for _ in range(100):
            n = int(rng.integers(2, 9))
            m = np.zeros((n, n))
            for i, j in itertools.combinations(range(n), 2):
                m[i, j] = m[j, i] = 1.0 if rng.random() < 0.2 else rng.random()
            edges = np.array(list(itertools.combinations(range(n), 2)), dtype=np.int64).reshape(-1, 2)
            dist = EdgeDistances(n, edges, m[edges[:, 0], edges[:, 1]], len(edges))
            t = float(rng.uniform(0.1, 1.0))
            trials += 1
            dend_ok += agglomerate(dist, linkage, t) == naive_agglomerate(m.tolist(), linkage, t)
    ok = kd_ok and rep_ok == checked and dend_ok == trials
    report(capsys, "criterion 3 oracle equivalence", ok,
           f"kd-tree exact={kd_ok}, representatives {rep_ok}/{checked}, dendrograms {dend_ok}/{trials}")
    assert ok


# --- 4 -----------------------------------------------------------------------------------

def test_criterion_4_global_relocalization(capsys, desk):
    t0 = time.perf_counter()
    exh = exhaustive_report(desk)
    world, config = desk["world"], desk["config"]
    poses = trajectory_poses(world, DESK_SPACING, DESK_FOOTPRINT)
    traj_lib, _ = build_library(world, poses, config)
    traj = run_eval(traj_lib, desk["qset"], "exhaustive")
    runtime = desk["build_s"] + desk["query_s"] + time.perf_counter() - t0
    n = len(desk["lib"].templates)
    frac = len(traj_lib.templates) / n
    ok = (8000 <= n <= 10000 and exh.success(0.4) >= 0.90 and frac <= 0.02 and traj.success(0.4) < 0.30
          and runtime <= 600)
    report(capsys, "criterion 4 global re-localization", ok,
           f"{n} templates, exhaustive success@0.4m={exh.success(0.4):.4f} on {len(exh.errors)} queries, "
           f"trajectory library {len(traj_lib.templates)} templates ({100 * frac:.2f}%) "
           f"success@0.4m={traj.success(0.4):.4f}, runtime {runtime:.0f}s")
    assert ok


# --- 5 -----------------------------------------------------------------------------------

def test_criterion_5_cascade_fidelity(capsys, desk):
    exh = exhaustive_report(desk)
    casc = {k: run_eval(desk["lib"], desk["qset"], "cascade", k) for k in (1, 5, 10, 50)}
    rates = [casc[k].success(0.4) for k in (1, 5, 10, 50)]
    gap = exh.success(0.4) - casc[10].success(0.4)
    speed = exh.mean_ms / casc[10].mean_ms
    monotone = all(a <= b for a, b in zip(rates, rates[1:]))
    ok = abs(gap) <= 0.02 and casc[10].mean_ms <= exh.mean_ms / 10 and monotone
    report(capsys, "criterion 5 cascade fidelity", ok,
           f"exhaustive {exh.success(0.4):.4f} vs cascade k=10 {casc[10].success(0.4):.4f} "
           f"(gap {100 * gap:.2f} pp), {casc[10].mean_ms:.2f} ms vs {exh.mean_ms:.2f} ms ({speed:.1f}x), "
           f"success@0.4m by k 1/5/10/50 = {'/'.join(f'{r:.4f}' for r in rates)}")
    assert ok


def test_cascade_agrees_with_exhaustive_scores(capsys, desk):
    lib, qset = desk["lib"], desk["qset"]
    close = bounded = 0
    for q in qset.queries[:300]:
        c = cascade_match(lib.bank, lib.clusters, lib.index, q, 10)
        e = exhaustive_match(lib.bank, q)
        close += c.similarity >= e.similarity - 0.02
        bounded += c.similarity <= e.similarity + 1e-12
    ok = close >= 0.95 * 300 and bounded == 300
    report(capsys, "property cascade score agreement", ok,
           f"within 0.02 of exhaustive on {close}/300, never above on {bounded}/300")
    assert ok


def test_exact_templates_hit_through_cascade(capsys, desk):
    """A library template used as the query comes back exactly whenever its
    cluster is among the candidates; misses must be what exhaustive returns."""
    lib = desk["lib"]
    bank = lib.bank
    rep_of = {m: c.representative for c in lib.clusters.clusters for m in c.members}
    rng = np.random.default_rng(5)
    reached = hits = 0
    for r in rng.choice(len(lib.templates), 1000, replace=False):
        t = lib.templates[r]
        if rep_of[t.id] not in query_candidates(lib.index, t.cnz, 10):
            continue
        reached += 1
        res = cascade_match(bank, lib.clusters, lib.index, t, 10)
        exact = res.similarity == pytest.approx(1.0, abs=1e-9) and res.template_id == t.id
        hits += exact or res.same_match(exhaustive_match(bank, t))
    ok = reached > 0 and hits >= 0.99 * reached
    report(capsys, "property exact-template cascade hits", ok,
           f"{hits}/{reached} hits among the {reached}/1000 templates whose cluster was reached")
    assert ok


# --- 6 -----------------------------------------------------------------------------------

def _block(lib, size=1000):
    """The `size` templates nearest the world centre: a compact spatial sub-block."""
    bank = lib.bank
    x0, y0, x1, y1 = load_world(ROOT / DESK_WORLD).bounds
    c = np.array([(x0 + x1) / 2, (y0 + y1) / 2])
    d = np.linalg.norm(bank.xy - c, axis=1)
    rows = np.sort(np.argsort(d, kind="stable")[:size])
    return [lib.templates[r] for r in rows], c, float(d[rows].max())


def test_criterion_6_constraint_economy(capsys, desk):
    lib, world = desk["lib"], desk["world"]
    n = len(lib.templates)
    evals = lib.clusters.similarity_evaluations
    all_pairs = n * (n - 1) // 2

    templates, centre, radius = _block(lib)
    m = len(templates)
    constrained = assemble_library(templates, desk_config(knn=30))
    unconstrained = assemble_library(templates, desk_config(knn=m - 1))
    rng = np.random.default_rng(6)
    poses = [p for p in random_poses(world, 4000, DESK_FOOTPRINT, rng)
             if math.hypot(p.x - centre[0], p.y - centre[1]) <= radius - 0.5][:300]
    qset = make_queries(world, poses, desk["config"])
    sc = run_eval(constrained, qset, "representative").success(0.4)
    su = run_eval(unconstrained, qset, "representative").success(0.4)
    se = run_eval(constrained, qset, "exhaustive").success(0.4)
    ok = evals <= 30 * n and all_pairs / evals >= 150 and abs(sc - su) <= 0.02
    report(capsys, "criterion 6 constraint economy", ok,
           f"N={n}: {evals} evaluations <= K*N={30 * n}, {all_pairs / evals:.0f}x fewer than all pairs; "
           f"{m}-template block, {len(poses)} queries: constrained {sc:.4f} "
           f"({len(constrained.clusters.clusters)} clusters, {constrained.clusters.similarity_evaluations} evals) "
           f"vs unconstrained {su:.4f} ({len(unconstrained.clusters.clusters)} clusters, "
           f"{unconstrained.clusters.similarity_evaluations} evals), plain exhaustive {se:.4f}")
    assert ok


# --- 7 -----------------------------------------------------------------------------------

def test_criterion_7_persistence(capsys, desk, tmp_path):
    lib, qset = desk["lib"], desk["qset"]
    a, b = tmp_path / "a.sctl", tmp_path / "b.sctl"
    save_library(lib, a)
    save_library(lib, b)
    back = load_library(a)
    save_library(back, tmp_path / "c.sctl")
    same_bytes = a.read_bytes() == b.read_bytes() == (tmp_path / "c.sctl").read_bytes()
    structural = back.structurally_equal(lib)
    same = 0
    for q in qset.queries[:100]:
        same += (cascade_match(lib.bank, lib.clusters, lib.index, q).same_match(
                 cascade_match(back.bank, back.clusters, back.index, q))
                 and exhaustive_match(lib.bank, q).same_match(exhaustive_match(back.bank, q)))
    ok = same_bytes and structural and same == 100
    report(capsys, "criterion 7 persistence", ok,
           f"byte-identical saves={same_bytes}, structural={structural}, identical matches {same}/100, "
           f"{a.stat().st_size} bytes")
    assert ok


# --- 8 -----------------------------------------------------------------------------------

def test_criterion_8_bench_growth(capsys):
    counts, dims = (1000, 10000, 100000), (10, 100)
    rows = list(bench_sweep(counts, dims, seed=8, repeats=20))
    kd, lsh = growth_ratios(rows, max(dims))
    ok = lsh < kd
    table = "; ".join(f"{r.count}x{r.dim}: kd {r.kdtree_us:.0f}us lsh {r.lsh_kdtree_us:.0f}us" for r in rows)
    report(capsys, "criterion 8 bench growth", ok,
           f"dim {max(dims)} growth 1K->100K: kd-tree {kd:.1f}x, lsh+kd-tree {lsh:.1f}x; {table}")
    assert ok
