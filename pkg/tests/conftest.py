import math

import numpy as np
import pytest

from screloc.lidar_sim import parse_world

TOY_WORLD = """\
# 3x3 grid of poses inside a walled yard
bounds -1 -1 1 1
ground 0
box 0 6 1.5 14 0.5 3
box 0 -6 1 14 0.5 2
box 6 0 2 0.5 14 4
box -6 0 1.25 0.5 14 2.5
box 3 2.5 0.75 1 1.5 1.5
box -2.5 -3 1.5 2 1 3
"""


@pytest.fixture
def toy_world():
    return parse_world(TOY_WORLD)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_cells(rng, m=20, n=60, density=0.4, zero_cols=0):
    cells = rng.uniform(0.1, 5.0, size=(m, n)) * (rng.random((m, n)) < density)
    if zero_cols:
        cells[:, rng.choice(n, zero_cols, replace=False)] = 0.0
    return cells.astype(np.float32)


def angle_close(a, b, tol):
    d = (a - b + math.pi) % (2 * math.pi) - math.pi
    return abs(d) <= tol


@pytest.fixture(scope="session")
def toy_library():
    """Library over the toy yard at 0.25 m spacing, plus its config."""
    from screloc.lidar_sim import sample_positions
    from screloc.pipeline import BuildConfig, ClusterParams, build_library

    world = parse_world(TOY_WORLD)
    config = BuildConfig(cluster=ClusterParams(knn=8))
    lib, _ = build_library(world, sample_positions(world, 0.25, 0.0), config, TOY_WORLD, 0.25)
    return lib, config
