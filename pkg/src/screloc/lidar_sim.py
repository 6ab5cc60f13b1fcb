"""Box-world model, multi-line LiDAR ray casting and dense pose sampling.

The world is a ground plane plus axis-aligned boxes.  Scans are produced by
exact ray/slab intersection, so every returned point can be checked by hand.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class WorldParseError(ValueError):
    """Malformed line in a world or scan file."""

    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class WorldConfigError(ValueError):
    """World file parsed but is incomplete or inconsistent."""


def normalize_angle(a: float) -> float:
    """Wrap an angle to [-pi, pi)."""
    w = (a + math.pi) % (2.0 * math.pi) - math.pi
    # fmod rounding can land exactly on +pi
    return -math.pi if w >= math.pi else w


@dataclass(frozen=True)
class Pose2D:
    x: float
    y: float
    yaw: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "yaw", normalize_angle(self.yaw))


@dataclass(frozen=True)
class Box:
    cx: float
    cy: float
    cz: float
    sx: float
    sy: float
    sz: float

    def __post_init__(self):
        if min(self.sx, self.sy, self.sz) <= 0:
            raise WorldConfigError(f"box extents must be positive: {self}")

    @property
    def lo(self) -> tuple[float, float, float]:
        return (self.cx - self.sx / 2, self.cy - self.sy / 2, self.cz - self.sz / 2)

    @property
    def hi(self) -> tuple[float, float, float]:
        return (self.cx + self.sx / 2, self.cy + self.sy / 2, self.cz + self.sz / 2)


@dataclass(frozen=True)
class World:
    bounds: tuple[float, float, float, float]  # xmin, ymin, xmax, ymax
    ground_z: float = 0.0
    boxes: tuple[Box, ...] = ()
    _lo: np.ndarray = field(init=False, repr=False, compare=False)
    _hi: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        xmin, ymin, xmax, ymax = self.bounds
        if not (xmax > xmin and ymax > ymin):
            raise WorldConfigError(f"bounds must have positive area: {self.bounds}")
        lo = np.array([b.lo for b in self.boxes], dtype=np.float64).reshape(-1, 3)
        hi = np.array([b.hi for b in self.boxes], dtype=np.float64).reshape(-1, 3)
        object.__setattr__(self, "_lo", lo)
        object.__setattr__(self, "_hi", hi)

    def contains(self, x: float, y: float) -> bool:
        xmin, ymin, xmax, ymax = self.bounds
        return xmin <= x <= xmax and ymin <= y <= ymax

    def collides(self, x: float, y: float, radius: float) -> bool:
        """True if the disc of `radius` at (x, y) touches any box footprint."""
        if not self.boxes:
            return False
        lo, hi = self._lo, self._hi
        dx = np.maximum(np.maximum(lo[:, 0] - x, 0.0), x - hi[:, 0])
        dy = np.maximum(np.maximum(lo[:, 1] - y, 0.0), y - hi[:, 1])
        d2 = dx * dx + dy * dy
        if radius == 0:
            return bool(np.any((dx == 0) & (dy == 0)))
        return bool(np.any(d2 < radius * radius))


@dataclass(frozen=True)
class LidarModel:
    n_azimuth: int = 360
    n_channels: int = 16
    elevation_min: float = math.radians(-15.0)
    elevation_max: float = math.radians(15.0)
    max_range: float = 80.0
    sensor_height: float = 0.5

    def __post_init__(self):
        if self.n_azimuth < 1 or self.n_channels < 1:
            raise ValueError("n_azimuth and n_channels must be >= 1")
        if self.max_range <= 0:
            raise ValueError("max_range must be positive")
        if not self.elevation_min < self.elevation_max:
            raise ValueError("elevation_min must be < elevation_max")

    def elevations(self) -> np.ndarray:
        if self.n_channels == 1:
            return np.array([0.5 * (self.elevation_min + self.elevation_max)])
        return np.linspace(self.elevation_min, self.elevation_max, self.n_channels)

    def azimuths(self) -> np.ndarray:
        return np.arange(self.n_azimuth) * (2.0 * math.pi / self.n_azimuth)

    def ray_directions(self) -> np.ndarray:
        """Unit ray directions in the sensor frame, shape (n_azimuth * n_channels, 3)."""
        az, el = np.meshgrid(self.azimuths(), self.elevations(), indexing="ij")
        az, el = az.ravel(), el.ravel()
        ce = np.cos(el)
        return np.stack([ce * np.cos(az), ce * np.sin(az), np.sin(el)], axis=1)


def parse_world(text: str) -> World:
    bounds = None
    ground = None
    boxes = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, *rest = line.split()
        try:
            vals = [float(v) for v in rest]
        except ValueError:
            raise WorldParseError(lineno, f"non-numeric value in {line!r}") from None
        if not all(math.isfinite(v) for v in vals):
            raise WorldParseError(lineno, f"non-finite value in {line!r}")
        if key == "bounds":
            if len(vals) != 4:
                raise WorldParseError(lineno, "bounds takes 4 numbers")
            if bounds is not None:
                raise WorldParseError(lineno, "duplicate bounds")
            bounds = tuple(vals)
        elif key == "ground":
            if len(vals) != 1:
                raise WorldParseError(lineno, "ground takes 1 number")
            if ground is not None:
                raise WorldParseError(lineno, "duplicate ground")
            ground = vals[0]
        elif key == "box":
            if len(vals) != 6:
                raise WorldParseError(lineno, "box takes 6 numbers")
            try:
                boxes.append(Box(*vals))
            except WorldConfigError as exc:
                raise WorldParseError(lineno, str(exc)) from None
        else:
            raise WorldParseError(lineno, f"unknown directive {key!r}")
    if bounds is None:
        raise WorldConfigError("world file declares no bounds")
    return World(bounds=bounds, ground_z=0.0 if ground is None else ground, boxes=tuple(boxes))


def load_world(path) -> World:
    with open(path, encoding="utf-8") as fh:
        return parse_world(fh.read())


def parse_scan(text: str) -> np.ndarray:
    """Parse a scan file (`x y z` per line, sensor frame) into an (N, 3) array."""
    pts = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 3:
            raise WorldParseError(lineno, f"expected 'x y z', got {line!r}")
        try:
            pts.append([float(p) for p in parts])
        except ValueError:
            raise WorldParseError(lineno, f"non-numeric value in {line!r}") from None
    return np.array(pts, dtype=np.float64).reshape(-1, 3)


def format_scan(cloud: np.ndarray) -> str:
    return "".join(f"{x!r} {y!r} {z!r}\n" for x, y, z in np.asarray(cloud).tolist())


def raycast_scan(world: World, model: LidarModel, pose: Pose2D) -> np.ndarray:
    """Simulate one scan at `pose`; returns hit points in the sensor frame.

    Rays that hit nothing within `max_range` are dropped.  Points are
    ordered by (azimuth, channel) of the emitting ray.
    """
    dirs = model.ray_directions()
    c, s = math.cos(pose.yaw), math.sin(pose.yaw)
    wx = c * dirs[:, 0] - s * dirs[:, 1]
    wy = s * dirs[:, 0] + c * dirs[:, 1]
    wz = dirs[:, 2]
    origin = (pose.x, pose.y, world.ground_z + model.sensor_height)

    t_best = np.full(len(dirs), np.inf)
    down = wz < 0
    t_best[down] = -model.sensor_height / wz[down]
    hit_ground = down.copy()

    if world.boxes:
        t_near = None
        for axis, d in enumerate((wx, wy, wz)):
            # keep exact zeros away from the division; the slab test is sign-aware
            inv = 1.0 / np.where(d == 0.0, 1e-300, d)
            t1 = (world._lo[:, axis] - origin[axis])[None, :] * inv[:, None]
            t2 = (world._hi[:, axis] - origin[axis])[None, :] * inv[:, None]
            lo_t = np.minimum(t1, t2)
            hi_t = np.maximum(t1, t2)
            if t_near is None:
                t_near, t_far = lo_t, hi_t
            else:
                np.maximum(t_near, lo_t, out=t_near)
                np.minimum(t_far, hi_t, out=t_far)
        valid = (t_far >= t_near) & (t_near > 0.0)
        t_box = np.where(valid, t_near, np.inf).min(axis=1)
        closer = t_box < t_best
        t_best = np.where(closer, t_box, t_best)
        hit_ground &= ~closer

    keep = t_best <= model.max_range
    pts = dirs[keep] * t_best[keep, None]
    # ground returns sit exactly one sensor height below the origin
    pts[hit_ground[keep], 2] = -model.sensor_height
    return pts


def sample_positions(world: World, spacing: float, footprint_radius: float = 0.0) -> list[Pose2D]:
    """Regular XY grid over the bounds (yaw 0), minus poses colliding with boxes."""
    if spacing <= 0:
        raise ValueError("spacing must be positive")
    if footprint_radius < 0:
        raise ValueError("footprint_radius must be >= 0")
    xmin, ymin, xmax, ymax = world.bounds
    nx = int(math.floor((xmax - xmin) / spacing + 1e-9)) + 1
    ny = int(math.floor((ymax - ymin) / spacing + 1e-9)) + 1
    poses = []
    for iy in range(ny):
        y = ymin + iy * spacing
        for ix in range(nx):
            x = xmin + ix * spacing
            if not world.collides(x, y, footprint_radius):
                poses.append(Pose2D(x, y, 0.0))
    return poses


def random_poses(world: World, count: int, footprint_radius: float, rng: np.random.Generator,
                 random_yaw: bool = True) -> list[Pose2D]:
    """Uniform collision-free poses by rejection sampling."""
    xmin, ymin, xmax, ymax = world.bounds
    out = []
    tries = 0
    while len(out) < count:
        tries += 1
        if tries > 1000 * max(count, 1):
            raise RuntimeError("world has (almost) no free space for random poses")
        x = float(rng.uniform(xmin, xmax))
        y = float(rng.uniform(ymin, ymax))
        yaw = float(rng.uniform(-math.pi, math.pi)) if random_yaw else 0.0
        if not world.collides(x, y, footprint_radius):
            out.append(Pose2D(x, y, yaw))
    return out


def read_poses(text: str) -> list[Pose2D]:
    poses = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 3:
            raise WorldParseError(lineno, f"expected 'x y yaw', got {line!r}")
        try:
            poses.append(Pose2D(*(float(p) for p in parts)))
        except ValueError:
            raise WorldParseError(lineno, f"non-numeric value in {line!r}") from None
    return poses


def format_poses(poses) -> str:
    return "".join(f"{p.x!r} {p.y!r} {p.yaw!r}\n" for p in poses)
