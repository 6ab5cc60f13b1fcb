"""Generate a random box world with perimeter walls.

    python scripts/make_world.py --size 25 --boxes 40 --seed 7 > worlds/desk25.world
"""
import argparse
import sys

import numpy as np


def make_world(size: float, n_boxes: int, seed: int, wall_height: float = 3.0,
               margin: float = 2.0) -> str:
    rng = np.random.default_rng(seed)
    half = size / 2
    lines = [f"# random box world, size={size} boxes={n_boxes} seed={seed}",
             f"bounds {-half} {-half} {half} {half}", "ground 0"]
    # perimeter walls just outside the samplable region
    w = half + margin
    t = 0.4
    lines += [
        f"box 0 {w} {wall_height / 2} {2 * w + t} {t} {wall_height}",
        f"box 0 {-w} {wall_height / 2} {2 * w + t} {t} {wall_height}",
        f"box {w} 0 {wall_height / 2} {t} {2 * w + t} {wall_height}",
        f"box {-w} 0 {wall_height / 2} {t} {2 * w + t} {wall_height}",
    ]
    for _ in range(n_boxes):
        sx, sy = rng.uniform(0.3, 2.5, size=2)
        sz = rng.uniform(0.6, 6.0)
        cx, cy = rng.uniform(-half, half, size=2)
        lines.append(f"box {cx:.3f} {cy:.3f} {sz / 2:.3f} {sx:.3f} {sy:.3f} {sz:.3f}")
    return "\n".join(lines) + "\n"


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--size", type=float, default=25.0)
    ap.add_argument("--boxes", type=int, default=40)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--wall-height", type=float, default=3.0)
    args = ap.parse_args(argv)
    sys.stdout.write(make_world(args.size, args.boxes, args.seed, args.wall_height))


if __name__ == "__main__":
    main()
