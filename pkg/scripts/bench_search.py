"""KD-Tree vs LSH + KD-Tree search time over data size and dimension.

    python scripts/bench_search.py --out bench.csv

Writes the CSV rows of `screloc bench` and prints, per dimension, how much
each method slows down from the smallest to the largest count.
"""
import argparse
import sys

from screloc.evaluation import BENCH_HEADER, bench_sweep, growth_ratios


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--counts", default="1000,3000,10000,30000,100000")
    ap.add_argument("--dims", default="10,20,50,100")
    ap.add_argument("--repeats", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", help="CSV path (default stdout)")
    args = ap.parse_args(argv)
    counts = [int(c) for c in args.counts.split(",")]
    dims = [int(d) for d in args.dims.split(",")]
    out = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    rows = []
    print(BENCH_HEADER, file=out, flush=True)
    for row in bench_sweep(counts, dims, args.seed, repeats=args.repeats):
        rows.append(row)
        print(row.csv(), file=out, flush=True)
    if out is not sys.stdout:
        out.close()
    for d in dims:
        kd, lsh = growth_ratios(rows, d)
        print(f"dim {d}: {counts[0]} -> {counts[-1]} vectors, kd-tree x{kd:.1f}, lsh+kd-tree x{lsh:.1f}",
              file=sys.stderr)


if __name__ == "__main__":
    main()
