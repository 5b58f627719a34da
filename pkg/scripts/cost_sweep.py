"""Augmented-GEMM FLOPs and overhead as S grows (CSV to stdout).

    python3 scripts/cost_sweep.py --n 2048 --k 4096 --m 4096
"""

import argparse
import csv
import sys

from arcquant.refgemm import GemmShape, cost_model


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=2048)
    ap.add_argument("--k", type=int, default=4096)
    ap.add_argument("--m", type=int, default=4096)
    ap.add_argument("--step", type=int, default=16)
    ap.add_argument("--max-s", type=int, default=1024)
    args = ap.parse_args()
    shape = GemmShape(args.n, args.k, args.m)
    w = csv.writer(sys.stdout)
    w.writerow(["s", "flops", "overhead"])
    for s in range(0, args.max_s + 1, args.step):
        c = cost_model(shape, s)
        w.writerow([s, c.flops, f"{c.overhead_ratio:.6f}"])


if __name__ == "__main__":
    main()
