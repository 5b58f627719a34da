"""Output MSE of rtn / smooth / hadamard / arcquant across outlier magnitudes.

Writes one CSV row per (outlier_scale, seed, method).

    python3 scripts/mse_sweep.py --scales 8 32 100 --seeds 20 --out mse.csv
"""

import argparse
import csv
import sys
from dataclasses import dataclass

import numpy as np

from arcquant.baselines import compare_methods
from arcquant.blockquant import get_format
from arcquant.calibration import build_profile
from arcquant.tensorio import gen_synthetic


@dataclass
class SweepConfig:
    k: int = 256
    n: int = 32
    m: int = 256
    scales: tuple = (8.0, 32.0, 100.0)
    seeds: int = 20
    format: str = "nvfp4"
    alpha: float = 0.5


def run(cfg: SweepConfig, out):
    spec = get_format(cfg.format)
    w = csv.writer(out)
    w.writerow(["outlier_scale", "seed", "method", "mse", "act_mse", "s"])
    wins = {s: 0 for s in cfg.scales}
    for scale in cfg.scales:
        for seed in range(cfg.seeds):
            x = gen_synthetic(cfg.k, cfg.n, 1, scale, seed)
            wt = np.random.default_rng([seed, 2]).standard_normal((cfg.m, cfg.k))
            prof = build_profile(x, align=max(16, spec.g))
            reps = compare_methods(x, wt, spec, prof, alpha=cfg.alpha, seed=seed)
            for name, r in reps.items():
                w.writerow([scale, seed, name, r.mse, r.act_mse, prof.s if name == "arcquant" else 0])
            wins[scale] += reps["arcquant"].mse < reps["rtn"].mse
    return wins


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scales", type=float, nargs="+", default=list(SweepConfig.scales))
    ap.add_argument("--seeds", type=int, default=SweepConfig.seeds)
    ap.add_argument("--m", type=int, default=SweepConfig.m)
    ap.add_argument("--format", default=SweepConfig.format)
    ap.add_argument("--out")
    args = ap.parse_args()
    cfg = SweepConfig(m=args.m, scales=tuple(args.scales), seeds=args.seeds, format=args.format)
    with (open(args.out, "w", newline="") if args.out else sys.stdout) as fh:
        wins = run(cfg, fh)
    for scale, n in wins.items():
        print(f"outlier x{scale:g}: arcquant < rtn in {n}/{cfg.seeds}", file=sys.stderr)


if __name__ == "__main__":
    main()
