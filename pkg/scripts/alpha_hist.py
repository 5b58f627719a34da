"""Histogram of alignment factors: one E8M0 stage vs two E4M3 stages.

    python3 scripts/alpha_hist.py --samples 1000000 --bins 20
"""

import argparse
import json

import numpy as np

from arcquant.analysis import ALPHA_ARC_SUP, ALPHA_MX_SUP
from arcquant.arc_pipeline import dual_stage_bound_terms, quantize_activation_arc
from arcquant.blockquant import MXFP8_E4M3, NVFP4, quantize_tensor
from arcquant.calibration import build_profile, override_s


def alphas(samples: int, seed: int):
    rng = np.random.default_rng(seed)
    rows = -(-samples // 256)
    x = rng.standard_normal((rows, 256)) * np.exp2(rng.uniform(-3, 3, (rows, 1)))
    mx = quantize_tensor(x, MXFP8_E4M3).alpha.ravel()
    act = quantize_activation_arc(x, override_s(build_profile(x), 256), NVFP4)
    _, _, a12 = dual_stage_bound_terms(act)
    return mx[~np.isnan(mx)], a12


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--samples", type=int, default=1_000_000)
    ap.add_argument("--bins", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    mx, arc = alphas(args.samples, args.seed)
    edges = np.linspace(1.0, ALPHA_MX_SUP, args.bins + 1)
    doc = {
        "seed": args.seed,
        "edges": edges.tolist(),
        "mxfp8": np.histogram(mx, edges)[0].tolist(),
        "arc": np.histogram(arc, edges)[0].tolist(),
        "mxfp8_max": float(mx.max()),
        "arc_max": float(arc.max()),
        "arc_sup": ALPHA_ARC_SUP,
    }
    print(json.dumps(doc, indent=1))


if __name__ == "__main__":
    main()
