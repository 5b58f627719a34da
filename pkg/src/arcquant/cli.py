"""``arcquant`` command line: formats, gen, calibrate, quantize, simulate, compare, verify-bounds.

Exit status is 0 on success, 1 when a verification finds violations, 2 for
usage or shape errors, and 3-7 for unreadable tensor files.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import dataclass

import numpy as np

from . import analysis
from .arc_pipeline import quantize_activation_arc, simulate_linear_layer
from .baselines import DEFAULT_ALPHA, compare_methods
from .blockquant import ALIASES, FORMATS, Layout, dequantize, get_format, quantize_tensor
from .calibration import build_profile, load_profile, override_s, save_profile
from .refgemm import GemmShape, cost_model
from .tensorio import (
    BadMagicError,
    EmptyTensorError,
    TensorFileError,
    TruncatedError,
    UnsupportedDtypeError,
    UnsupportedVersionError,
    gen_synthetic,
    read_tensor,
    write_quantized,
    write_tensor,
)
from .verify import run_suite

FORMAT_CHOICES = ("nvfp4", "mxfp4", "mxfp6", "mxfp8", "int4")
EXIT_VIOLATIONS = 1
EXIT_USAGE = 2
FILE_ERROR_EXIT = {
    BadMagicError: 3,
    TruncatedError: 4,
    UnsupportedDtypeError: 5,
    EmptyTensorError: 6,
    UnsupportedVersionError: 7,
}


@dataclass
class RunConfig:
    subcommand: str
    format: str = "nvfp4"
    seed: int = 0
    alpha: float = DEFAULT_ALPHA
    s_override: int | None = None
    emit: str = "text"
    out: str | None = None

    def meta(self) -> dict:
        spec = get_format(self.format)
        return {
            "command": self.subcommand,
            "format": spec.name,
            "element": spec.element.name,
            "g": spec.g,
            "scale": spec.scale.name if spec.scale else "real",
            "tensor_scale": spec.tensor_scale,
            "seed": self.seed,
        }


# ------------------------------------------------------------------ formats

FORMAT_TABLE_ROWS = (
    # (format, element spec) in the order of the usual MX/NV comparison table
    ("MXFP8", "mxfp8_e5m2"),
    ("MXFP8", "mxfp8_e4m3"),
    ("MXFP6", "mxfp6_e3m2"),
    ("MXFP6", "mxfp6_e2m3"),
    ("MXFP4", "mxfp4"),
    ("NVFP4", "nvfp4"),
)


def format_table(include_int4: bool = False) -> list[dict]:
    names = list(FORMAT_TABLE_ROWS)
    if include_int4:
        names.append(("INT4", "int4"))
    rows = []
    for label, key in names:
        spec = FORMATS[key]
        info = spec.element.info
        fp = f"FP{info.bits}" if spec.element.name.startswith("E") else "INT4"
        rows.append({
            "format": label,
            "element_bits": info.bits,
            "element_type": f"{fp} ({spec.element.name})" if fp != "INT4" else "INT4",
            "bias": info.bias,
            "max_normal": spec.q_max,
            "block_size": spec.g,
            "scale_type": spec.scale.name if spec.scale else "FP32",
            "scale_bits": spec.scale.bits if spec.scale else 32,
            "tensor_scale": "FP32" if spec.tensor_scale else "N/A",
        })
    return rows


def _fmt_max(v: float) -> str:
    return f"± {v:g}" if v != int(v) else f"± {int(v)}"


def render_rows(rows: list[dict], emit: str, meta: dict | None = None) -> str:
    if emit == "json":
        return json.dumps({"meta": meta or {}, "rows": rows}, indent=1)
    if emit == "csv":
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
        return buf.getvalue()
    table = [list(rows[0])] + [[_fmt_max(v) if k == "max_normal" else str(v) for k, v in r.items()] for r in rows]
    widths = [max(len(r[i]) for r in table) for i in range(len(table[0]))]
    lines = [f"# {k}: {v}" for k, v in (meta or {}).items()]
    lines += ["  ".join(c.ljust(wd) for c, wd in zip(r, widths)).rstrip() for r in table]
    return "\n".join(lines)


# ------------------------------------------------------------------ helpers

def _emit(text: str, out: str | None) -> None:
    if out:
        with open(out, "w") as fh:
            fh.write(text if text.endswith("\n") else text + "\n")
    else:
        print(text)


def _render_reports(reports, cfg: RunConfig, meta: dict) -> str:
    if cfg.emit == "json":
        return analysis.reports_to_json(reports, meta)
    if cfg.emit == "csv":
        return analysis.reports_to_csv(reports, meta)
    return analysis.reports_to_text(reports, meta)


def _load_profile_for(x: np.ndarray, args, cfg: RunConfig):
    spec = get_format(cfg.format)
    prof = load_profile(args.profile) if args.profile else build_profile(x, align=max(16, spec.g))
    if cfg.s_override is not None:
        prof = override_s(prof, cfg.s_override)
    return prof


# ------------------------------------------------------------------ commands

def cmd_formats(args, cfg: RunConfig) -> int:
    _emit(render_rows(format_table(args.all), cfg.emit), cfg.out)
    return 0


def cmd_gen(args, cfg: RunConfig) -> int:
    x = gen_synthetic(args.k, args.n, args.outliers, args.outlier_scale, cfg.seed)
    write_tensor(args.output, x)
    return 0


def cmd_calibrate(args, cfg: RunConfig) -> int:
    batches = [read_tensor(p) for p in args.inputs]
    spec = get_format(cfg.format)
    prof = build_profile(batches, layer_name=args.layer, align=max(16, spec.g))
    if cfg.s_override is not None:
        prof = override_s(prof, cfg.s_override)
    if cfg.out:
        save_profile(prof, cfg.out)
    else:
        print(json.dumps(prof.to_dict(), indent=1))
    return 0


def cmd_quantize(args, cfg: RunConfig) -> int:
    spec = get_format(cfg.format)
    x = read_tensor(args.input).astype(np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if args.profile or cfg.s_override is not None:
        prof = _load_profile_for(x, args, cfg)
        act = quantize_activation_arc(x, prof, spec)
        q = act.augmented()
        x_true, x_hat = act.x_reordered, act.reconstruct()
        extra = {"s": prof.s, "k_aug": q.padded_k}
    else:
        q = quantize_tensor(x, spec)
        x_true, x_hat = x, dequantize(q)
        extra = {}
    if cfg.out:
        write_quantized(cfg.out, q)
    rep = analysis.empirical_report(x_true, x_hat)
    stats = analysis.alpha_stats(q.alpha)
    rep.alpha_min, rep.alpha_mean, rep.alpha_max = stats["min"], stats["mean"], stats["max"]
    rep.extra.update(extra)
    text = _render_reports({"quantize": rep}, cfg, cfg.meta())
    print(text)
    return 0


def _read_pair(args):
    x = read_tensor(args.act).astype(np.float64)
    w = read_tensor(args.wt).astype(np.float64)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ValueError(f"activation {x.shape} and weight {w.shape} are not a linear layer")
    return x, w


def cmd_compare(args, cfg: RunConfig) -> int:
    x, w = _read_pair(args)
    prof = _load_profile_for(x, args, cfg)
    reports = compare_methods(x, w, get_format(cfg.format), prof, alpha=cfg.alpha, seed=cfg.seed,
                              layout=Layout(args.layout))
    meta = cfg.meta() | {"alpha": cfg.alpha, "s": prof.s}
    _emit(_render_reports(reports, cfg, meta), cfg.out)
    return 0


def cmd_simulate(args, cfg: RunConfig) -> int:
    x, w = _read_pair(args)
    spec = get_format(cfg.format)
    prof = _load_profile_for(x, args, cfg)
    norm_w = read_tensor(args.rmsnorm_weight).astype(np.float64).ravel() if args.rmsnorm_weight else None
    _, arc = simulate_linear_layer(x, w, prof, spec, rmsnorm_weight=norm_w, layout=Layout(args.layout))
    if norm_w is None:
        reports = compare_methods(x, w, spec, prof, alpha=cfg.alpha, seed=cfg.seed, layout=Layout(args.layout))
    else:
        # baselines see the normalized activations the ARC path quantized
        from .blockquant import rmsnorm
        reports = compare_methods(rmsnorm(x, norm_w), w, spec, prof, alpha=cfg.alpha, seed=cfg.seed)
    reports["arcquant"] = arc
    cost = cost_model(GemmShape(x.shape[0], x.shape[1], w.shape[0]), prof.s)
    arc.extra.update({"s": prof.s, "flops": cost.flops, "overhead": cost.overhead_ratio})
    meta = cfg.meta() | {"alpha": cfg.alpha, "s": prof.s, "k_in": prof.k_in,
                         "overhead": cost.overhead_ratio, "layout": args.layout}
    _emit(_render_reports(reports, cfg, meta), cfg.out)
    return EXIT_VIOLATIONS if arc.violations else 0


def cmd_verify_bounds(args, cfg: RunConfig) -> int:
    results = run_suite(args.samples, cfg.seed, args.gemm_configs, inject_fault=args.inject_fault)
    rows = [{"check": r.name, "checked": r.checked, "violations": r.violations,
             "status": "PASS" if r.passed else "FAIL"} for r in results]
    total = sum(r.violations for r in results)
    meta = {"command": "verify-bounds", "seed": cfg.seed, "samples": args.samples, "total_violations": total}
    _emit(render_rows(rows, cfg.emit, meta), cfg.out)
    return 0 if total == 0 else EXIT_VIOLATIONS


# ------------------------------------------------------------------ parser

def _common(p: argparse.ArgumentParser, fmt: bool = True) -> None:
    if fmt:
        p.add_argument("--format", default="nvfp4", choices=FORMAT_CHOICES + tuple(FORMATS) + tuple(ALIASES),
                       help="block format (default nvfp4)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output path (stdout when omitted)")
    p.add_argument("--emit", choices=("text", "json", "csv"), default="text")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="arcquant", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("formats", help="print the block-format parameter table")
    _common(p, fmt=False)
    p.add_argument("--all", action="store_true", help="also list the INT4 baseline")
    p.set_defaults(func=cmd_formats)

    p = sub.add_parser("gen", help="write synthetic outlier activations as an ARCT file")
    _common(p, fmt=False)
    p.add_argument("output")
    p.add_argument("--k", type=int, default=256)
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--outliers", type=int, default=1)
    p.add_argument("--outlier-scale", type=float, default=32.0)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("calibrate", help="build a calibration profile from activation files")
    _common(p)
    p.add_argument("inputs", nargs="+")
    p.add_argument("--layer", default="layer")
    p.add_argument("--s-override", type=int)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("quantize", help="block-quantize a tensor (ARC-augmented with --profile)")
    _common(p)
    p.add_argument("input")
    p.add_argument("--profile")
    p.add_argument("--s-override", type=int)
    p.set_defaults(func=cmd_quantize)

    for name, func, hlp in (("simulate", cmd_simulate, "ARCQuant linear layer with baselines and cost"),
                            ("compare", cmd_compare, "RTN / smooth / Hadamard / ARCQuant comparison")):
        p = sub.add_parser(name, help=hlp)
        _common(p)
        p.add_argument("act")
        p.add_argument("wt")
        p.add_argument("--profile")
        p.add_argument("--alpha", type=float, default=DEFAULT_ALPHA, help="smoothing migration strength")
        p.add_argument("--s-override", type=int)
        p.add_argument("--layout", choices=[l.value for l in Layout], default="contiguous")
        if name == "simulate":
            p.add_argument("--rmsnorm-weight", help="ARCT vector applied as RMSNorm before quantization")
        p.set_defaults(func=func)

    p = sub.add_parser("verify-bounds", help="randomized codec / bound / GEMM-equivalence checks")
    _common(p, fmt=False)
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--gemm-configs", type=int, default=100)
    p.add_argument("--inject-fault", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_verify_bounds)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cfg = RunConfig(
        subcommand=args.command,
        format=getattr(args, "format", "nvfp4"),
        seed=args.seed,
        alpha=getattr(args, "alpha", DEFAULT_ALPHA),
        s_override=getattr(args, "s_override", None),
        emit=args.emit,
        out=args.out,
    )
    try:
        return args.func(args, cfg)
    except TensorFileError as exc:
        print(f"arcquant: {exc.code}: {exc}", file=sys.stderr)
        return FILE_ERROR_EXIT.get(type(exc), EXIT_USAGE)
    except (ValueError, OSError) as exc:
        print(f"arcquant: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
