"""Error metrics and the worst-case bounds of single- vs dual-stage quantization.

Both bounds share the form ``alpha * M * eps8``:

* one MXFP8 pass with power-of-two scales, ``alpha < 2``;
* two NVFP4 passes (value, then residual) with E4M3 scales, each alpha at
  most ``1.125``, so ``alpha1 * alpha2 <= 1.265625`` and ``eps4**2 == eps8``.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field, fields
from fractions import Fraction

import numpy as np

from .blockquant import MXFP8_E4M3, NVFP4, FormatSpec
from .minifloat import Encoding

EPS4 = NVFP4.eps
EPS8 = MXFP8_E4M3.eps
if EPS4 * EPS4 != EPS8:  # pragma: no cover - guards the format table
    raise RuntimeError(f"eps4**2 != eps8 ({EPS4}**2 vs {EPS8})")

ALPHA_MX_SUP = 2.0
E4M3_STEP_ALPHA = 1.125
ALPHA_ARC_SUP = E4M3_STEP_ALPHA * E4M3_STEP_ALPHA  # 1.265625

# exact dyadic products, so bound_arc(M) == 0.6328125 * bound_mxfp8(M) bit for bit
_MX_COEF = ALPHA_MX_SUP * EPS8
_ARC_COEF = ALPHA_ARC_SUP * EPS8
_MX_COEF_Q = Fraction(_MX_COEF)
_ARC_COEF_Q = Fraction(_ARC_COEF)


def _check_m(m):
    if m < 0:
        raise ValueError("dynamic range M must be non-negative")


def bound_mxfp8(m):
    """Supremum of the MXFP8 worst-case error, ``2 * M * eps8 = M / 8``."""
    _check_m(m)
    return m * _MX_COEF_Q if isinstance(m, Fraction) else m * _MX_COEF


def bound_arc(m):
    """Supremum of the dual-stage NVFP4 worst-case error, ``1.125**2 * M * eps8``."""
    _check_m(m)
    return m * _ARC_COEF_Q if isinstance(m, Fraction) else m * _ARC_COEF


def stage_alpha_sup(scale: Encoding | None) -> tuple[float, bool]:
    """Largest alignment factor one scale rounding can produce, and whether it is excluded."""
    if scale is Encoding.E4M3:
        return E4M3_STEP_ALPHA, False
    if scale is Encoding.E8M0:
        return ALPHA_MX_SUP, True
    if scale is None:
        return 1.0, False
    raise ValueError(f"{scale} is not a scale encoding")


@dataclass
class BoundCheck:
    """Per-element errors with the block range and observed alignment bounding them.

    Each element must satisfy ``|e| <= alpha * M_block * eps``; separately,
    ``alpha`` must stay below ``alpha_sup`` (strictly when ``sup_strict``).
    The defaults describe dual-stage NVFP4.
    """

    errors: np.ndarray
    block_max: np.ndarray
    alpha: np.ndarray
    eps: float = EPS8
    alpha_sup: float = ALPHA_ARC_SUP
    sup_strict: bool = False

    @classmethod
    def single_stage(cls, errors, block_max, alpha, spec: FormatSpec) -> "BoundCheck":
        sup, strict = stage_alpha_sup(spec.scale)
        return cls(errors, block_max, alpha, spec.eps, sup, strict)

    @classmethod
    def dual_stage(cls, errors, block_max, alpha, spec: FormatSpec) -> "BoundCheck":
        sup, strict = stage_alpha_sup(spec.scale)
        return cls(errors, block_max, alpha, spec.eps ** 2, sup * sup, strict)

    def violations(self) -> int:
        bound = self.alpha * self.block_max * self.eps
        return int(np.count_nonzero(np.abs(self.errors) > bound))

    def alpha_sup_violations(self) -> int:
        if self.sup_strict:
            return int(np.count_nonzero(self.alpha >= self.alpha_sup))
        return int(np.count_nonzero(self.alpha > self.alpha_sup))


@dataclass
class ErrorReport:
    mse: float
    max_abs_err: float
    frobenius_rel_err: float
    count: int
    alpha_min: float = float("nan")
    alpha_mean: float = float("nan")
    alpha_max: float = float("nan")
    bound_mx: float = float("nan")
    bound_arc: float = float("nan")
    checked: int = 0
    violations: int = 0
    alpha_sup_violations: int = 0
    act_mse: float = float("nan")
    act_mse_compensated: float = float("nan")
    act_mse_uncompensated: float = float("nan")
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        extra = d.pop("extra")
        d.update(extra)
        return {k: _jsonable(v) for k, v in d.items()}


def _jsonable(v):
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return None if np.isnan(v) else v
    if isinstance(v, np.integer):
        return int(v)
    return v


def _mse(a: np.ndarray) -> float:
    return float(np.mean(a * a)) if a.size else float("nan")


def empirical_report(x_true, x_hat, context: BoundCheck | None = None, *,
                     act_true=None, act_hat=None, compensated: int = 0) -> ErrorReport:
    """MSE, max error and relative Frobenius error of ``x_hat`` against ``x_true``.

    With a bound context it also reports observed alignment statistics and
    counts bound violations. Activation-level MSE,
    split into compensated (first ``compensated`` channels) and other
    channels, is added when ``act_true``/``act_hat`` are given.
    """
    x_true = np.asarray(x_true, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x_true.shape != x_hat.shape:
        raise ValueError(f"shape mismatch {x_true.shape} vs {x_hat.shape}")
    diff = x_hat - x_true
    norm = float(np.linalg.norm(x_true))
    rep = ErrorReport(
        mse=_mse(diff),
        max_abs_err=float(np.abs(diff).max()) if diff.size else 0.0,
        frobenius_rel_err=float(np.linalg.norm(diff)) / norm if norm > 0 else float(np.linalg.norm(diff)),
        count=int(diff.size),
    )

    if act_true is not None:
        a_true = np.asarray(act_true, dtype=np.float64)
        a_diff = np.asarray(act_hat, dtype=np.float64) - a_true
        rep.act_mse = _mse(a_diff)
        rep.act_mse_compensated = _mse(a_diff[:, :compensated])
        rep.act_mse_uncompensated = _mse(a_diff[:, compensated:])
        m = float(np.abs(a_true).max()) if a_true.size else 0.0
    else:
        m = float(np.abs(x_true).max()) if x_true.size else 0.0
    rep.bound_mx = bound_mxfp8(m)
    rep.bound_arc = bound_arc(m)

    if context is not None and context.alpha.size:
        rep.alpha_min = float(context.alpha.min())
        rep.alpha_mean = float(context.alpha.mean())
        rep.alpha_max = float(context.alpha.max())
        rep.checked = int(context.errors.size)
        rep.violations = context.violations()
        rep.alpha_sup_violations = context.alpha_sup_violations()
    return rep


def alpha_stats(alpha) -> dict:
    a = np.asarray(alpha, dtype=np.float64)
    a = a[~np.isnan(a)]
    if not a.size:
        return {"min": float("nan"), "mean": float("nan"), "max": float("nan")}
    return {"min": float(a.min()), "mean": float(a.mean()), "max": float(a.max())}


# ---------------------------------------------------------------- rendering

REPORT_COLUMNS = ("mse", "max_abs_err", "frobenius_rel_err", "act_mse", "alpha_max", "checked", "violations")


def reports_to_json(reports: dict[str, ErrorReport], meta: dict | None = None) -> str:
    doc = {"meta": meta or {}, "reports": {k: r.to_dict() for k, r in reports.items()}}
    return json.dumps(doc, indent=1, sort_keys=True)


def reports_to_text(reports: dict[str, ErrorReport], meta: dict | None = None,
                    columns=REPORT_COLUMNS) -> str:
    lines = [f"# {k}: {v}" for k, v in (meta or {}).items()]
    rows = [["method", *columns]]
    for name, rep in reports.items():
        d = rep.to_dict()
        rows.append([name] + [_fmt(d.get(c)) for c in columns])
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    for r in rows:
        lines.append("  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths))))
    return "\n".join(lines)


def reports_to_csv(reports: dict[str, ErrorReport], meta: dict | None = None) -> str:
    names = [f.name for f in fields(ErrorReport) if f.name != "extra"]
    extra_keys = sorted({k for r in reports.values() for k in r.extra})
    meta = {k: v for k, v in (meta or {}).items() if k not in names and k not in extra_keys}
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["method", *names, *extra_keys, *meta])
    for name, rep in reports.items():
        d = rep.to_dict()
        writer.writerow([name, *[d.get(k) for k in names], *[d.get(k) for k in extra_keys], *meta.values()])
    return buf.getvalue()


def _fmt(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)
