"""Augmented residual channels.

Activations are reordered so the outlier channels come first, block-quantized
once, and the first ``S`` channels get a second quantization of their stage-one
error. The residual codes are appended along the reduction axis. On the weight
side the quantized outlier columns are simply duplicated, so a single GEMM over
``K_in + S`` channels computes ``Q(X)Q(W)^T + Q(R_o)Q(W_o)^T``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .analysis import BoundCheck, ErrorReport, empirical_report
from .blockquant import (
    FormatSpec,
    Layout,
    QuantizedTensor,
    block_max_per_element,
    dequantize,
    padded_width,
    quantize_tensor,
    rmsnorm,
)
from .calibration import CalibrationProfile, apply_reorder
from .refgemm import gemm_dequant

RMSNORM_EPS = 1e-6


@dataclass
class ArcActivation:
    """Activation half of the augmented operands."""

    primary: QuantizedTensor
    residual: QuantizedTensor | None
    residual_exact: np.ndarray
    x_reordered: np.ndarray
    s: int

    @property
    def k_in(self) -> int:
        return self.primary.k

    def augmented(self) -> QuantizedTensor:
        return concat_k(self.primary, self.residual)

    def reconstruct(self, exact_residual: bool = False) -> np.ndarray:
        """Stage-one dequantization plus the (quantized or exact) residual, reordered space."""
        out = dequantize(self.primary)
        if self.s:
            extra = self.residual_exact if exact_residual else dequantize(self.residual)
            out[:, : self.s] += extra
        return out


@dataclass
class ArcWeight:
    """Weight half: quantized reordered weights plus duplicated outlier columns."""

    primary: QuantizedTensor
    duplicate: QuantizedTensor | None
    s: int

    @property
    def k_in(self) -> int:
        return self.primary.k

    def augmented(self) -> QuantizedTensor:
        return concat_k(self.primary, self.duplicate)


@dataclass
class AugmentedOperands:
    act: QuantizedTensor
    wt: QuantizedTensor
    k_in: int
    s: int
    layout: Layout = Layout.CONTIGUOUS

    @property
    def k_aug(self) -> int:
        return self.act.padded_k


def concat_k(a: QuantizedTensor, b: QuantizedTensor | None) -> QuantizedTensor:
    """Append ``b`` after the (padded) columns of ``a``; scales travel with their blocks."""
    if b is None:
        return a
    if a.format != b.format or a.tensor_scale != b.tensor_scale:
        raise ValueError("augmented parts must share format and tensor scale")
    if a.layout is not Layout.CONTIGUOUS or b.layout is not Layout.CONTIGUOUS:
        raise ValueError("concatenate contiguous parts only")
    alpha = None
    if a.alpha is not None and b.alpha is not None:
        alpha = np.hstack([a.alpha, b.alpha])
    return QuantizedTensor(
        codes=np.hstack([a.codes, b.codes]),
        block_scales=np.hstack([a.block_scales, b.block_scales]),
        format=a.format,
        k=a.padded_k + b.padded_k,
        tensor_scale=a.tensor_scale,
        alpha=alpha,
    )


def _check_profile(k: int, profile: CalibrationProfile) -> None:
    if k != profile.k_in:
        raise ValueError(f"K_in mismatch: tensor has {k} channels, profile has {profile.k_in}")
    if profile.s > profile.k_in:
        raise ValueError("S exceeds K_in")


def quantize_activation_arc(x, profile: CalibrationProfile, spec: FormatSpec,
                            rmsnorm_weight=None, eps: float = RMSNORM_EPS) -> ArcActivation:
    """Reorder, (optionally) RMSNorm, primary quantization, residual quantization.

    Residuals are taken against the encoded primary values and quantized with
    fresh block scales under the primary operand's tensor scale.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"expected a matrix, got shape {x.shape}")
    _check_profile(x.shape[1], profile)
    xr = apply_reorder(x, profile)
    if rmsnorm_weight is not None:
        xr = rmsnorm(xr, apply_reorder(np.asarray(rmsnorm_weight, dtype=np.float64), profile), eps)
    primary = quantize_tensor(xr, spec)
    s = profile.s
    if s == 0:
        return ArcActivation(primary, None, np.zeros((x.shape[0], 0)), xr, 0)
    r = xr[:, :s] - dequantize(primary)[:, :s]
    residual = quantize_tensor(r, spec, tensor_scale=primary.tensor_scale)
    return ArcActivation(primary, residual, r, xr, s)


def quantize_weight_arc(w, profile: CalibrationProfile, spec: FormatSpec,
                        tensor_scale: float | None = None) -> ArcWeight:
    """Reorder input channels, quantize once, and copy the first ``S`` quantized columns."""
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2:
        raise ValueError(f"expected a matrix, got shape {w.shape}")
    _check_profile(w.shape[1], profile)
    primary = quantize_tensor(apply_reorder(w, profile), spec, tensor_scale=tensor_scale)
    s = profile.s
    if s == 0:
        return ArcWeight(primary, None, 0)
    g = spec.g
    sp = padded_width(s, g)
    codes = primary.codes[:, :sp].copy()
    # columns past S in the last block face zero residual padding; zero them too
    codes[:, s:] = 0
    dup = QuantizedTensor(
        codes=codes,
        block_scales=primary.block_scales[:, : sp // g].copy(),
        format=spec,
        k=s,
        tensor_scale=primary.tensor_scale,
        alpha=None if primary.alpha is None else primary.alpha[:, : sp // g].copy(),
    )
    return ArcWeight(primary, dup, s)


def augment(act: ArcActivation, wt: ArcWeight) -> AugmentedOperands:
    if act.s != wt.s or act.k_in != wt.k_in:
        raise ValueError("activation and weight halves were built from different profiles")
    a, w = act.augmented(), wt.augmented()
    if a.padded_k != w.padded_k:
        raise ValueError("augmented reduction widths differ")
    return AugmentedOperands(a, w, act.k_in, act.s)


def interleave_order(k_primary: int, s: int, group: int) -> np.ndarray:
    """Physical-to-logical column map ``[P0 R0 P1 R1 ... P_rest]``.

    Logical columns are ``[primary (k_primary) | residual (s)]``.
    """
    if s % group:
        raise ValueError(f"S={s} is not a multiple of the {group}-channel group")
    if s > k_primary:
        raise ValueError("S exceeds the primary width")
    order = []
    for i in range(s // group):
        order.extend(range(i * group, (i + 1) * group))
        order.extend(range(k_primary + i * group, k_primary + (i + 1) * group))
    order.extend(range(s, k_primary))
    return np.asarray(order, dtype=np.int64)


def _permute(q: QuantizedTensor, order: np.ndarray, layout: Layout) -> QuantizedTensor:
    g = q.format.g
    block_order = order[::g] // g
    return replace(
        q,
        codes=q.codes[:, order],
        block_scales=q.block_scales[:, block_order],
        alpha=None if q.alpha is None else q.alpha[:, block_order],
        layout=layout,
        logical_order=None if layout is Layout.CONTIGUOUS else order,
    )


def to_interleaved(aug: AugmentedOperands) -> AugmentedOperands:
    """Place each ``g``-wide residual group right after its primary group."""
    if aug.layout is not Layout.CONTIGUOUS:
        raise ValueError("operands are already interleaved")
    g = aug.act.format.g
    kp = aug.k_aug - padded_width(aug.s, g)
    order = interleave_order(kp, aug.s, g)
    return replace(
        aug,
        act=_permute(aug.act, order, Layout.INTERLEAVED),
        wt=_permute(aug.wt, order, Layout.INTERLEAVED),
        layout=Layout.INTERLEAVED,
    )


def from_interleaved(aug: AugmentedOperands) -> AugmentedOperands:
    if aug.layout is not Layout.INTERLEAVED:
        raise ValueError("operands are not interleaved")
    inv = np.argsort(aug.act.logical_order)
    return replace(
        aug,
        act=_permute(aug.act, inv, Layout.CONTIGUOUS),
        wt=_permute(aug.wt, inv, Layout.CONTIGUOUS),
        layout=Layout.CONTIGUOUS,
    )


def dual_stage_bound_terms(act: ArcActivation):
    """Per compensated element: error, block max M, alpha1 * alpha2.

    ``M`` and ``alpha1`` come from the primary block, ``alpha2`` from the
    matching residual block. Elements of all-zero blocks are dropped.
    """
    s = act.s
    if s == 0:
        empty = np.zeros(0)
        return empty, empty, empty
    g = act.primary.format.g
    x = act.x_reordered[:, :s]
    err = x - act.reconstruct()[:, :s]
    m_block = block_max_per_element(act.x_reordered, g)[:, :s]
    a1 = np.repeat(act.primary.alpha, g, axis=1)[:, :s]
    a2 = np.repeat(act.residual.alpha, g, axis=1)[:, :s]
    # a zero residual block is reconstructed exactly; alpha2 = 1 keeps the bound meaningful
    a2 = np.where(np.isnan(a2), 1.0, a2)
    keep = ~np.isnan(a1)
    return err[keep], m_block[keep], (a1 * a2)[keep]


def simulate_linear_layer(x, w, profile: CalibrationProfile, spec: FormatSpec,
                          rmsnorm_weight=None, eps: float = RMSNORM_EPS,
                          layout: Layout = Layout.CONTIGUOUS) -> tuple[np.ndarray, ErrorReport]:
    """Run the ARCQuant linear layer and compare with exact ``X W^T``."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ValueError(f"incompatible shapes {x.shape} and {w.shape}")
    x_in = x if rmsnorm_weight is None else rmsnorm(x, rmsnorm_weight, eps)
    y = x_in @ w.T

    act = quantize_activation_arc(x, profile, spec, rmsnorm_weight=rmsnorm_weight, eps=eps)
    wt = quantize_weight_arc(w, profile, spec)
    aug = augment(act, wt)
    if layout is Layout.INTERLEAVED:
        aug = to_interleaved(aug)
    y_hat = gemm_dequant(aug.act, aug.wt)

    err, m_block, a12 = dual_stage_bound_terms(act)
    x_hat = act.reconstruct()
    report = empirical_report(
        y, y_hat, BoundCheck.dual_stage(err, m_block, a12, spec),
        act_true=act.x_reordered, act_hat=x_hat, compensated=profile.s,
    )
    return y_hat, report
