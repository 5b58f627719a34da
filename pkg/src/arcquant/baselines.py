"""Comparison transforms: plain RTN, randomized Hadamard rotation, and
activation smoothing, each followed by block RTN, next to ARCQuant on a
single linear layer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import hadamard

from .analysis import ErrorReport, empirical_report
from .arc_pipeline import simulate_linear_layer
from .blockquant import FormatSpec, Layout, dequantize, quantize_tensor
from .calibration import CalibrationProfile, override_s
from .refgemm import gemm_dequant

DEFAULT_SEED = 0
DEFAULT_ALPHA = 0.5
METHODS = ("rtn", "smooth", "hadamard", "arcquant")


@dataclass(frozen=True)
class HadamardTransform:
    """``x -> x @ diag(sign) @ H / sqrt(dim)`` on the first ``dim`` channels."""

    dim: int
    sign_diag: np.ndarray

    def __post_init__(self):
        if self.dim < 1 or self.dim & (self.dim - 1):
            raise ValueError(f"Hadamard dimension must be a power of two, got {self.dim}")
        if self.sign_diag.shape != (self.dim,):
            raise ValueError("sign_diag length must equal dim")

    @property
    def normalization(self) -> float:
        return 1.0 / np.sqrt(self.dim)

    def matrix(self) -> np.ndarray:
        return self.sign_diag[:, None] * hadamard(self.dim).astype(np.float64) * self.normalization


def largest_pow2(k: int) -> int:
    return 1 << (int(k).bit_length() - 1)


def random_hadamard(dim: int, seed: int = DEFAULT_SEED) -> HadamardTransform:
    rng = np.random.default_rng(seed)
    return HadamardTransform(dim, rng.choice(np.array([-1.0, 1.0]), size=dim))


def hadamard_apply(x, t: HadamardTransform) -> np.ndarray:
    """Rotate the last axis.

    Channels beyond ``t.dim`` (a non power-of-two layer) pass through
    unchanged, i.e. the operator is ``blockdiag(H, I)``. Applying the same
    transform to the weight rows preserves ``X W^T``.
    """
    x = np.asarray(x, dtype=np.float64)
    k = x.shape[-1]
    if k < t.dim:
        raise ValueError(f"tensor has {k} channels, transform needs at least {t.dim}")
    out = x.copy()
    out[..., : t.dim] = x[..., : t.dim] @ t.matrix()
    return out


def smooth_scales(x_colmax, w_colmax, alpha: float = DEFAULT_ALPHA) -> np.ndarray:
    """Per-channel ``s_j = xmax_j**alpha / wmax_j**(1 - alpha)``; 1 where either max is 0."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    xm = np.asarray(x_colmax, dtype=np.float64)
    wm = np.asarray(w_colmax, dtype=np.float64)
    if np.any(xm < 0) or np.any(wm < 0):
        raise ValueError("column maxima must be non-negative")
    ok = (xm > 0) & (wm > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.power(xm, alpha) / np.power(wm, 1.0 - alpha)
    return np.where(ok, s, 1.0)


def per_block_max(x, g: int) -> np.ndarray:
    """max|x| of every (row, block); trailing partial blocks are zero padded."""
    x = np.asarray(x, dtype=np.float64)
    rows, k = x.shape
    kp = -(-k // g) * g
    xp = np.pad(np.abs(x), ((0, 0), (0, kp - k)))
    return xp.reshape(rows, -1, g).max(axis=2)


def outlier_free_blocks(k: int, g: int, outlier_channels) -> np.ndarray:
    """Boolean mask over block indices that hold none of ``outlier_channels``."""
    mask = np.ones(-(-k // g), dtype=bool)
    for c in np.atleast_1d(outlier_channels):
        mask[int(c) // g] = False
    return mask


def rotation_block_range(x, t: HadamardTransform, g: int, outlier_channels) -> tuple[float, float]:
    """Mean block max over outlier-free blocks, before and after rotation."""
    mask = outlier_free_blocks(np.shape(x)[-1], g, outlier_channels)
    before = per_block_max(x, g)[:, mask]
    after = per_block_max(hadamard_apply(x, t), g)[:, mask]
    return float(before.mean()), float(after.mean())


def compare_methods(x, w, spec: FormatSpec, profile: CalibrationProfile,
                    alpha: float = DEFAULT_ALPHA, seed: int = DEFAULT_SEED,
                    layout: Layout = Layout.CONTIGUOUS, s_override: int | None = None) -> dict[str, ErrorReport]:
    """Output-space error of each method against exact ``X W^T``.

    Activation MSE is measured in the original channel coordinates (the
    transforms are undone before comparing).
    """
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ValueError(f"incompatible shapes {x.shape} and {w.shape}")
    y = x @ w.T
    out: dict[str, ErrorReport] = {}

    qx = quantize_tensor(x, spec)
    out["rtn"] = empirical_report(y, gemm_dequant(qx, quantize_tensor(w, spec)),
                                  act_true=x, act_hat=dequantize(qx))

    s = smooth_scales(np.abs(x).max(axis=0), np.abs(w).max(axis=0), alpha)
    qxs = quantize_tensor(x / s, spec)
    out["smooth"] = empirical_report(y, gemm_dequant(qxs, quantize_tensor(w * s, spec)),
                                     act_true=x, act_hat=dequantize(qxs) * s)

    t = random_hadamard(largest_pow2(x.shape[1]), seed)
    xr, wr = hadamard_apply(x, t), hadamard_apply(w, t)
    qxr = quantize_tensor(xr, spec)
    # orthonormal rotation: activation error norm is the same in either basis
    out["hadamard"] = empirical_report(y, gemm_dequant(qxr, quantize_tensor(wr, spec)),
                                       act_true=xr, act_hat=dequantize(qxr))

    prof = profile if s_override is None else override_s(profile, s_override)
    _, out["arcquant"] = simulate_linear_layer(x, w, prof, spec, layout=layout)
    out["arcquant"].extra["s"] = prof.s
    return out
