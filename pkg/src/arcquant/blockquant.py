"""Block-scaled round-to-nearest quantization.

A tensor is cut into groups of ``g`` consecutive elements along its last
(reduction) axis. Each group shares one scale ``s = max|x| / q_max`` that is
rounded *up* onto the scale encoding, so elements never clip. Formats with a
tensor scale (NVFP4) first divide by a per-tensor FP32 factor that brings the
largest block scale into the E4M3 range.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .minifloat import Encoding, decode, encode_nearest, round_scale_up, smallest_scale

# all-zero tensors still need a positive tensor scale
MIN_TENSOR_SCALE = float(np.finfo(np.float32).tiny)


class Layout(enum.Enum):
    CONTIGUOUS = "contiguous"
    INTERLEAVED = "interleaved"


@dataclass(frozen=True)
class FormatSpec:
    """A block-scaled format.

    ``scale=None`` means the block scale is kept as an unrounded real
    (the symmetric INT4 baseline); its alignment factor is then exactly 1.
    """

    name: str
    element: Encoding
    g: int
    scale: Encoding | None
    tensor_scale: bool = False

    @property
    def q_max(self) -> float:
        return self.element.max_normal

    @property
    def eps(self) -> float:
        """Relative precision limit: worst-case rounding error is ``s * q_max * eps``."""
        if self.element is Encoding.INT4:
            return 1.0 / (2.0 * self.q_max)
        return 2.0 ** -(self.element.info.man_bits + 1)

    @property
    def scale_max(self) -> float:
        return self.scale.max_normal if self.scale is not None else math.inf


NVFP4 = FormatSpec("nvfp4", Encoding.E2M1, 16, Encoding.E4M3, tensor_scale=True)
MXFP4 = FormatSpec("mxfp4", Encoding.E2M1, 32, Encoding.E8M0)
MXFP6_E3M2 = FormatSpec("mxfp6_e3m2", Encoding.E3M2, 32, Encoding.E8M0)
MXFP6_E2M3 = FormatSpec("mxfp6_e2m3", Encoding.E2M3, 32, Encoding.E8M0)
MXFP8_E5M2 = FormatSpec("mxfp8_e5m2", Encoding.E5M2, 32, Encoding.E8M0)
MXFP8_E4M3 = FormatSpec("mxfp8_e4m3", Encoding.E4M3, 32, Encoding.E8M0)
INT4 = FormatSpec("int4", Encoding.INT4, 128, None)

FORMATS = {
    f.name: f for f in (NVFP4, MXFP4, MXFP6_E3M2, MXFP6_E2M3, MXFP8_E5M2, MXFP8_E4M3, INT4)
}
# short names resolve to the higher-precision element variant
ALIASES = {"mxfp6": "mxfp6_e2m3", "mxfp8": "mxfp8_e4m3"}


def get_format(name: str, g: int | None = None) -> FormatSpec:
    key = ALIASES.get(name.lower(), name.lower())
    try:
        spec = FORMATS[key]
    except KeyError:
        raise ValueError(f"unknown format {name!r}; choose from {sorted(FORMATS) + sorted(ALIASES)}") from None
    if g is not None and g != spec.g:
        spec = replace(spec, g=g)
    return spec


@dataclass
class QuantizedTensor:
    """Element codes plus per-(row, block) scales.

    ``block_scales`` hold *decoded* scale values; the effective scale of a
    block is ``block_scales * tensor_scale``. ``alpha`` records the alignment
    factor (encoded / raw scale) of every block, NaN for all-zero blocks.
    ``k`` is the logical column count; columns past it are zero padding.
    For a permuted layout, ``logical_order[p]`` is the logical column stored
    at physical column ``p``.
    """

    codes: np.ndarray
    block_scales: np.ndarray
    format: FormatSpec
    k: int
    tensor_scale: float | None = None
    alpha: np.ndarray | None = field(default=None, repr=False)
    layout: Layout = Layout.CONTIGUOUS
    logical_order: np.ndarray | None = field(default=None, repr=False)

    @property
    def shape(self) -> tuple[int, int]:
        return self.codes.shape[0], self.k

    @property
    def padded_k(self) -> int:
        return self.codes.shape[1]

    @property
    def n_blocks(self) -> int:
        return self.block_scales.shape[1]

    def effective_scales(self) -> np.ndarray:
        ts = 1.0 if self.tensor_scale is None else self.tensor_scale
        return self.block_scales * ts

    def element_values(self) -> np.ndarray:
        """Decoded codes times block scales, tensor scale left out."""
        vals = decode(self.codes, self.format.element)
        return vals * np.repeat(self.block_scales, self.format.g, axis=1)


def padded_width(k: int, g: int) -> int:
    return -(-k // g) * g


def _pad_columns(x: np.ndarray, g: int) -> np.ndarray:
    k = x.shape[1]
    kp = padded_width(k, g)
    if kp == k:
        return x
    return np.pad(x, ((0, 0), (0, kp - k)))


def nvfp4_tensor_scale(global_max: float, spec: FormatSpec) -> float:
    """FP32 per-tensor factor ``global_max / (q_max * scale_max)``, rounded up to FP32."""
    if global_max == 0:
        return MIN_TENSOR_SCALE
    ts = global_max / (spec.q_max * spec.scale_max)
    ts32 = np.float32(ts)
    if float(ts32) < ts:
        ts32 = np.nextafter(ts32, np.float32(np.inf))
    return float(ts32)


def _block_scales(block_max: np.ndarray, spec: FormatSpec, ts: float):
    """Encoded block scales (in tensor-scale units) and their alignment factors."""
    raw = block_max / (spec.q_max * ts)
    zero = raw == 0
    if spec.scale is None:
        scales = np.where(zero, 1.0, raw)
    else:
        # ulp-level overshoot from the division would otherwise overflow E4M3
        raw_c = np.minimum(np.where(zero, smallest_scale(spec.scale), raw), spec.scale_max)
        scales = round_scale_up(raw_c, spec.scale)
    with np.errstate(divide="ignore", invalid="ignore"):
        alpha = np.where(zero, np.nan, scales / raw)
    return scales, alpha


def quantize_block(x, spec: FormatSpec, tensor_scale: float = 1.0):
    """Quantize one block of ``g`` values.

    Returns ``(codes, scale, alpha)`` where ``scale`` is the decoded block
    scale (tensor scale excluded) and ``alpha`` is NaN for an all-zero block.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (spec.g,):
        raise ValueError(f"block must have length {spec.g}, got shape {x.shape}")
    q = quantize_tensor(x[None, :], spec, tensor_scale=tensor_scale if spec.tensor_scale else None)
    return q.codes[0], float(q.block_scales[0, 0]), float(q.alpha[0, 0])


def quantize_tensor(x, spec: FormatSpec, tensor_scale: float | None = None) -> QuantizedTensor:
    """Block-quantize a matrix along its last axis.

    For tensor-scaled formats the per-tensor factor is computed from ``x``
    unless ``tensor_scale`` is given (calibration-fixed weights, residuals
    that must share the primary operand's factor).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.size == 0:
        raise ValueError(f"expected a non-empty matrix, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("quantize_tensor: non-finite input")
    rows, k = x.shape
    xp = _pad_columns(x, spec.g)
    blocks = xp.reshape(rows, -1, spec.g)

    if spec.tensor_scale:
        ts = nvfp4_tensor_scale(float(np.abs(x).max()), spec) if tensor_scale is None else float(tensor_scale)
        if not ts > 0:
            raise ValueError("tensor scale must be positive")
    else:
        ts = 1.0

    block_max = np.abs(blocks).max(axis=2)
    scales, alpha = _block_scales(block_max, spec, ts)
    eff = scales * ts
    codes = encode_nearest(blocks / eff[..., None], spec.element, saturate=True)
    return QuantizedTensor(
        codes=codes.reshape(rows, -1),
        block_scales=scales,
        format=spec,
        k=k,
        tensor_scale=ts if spec.tensor_scale else None,
        alpha=alpha,
    )


def dequantize(q: QuantizedTensor, keep_padding: bool = False) -> np.ndarray:
    """``decode(code) * block_scale * tensor_scale`` for every element."""
    out = q.element_values()
    if q.tensor_scale is not None:
        out = out * q.tensor_scale
    return out if keep_padding else out[:, : q.k]


def block_max_per_element(x, g: int) -> np.ndarray:
    """max|x| of the block each element belongs to, same shape as ``x``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    rows, k = x.shape
    bm = np.abs(_pad_columns(x, g)).reshape(rows, -1, g).max(axis=2)
    return np.repeat(bm, g, axis=1)[:, :k]


def rmsnorm(x, w, eps: float = 1e-6) -> np.ndarray:
    """Row-wise ``x / sqrt(mean(x**2) + eps) * w``."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if x.shape[-1] != w.shape[-1]:
        raise ValueError("rmsnorm: weight length does not match the last axis")
    if not eps > 0:
        raise ValueError("rmsnorm: eps must be positive")
    rms = np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + eps)
    return x / rms * w
