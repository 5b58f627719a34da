"""Reference GEMM over block-quantized operands.

Each output element is reduced serially over the reduction axis in a fixed
order. Per-element products ``(code * block_scale)`` are exact in float64 for
every supported format, and the tensor scales are applied once at the end (as
a GEMM epilogue would), so the only rounding happens in the running sum. That
makes results reproducible bit for bit, which the augmented-GEMM equivalence
tests rely on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .blockquant import Layout, QuantizedTensor


@dataclass(frozen=True)
class GemmShape:
    n: int
    k: int
    m: int

    def __post_init__(self):
        if min(self.n, self.k, self.m) <= 0:
            raise ValueError(f"GEMM dimensions must be positive, got {self}")


@dataclass(frozen=True)
class CostEstimate:
    flops: int
    overhead_ratio: float


def cost_model(shape: GemmShape, s: int) -> CostEstimate:
    """FLOPs of the augmented GEMM ``(N, K_in + S, M)``; overhead is ``S / K_in``."""
    if s < 0:
        raise ValueError("S must be non-negative")
    return CostEstimate(flops=2 * shape.n * (shape.k + s) * shape.m, overhead_ratio=s / shape.k)


def _logical_values(q: QuantizedTensor, order: str) -> np.ndarray:
    vals = q.element_values()
    if order == "physical" or q.logical_order is None:
        return vals
    if order != "logical":
        raise ValueError(f"unknown reduction order {order!r}")
    return vals[:, np.argsort(q.logical_order)]


def _tensor_factor(q: QuantizedTensor) -> float:
    return 1.0 if q.tensor_scale is None else q.tensor_scale


def serial_accumulate(a: np.ndarray, b: np.ndarray, acc: np.ndarray | None = None) -> np.ndarray:
    """``acc[n, m] += a[n, k] * b[m, k]`` for k = 0, 1, ... in that order."""
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"reduction dims differ: {a.shape[1]} vs {b.shape[1]}")
    if acc is None:
        acc = np.zeros((a.shape[0], b.shape[0]))
    else:
        acc = acc.copy()
    bt = np.ascontiguousarray(b.T)
    for k in range(a.shape[1]):
        acc += a[:, k, None] * bt[None, k, :]
    return acc


def _check_pair(x: QuantizedTensor, w: QuantizedTensor) -> None:
    if x.format != w.format:
        raise ValueError(f"format mismatch: {x.format.name} vs {w.format.name}")
    if x.padded_k != w.padded_k:
        raise ValueError(f"reduction dims differ: {x.padded_k} vs {w.padded_k}")
    if x.layout != w.layout:
        raise ValueError("operands use different channel layouts")
    if x.logical_order is not None or w.logical_order is not None:
        if x.logical_order is None or w.logical_order is None or not np.array_equal(x.logical_order, w.logical_order):
            raise ValueError("operands use different channel permutations")


def gemm_dequant(q_act: QuantizedTensor, q_wt: QuantizedTensor, order: str = "logical") -> np.ndarray:
    """``dequantize(q_act) @ dequantize(q_wt).T`` with a fixed serial reduction.

    ``order="logical"`` reduces interleaved operands in their pre-permutation
    channel order, so the result does not depend on the physical layout.
    """
    _check_pair(q_act, q_wt)
    acc = serial_accumulate(_logical_values(q_act, order), _logical_values(q_wt, order))
    return acc * (_tensor_factor(q_act) * _tensor_factor(q_wt))


def gemm_two_term(q_x: QuantizedTensor, q_w: QuantizedTensor,
                  q_r: QuantizedTensor | None = None, q_wo: QuantizedTensor | None = None) -> np.ndarray:
    """Primary product plus the residual correction ``Q(R_o) Q(W_o)^T``.

    The correction is accumulated onto the primary accumulator in the same
    serial order the augmented GEMM uses, so the two agree exactly.
    """
    _check_pair(q_x, q_w)
    if q_x.layout is not Layout.CONTIGUOUS:
        raise ValueError("two-term GEMM expects contiguous operands")
    acc = serial_accumulate(q_x.element_values(), q_w.element_values())
    if (q_r is None) != (q_wo is None):
        raise ValueError("residual and duplicated-weight operands come together")
    if q_r is not None:
        _check_pair(q_r, q_wo)
        if q_r.shape[0] != q_x.shape[0] or q_wo.shape[0] != q_w.shape[0]:
            raise ValueError("residual operands do not match the primary row counts")
        if _tensor_factor(q_r) != _tensor_factor(q_x) or _tensor_factor(q_wo) != _tensor_factor(q_w):
            raise ValueError("residual operands must share the primary tensor scales")
        acc = serial_accumulate(q_r.element_values(), q_wo.element_values(), acc)
    return acc * (_tensor_factor(q_x) * _tensor_factor(q_w))
