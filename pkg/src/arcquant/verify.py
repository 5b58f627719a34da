"""Randomized invariant suite behind ``arcquant verify-bounds``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .analysis import EPS4, EPS8, BoundCheck
from .arc_pipeline import (
    augment,
    dual_stage_bound_terms,
    quantize_activation_arc,
    quantize_weight_arc,
    to_interleaved,
)
from .blockquant import MXFP8_E4M3, NVFP4, block_max_per_element, dequantize, quantize_tensor
from .calibration import build_profile, override_s
from .minifloat import Encoding, positive_values, round_scale_up
from .refgemm import gemm_dequant, gemm_two_term


@dataclass
class CheckResult:
    name: str
    checked: int
    violations: int

    @property
    def passed(self) -> bool:
        return self.violations == 0


def _scaled_gaussian(rng, n_elems: int, width: int, spread: float) -> np.ndarray:
    """Gaussian rows with per-row magnitude ``2**U(-spread, spread)``."""
    rows = max(1, n_elems // width)
    x = rng.standard_normal((rows, width))
    return x * np.exp2(rng.uniform(-spread, spread, size=(rows, 1)))


def check_e8m0_alpha(rng, samples: int, fault: bool = False) -> CheckResult:
    raw = np.exp2(rng.uniform(-120, 120, samples))
    alpha = round_scale_up(raw, Encoding.E8M0) / raw
    if fault:
        alpha[:: max(1, samples // 10)] *= 2.0
    bad = (alpha < 1) | (alpha >= 2)
    return CheckResult("e8m0_alpha", samples, int(bad.sum()))


def check_e4m3_alpha(rng, samples: int, fault: bool = False) -> CheckResult:
    lo = positive_values(Encoding.E4M3)[8]  # smallest normal, 2**-6
    raw = np.exp2(rng.uniform(np.log2(lo), np.log2(448.0), samples))
    alpha = round_scale_up(raw, Encoding.E4M3) / raw
    if fault:
        alpha[:: max(1, samples // 10)] *= 1.5
    bad = (alpha < 1) | (alpha > 1.125)
    return CheckResult("e4m3_alpha", samples, int(bad.sum()))


def check_mxfp8_bound(rng, samples: int, fault: bool = False) -> CheckResult:
    spec = MXFP8_E4M3
    x = _scaled_gaussian(rng, samples, 32 * 32, 8.0)
    q = quantize_tensor(x, spec)
    err = x - dequantize(q)
    if fault:
        err[0, 0] += block_max_per_element(x, spec.g)[0, 0]
    alpha = np.repeat(q.alpha, spec.g, axis=1)
    check = BoundCheck.single_stage(err, block_max_per_element(x, spec.g), alpha, spec)
    return CheckResult("mxfp8_bound", err.size, check.violations() + check.alpha_sup_violations())


def check_arc_bound(rng, samples: int, fault: bool = False) -> CheckResult:
    spec = NVFP4
    width = 256
    x = _scaled_gaussian(rng, samples, width, 3.0)
    # compensate every channel so each element goes through both stages
    prof = override_s(build_profile(x), width)
    act = quantize_activation_arc(x, prof, spec)
    err, m_block, a12 = dual_stage_bound_terms(act)
    if fault:
        err = err.copy()
        err[0] += m_block[0]
    check = BoundCheck.dual_stage(err, m_block, a12, spec)
    return CheckResult("dual_stage_bound", err.size, check.violations() + check.alpha_sup_violations())


def _random_layer(rng, k_in: int, n: int, m: int):
    x = rng.standard_normal((n, k_in))
    hot = rng.choice(k_in, size=max(1, k_in // 64), replace=False)
    x[:, hot] *= rng.uniform(16, 128)
    w = rng.standard_normal((m, k_in))
    return x, w


def check_fused_gemm(rng, configs: int, fault: bool = False) -> CheckResult:
    spec = NVFP4
    bad = 0
    for i in range(configs):
        k_in = 16 * int(rng.integers(1, 17))
        n, m = int(rng.integers(1, 9)), int(rng.integers(1, 9))
        x, w = _random_layer(rng, k_in, n, m)
        s = int(rng.integers(0, k_in + 1))
        prof = override_s(build_profile(x), s)
        act = quantize_activation_arc(x, prof, spec)
        wt = quantize_weight_arc(w, prof, spec)
        aug = augment(act, wt)
        if fault and i == 0:
            aug.act.codes[:, 0] ^= 1
        fused = gemm_dequant(aug.act, aug.wt)
        two = gemm_two_term(act.primary, wt.primary, act.residual, wt.duplicate)
        bad += not np.array_equal(fused, two)
    return CheckResult("fused_gemm_equivalence", configs, bad)


def check_layout(rng, configs: int, fault: bool = False) -> CheckResult:
    spec = NVFP4
    bad = 0
    for i in range(configs):
        k_in = 16 * int(rng.integers(1, 17))
        n, m = int(rng.integers(1, 9)), int(rng.integers(1, 9))
        x, w = _random_layer(rng, k_in, n, m)
        s = 16 * int(rng.integers(0, k_in // 16 + 1))
        prof = override_s(build_profile(x), s)
        aug = augment(quantize_activation_arc(x, prof, spec), quantize_weight_arc(w, prof, spec))
        inter = to_interleaved(aug)
        if fault and i == 0:
            inter.act.codes[:, [0, -1]] = inter.act.codes[:, [-1, 0]]
        bad += not np.array_equal(gemm_dequant(aug.act, aug.wt), gemm_dequant(inter.act, inter.wt))
    return CheckResult("layout_invariance", configs, bad)


def check_eps_identity() -> CheckResult:
    return CheckResult("eps4_squared_eq_eps8", 1, int(EPS4 * EPS4 != EPS8))


def run_suite(samples: int = 100_000, seed: int = 0, gemm_configs: int = 100,
              inject_fault: bool = False) -> list[CheckResult]:
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    return [
        check_eps_identity(),
        check_e8m0_alpha(rng, samples, inject_fault),
        check_e4m3_alpha(rng, samples, inject_fault),
        check_mxfp8_bound(rng, samples, inject_fault),
        check_arc_bound(rng, samples, inject_fault),
        check_fused_gemm(rng, gemm_configs, inject_fault),
        check_layout(rng, gemm_configs, inject_fault),
    ]
