"""Offline outlier-channel identification.

Channels are ranked by their absolute maximum over the calibration set. The
layer maximum ``M`` sets the threshold ``tau = M / 8``; every channel strictly
above it needs a residual channel, and that count is rounded up to whole
blocks.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable

import numpy as np

# 2**-3: exponent-width gap between the E5M2 reference and E2M1
THRESHOLD_RATIO = 0.125
DEFAULT_ALIGN = 16


@dataclass(frozen=True)
class CalibrationProfile:
    layer_name: str
    reorder: tuple[int, ...]
    channel_max: tuple[float, ...]
    m: float
    tau: float
    s_raw: int
    s: int

    @property
    def k_in(self) -> int:
        return len(self.reorder)

    def inverse(self) -> np.ndarray:
        return np.argsort(np.asarray(self.reorder))

    def to_dict(self) -> dict:
        return {
            "layer": self.layer_name,
            "reorder": list(self.reorder),
            "channel_max": list(self.channel_max),
            "m": self.m,
            "tau": self.tau,
            "s_raw": self.s_raw,
            "s": self.s,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CalibrationProfile":
        prof = cls(
            layer_name=str(d["layer"]),
            reorder=tuple(int(i) for i in d["reorder"]),
            channel_max=tuple(float(v) for v in d["channel_max"]),
            m=float(d["m"]),
            tau=float(d["tau"]),
            s_raw=int(d["s_raw"]),
            s=int(d["s"]),
        )
        prof.validate()
        return prof

    def validate(self) -> None:
        k = self.k_in
        if sorted(self.reorder) != list(range(k)):
            raise ValueError("reorder is not a permutation")
        if len(self.channel_max) != k:
            raise ValueError("channel_max length differs from reorder length")
        if not 0 <= self.s_raw <= self.s <= k:
            raise ValueError(f"need 0 <= s_raw <= s <= K_in, got {self.s_raw}, {self.s}, {k}")


def align_up(s_raw: int, k_in: int, align: int = DEFAULT_ALIGN) -> int:
    return min(-(-s_raw // align) * align, k_in)


def channel_absmax(batches: Iterable[np.ndarray]) -> np.ndarray:
    cmax = None
    for i, b in enumerate(batches):
        b = np.asarray(b, dtype=np.float64)
        if b.ndim == 1:
            b = b[None, :]
        if b.ndim != 2 or b.shape[0] == 0:
            raise ValueError(f"batch {i}: expected a non-empty matrix, got shape {b.shape}")
        m = np.abs(b).max(axis=0)
        if cmax is None:
            cmax = m
        elif m.shape != cmax.shape:
            raise ValueError(f"batch {i} has K_in={m.shape[0]}, expected {cmax.shape[0]}")
        else:
            cmax = np.maximum(cmax, m)
    if cmax is None:
        raise ValueError("no calibration batches")
    return cmax


def profile_from_channel_max(channel_max, layer_name: str = "layer", align: int = DEFAULT_ALIGN) -> CalibrationProfile:
    cmax = np.asarray(channel_max, dtype=np.float64)
    if cmax.ndim != 1 or cmax.size == 0:
        raise ValueError("channel_max must be a non-empty vector")
    # stable sort on the negated key keeps lower indices first among ties
    reorder = np.argsort(-cmax, kind="stable")
    m = float(cmax.max())
    tau = m * THRESHOLD_RATIO
    s_raw = int(np.count_nonzero(cmax > tau))
    return CalibrationProfile(
        layer_name=layer_name,
        reorder=tuple(int(i) for i in reorder),
        channel_max=tuple(float(v) for v in cmax),
        m=m,
        tau=tau,
        s_raw=s_raw,
        s=align_up(s_raw, cmax.size, align),
    )


def build_profile(calib_batches, layer_name: str = "layer", align: int = DEFAULT_ALIGN) -> CalibrationProfile:
    """Profile a layer from one or more activation matrices (rows = tokens)."""
    if isinstance(calib_batches, np.ndarray):
        calib_batches = [calib_batches]
    return profile_from_channel_max(channel_absmax(calib_batches), layer_name, align)


def override_s(profile: CalibrationProfile, s: int) -> CalibrationProfile:
    """Force the number of compensated channels to ``s`` (top-``s`` reordered)."""
    if not 0 <= s <= profile.k_in:
        raise ValueError(f"S override {s} outside [0, {profile.k_in}]")
    return replace(profile, s=s, s_raw=min(profile.s_raw, s))


def apply_reorder(x, profile: CalibrationProfile) -> np.ndarray:
    x = np.asarray(x)
    if x.shape[-1] != profile.k_in:
        raise ValueError(f"K_in mismatch: tensor has {x.shape[-1]}, profile has {profile.k_in}")
    return x[..., list(profile.reorder)]


def inverse_reorder(x, profile: CalibrationProfile) -> np.ndarray:
    x = np.asarray(x)
    if x.shape[-1] != profile.k_in:
        raise ValueError(f"K_in mismatch: tensor has {x.shape[-1]}, profile has {profile.k_in}")
    return x[..., profile.inverse()]


def save_profile(profile: CalibrationProfile, path) -> None:
    Path(path).write_text(json.dumps(profile.to_dict(), indent=1))


def load_profile(path) -> CalibrationProfile:
    return CalibrationProfile.from_dict(json.loads(Path(path).read_text()))
