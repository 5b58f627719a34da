"""Bit-exact codecs for the small element and scale encodings used by
block-scaled formats (E2M1, E2M3, E3M2, E4M3, E5M2, E8M0, INT4).

Every encoding is table driven: the full set of finite codes is decoded once
and cached, and nearest-value encoding is a search over that sorted lattice.
Codes are plain unsigned integers (numpy ``uint8`` arrays for vector input).
"""

from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass

import numpy as np


class Encoding(enum.Enum):
    E2M1 = "e2m1"
    E2M3 = "e2m3"
    E3M2 = "e3m2"
    E4M3 = "e4m3"
    E5M2 = "e5m2"
    E8M0 = "e8m0"
    INT4 = "int4"

    @property
    def info(self) -> "EncodingInfo":
        return _INFO[self]

    @property
    def bits(self) -> int:
        return self.info.bits

    @property
    def max_normal(self) -> float:
        return float(positive_values(self)[-1])

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class EncodingInfo:
    bits: int
    exp_bits: int
    man_bits: int
    bias: int
    signed: bool
    # how the all-ones exponent field is treated: "normal" (no inf/nan),
    # "fn" (only the all-ones mantissa is NaN, OCP E4M3) or "ieee" (inf/nan)
    top_exponent: str = "normal"
    integer: bool = False

    @property
    def min_normal(self) -> float:
        if self.integer:
            return 1.0
        return 2.0 ** (1 - self.bias)


_INFO = {
    Encoding.E2M1: EncodingInfo(4, 2, 1, 1, True),
    Encoding.E2M3: EncodingInfo(6, 2, 3, 1, True),
    Encoding.E3M2: EncodingInfo(6, 3, 2, 3, True),
    Encoding.E4M3: EncodingInfo(8, 4, 3, 7, True, top_exponent="fn"),
    Encoding.E5M2: EncodingInfo(8, 5, 2, 15, True, top_exponent="ieee"),
    Encoding.E8M0: EncodingInfo(8, 8, 0, 127, False, top_exponent="fn"),
    Encoding.INT4: EncodingInfo(4, 0, 3, 0, True, integer=True),
}


class InvalidCodeError(ValueError):
    """Raised when a raw pattern is not a finite value of its encoding."""


def _decode_raw(code: int, enc: Encoding) -> float | None:
    """Decode one raw pattern; ``None`` for NaN/Inf/reserved patterns."""
    info = enc.info
    if not 0 <= code < (1 << info.bits):
        return None
    if info.integer:
        if code == 0b1000:
            # -8 is reserved so the integer lattice stays symmetric
            return None
        return float(code - 16 if code & 0b1000 else code)
    man_mask = (1 << info.man_bits) - 1
    exp_mask = (1 << info.exp_bits) - 1
    sign = -1.0 if info.signed and (code >> (info.bits - 1)) & 1 else 1.0
    exp = (code >> info.man_bits) & exp_mask
    man = code & man_mask
    if exp == exp_mask:
        if info.top_exponent == "ieee":
            return None
        if info.top_exponent == "fn" and man == man_mask:
            return None
    if enc is Encoding.E8M0:
        return math.ldexp(1.0, exp - info.bias)
    if exp == 0:
        return sign * math.ldexp(man, 1 - info.bias - info.man_bits)
    return sign * math.ldexp((1 << info.man_bits) + man, exp - info.bias - info.man_bits)


@functools.cache
def _tables(enc: Encoding):
    """(all valid codes, their values, sorted non-negative values, matching codes)."""
    codes, values = [], []
    for c in range(1 << enc.bits):
        v = _decode_raw(c, enc)
        if v is not None:
            codes.append(c)
            values.append(v)
    codes_arr = np.array(codes, dtype=np.uint8)
    values_arr = np.array(values, dtype=np.float64)
    # magnitude lattice: keep the +0 / positive codes only
    pos = [(v, c) for c, v in zip(codes, values) if v > 0 or (v == 0 and not math.copysign(1, v) < 0)]
    pos.sort()
    mags = np.array([v for v, _ in pos], dtype=np.float64)
    mag_codes = np.array([c for _, c in pos], dtype=np.uint8)
    for arr in (codes_arr, values_arr, mags, mag_codes):
        arr.setflags(write=False)
    return codes_arr, values_arr, mags, mag_codes


def all_codes(enc: Encoding) -> np.ndarray:
    """Every valid finite raw code of ``enc``."""
    return _tables(enc)[0]


def positive_values(enc: Encoding) -> np.ndarray:
    """Sorted non-negative representable values (zero included when present)."""
    return _tables(enc)[2]


def _sign_bit(enc: Encoding) -> int:
    if enc is Encoding.INT4:
        return 0
    return 1 << (enc.bits - 1) if enc.info.signed else 0


def decode(code, enc: Encoding):
    """Exact value of raw ``code`` (scalar or array) in encoding ``enc``."""
    scalar = np.ndim(code) == 0
    c = np.asarray(code, dtype=np.int64)
    lut = _decode_lut(enc)
    if np.any((c < 0) | (c >= lut.size)) or np.any(np.isnan(lut[np.clip(c, 0, lut.size - 1)])):
        raise InvalidCodeError(f"invalid {enc} bit pattern in {code!r}")
    out = lut[c]
    return float(out) if scalar else out


@functools.cache
def _decode_lut(enc: Encoding) -> np.ndarray:
    lut = np.full(1 << enc.bits, np.nan)
    for c in range(1 << enc.bits):
        v = _decode_raw(c, enc)
        if v is not None:
            lut[c] = v
    lut.setflags(write=False)
    return lut


def _negate_codes(mag_codes: np.ndarray, enc: Encoding) -> np.ndarray:
    if enc is Encoding.INT4:
        return ((16 - mag_codes.astype(np.int64)) % 16).astype(np.uint8)
    return mag_codes | np.uint8(_sign_bit(enc))


def encode_nearest(x, enc: Encoding, saturate: bool = True):
    """Round ``x`` to the nearest representable value of ``enc``.

    Ties go to the code whose least significant (mantissa) bit is zero.
    With ``saturate`` magnitudes above the max normal clamp to it, otherwise
    they raise ``OverflowError``. Negative inputs of unsigned encodings
    (E8M0) are rejected.
    """
    scalar = np.ndim(x) == 0
    xa = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(xa)):
        raise ValueError("encode_nearest: non-finite input")
    _, _, mags, mag_codes = _tables(enc)
    vmax = mags[-1]
    a = np.abs(xa)
    if np.any(a > vmax):
        if not saturate:
            raise OverflowError(f"|x| exceeds {enc} max normal {vmax}")
        a = np.minimum(a, vmax)
    neg = np.signbit(xa)
    if not enc.info.signed and np.any(neg & (xa != 0)):
        raise ValueError(f"{enc} is unsigned; got a negative input")

    n = mags.size
    hi = np.clip(np.searchsorted(mags, a, side="left"), 0, n - 1)
    lo = np.clip(hi - 1, 0, n - 1)
    vlo, vhi = mags[lo], mags[hi]
    # lattice values have few significant bits so the midpoint is exact
    mid = 0.5 * (vlo + vhi)
    pick_hi = (a > mid) | ((a == mid) & (mag_codes[lo] & 1 == 1))
    pick_hi |= vhi == a
    pick_hi &= vhi >= a
    # below the smallest magnitude (E8M0 has no zero) searchsorted gives hi == 0
    idx = np.where(pick_hi | (hi == lo), hi, lo)
    codes = mag_codes[idx]
    if enc.info.signed:
        codes = np.where(neg, _negate_codes(codes, enc), codes)
    codes = codes.astype(np.uint8)
    return int(codes) if scalar else codes


def quantize_value(x, enc: Encoding, saturate: bool = True):
    """``decode(encode_nearest(x))``: snap ``x`` onto the lattice of ``enc``."""
    return decode(encode_nearest(x, enc, saturate), enc)


def encode_scale_e8m0_up(raw_scale):
    """Smallest power of two >= ``raw_scale``, as an E8M0 code.

    Inputs below 2**-127 round up to the smallest E8M0 value; inputs above
    2**127 are out of range.
    """
    scalar = np.ndim(raw_scale) == 0
    r = np.asarray(raw_scale, dtype=np.float64)
    if not np.all(np.isfinite(r)) or np.any(r <= 0):
        raise ValueError("E8M0 scale must be finite and > 0")
    m, e = np.frexp(r)
    exp = np.where(m == 0.5, e - 1, e)
    if np.any(exp > 127):
        raise OverflowError("raw scale exceeds the E8M0 range")
    codes = (np.clip(exp, -127, 127) + 127).astype(np.uint8)
    return int(codes) if scalar else codes


def encode_scale_e4m3_up(raw_scale):
    """Smallest E4M3 value >= ``raw_scale``, as an E4M3 code.

    Raises ``OverflowError`` above 448 (a tensor-level scale is needed there).
    """
    scalar = np.ndim(raw_scale) == 0
    r = np.asarray(raw_scale, dtype=np.float64)
    if not np.all(np.isfinite(r)) or np.any(r <= 0):
        raise ValueError("E4M3 scale must be finite and > 0")
    _, _, mags, mag_codes = _tables(Encoding.E4M3)
    if np.any(r > mags[-1]):
        raise OverflowError("raw scale exceeds E4M3 max normal 448")
    # mags[0] is zero, which is never a valid scale
    idx = np.maximum(np.searchsorted(mags, r, side="left"), 1)
    codes = mag_codes[idx]
    return int(codes) if scalar else codes


def round_scale_up(raw_scale, enc: Encoding):
    """Decoded value of the rounded-up scale code (vectorised)."""
    if enc is Encoding.E8M0:
        return decode(encode_scale_e8m0_up(raw_scale), enc)
    if enc is Encoding.E4M3:
        return decode(encode_scale_e4m3_up(raw_scale), enc)
    raise ValueError(f"{enc} is not a scale encoding")


def smallest_scale(enc: Encoding) -> float:
    """Smallest positive value usable as a block scale."""
    mags = positive_values(enc)
    return float(mags[mags > 0][0])

