"""ARCT binary tensor container and synthetic activation generator.

Layout (all little-endian)::

    b"ARCT" | u32 version | u32 dtype (0 = binary32) | u32 ndim | u64 dims[ndim]
    | payload: prod(dims) binary32 values, row-major

A quantized tensor is stored as an ARCT file whose payload holds the block
scales (rows x blocks), followed by a companion section::

    b"QSEC" | u32 name_len | format name (utf-8) | u32 g | u32 layout
    | u64 k | f32 tensor_scale (0 = none) | u64 rows | u64 cols | codes (u8)
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .blockquant import Layout, QuantizedTensor, get_format

MAGIC = b"ARCT"
QSEC_MAGIC = b"QSEC"
VERSION = 1
DTYPE_BINARY32 = 0
_HEADER = struct.Struct("<4sIII")


class TensorFileError(ValueError):
    code = "tensor_file_error"


class BadMagicError(TensorFileError):
    code = "bad_magic"


class TruncatedError(TensorFileError):
    code = "truncated"


class UnsupportedDtypeError(TensorFileError):
    code = "unsupported_dtype"


class UnsupportedVersionError(TensorFileError):
    code = "unsupported_version"


class EmptyTensorError(TensorFileError):
    code = "empty_dims"


def encode_tensor(x) -> bytes:
    x = np.asarray(x)
    if x.ndim == 0 or x.size == 0:
        raise EmptyTensorError(f"cannot store a tensor with shape {x.shape}")
    head = _HEADER.pack(MAGIC, VERSION, DTYPE_BINARY32, x.ndim)
    dims = struct.pack(f"<{x.ndim}Q", *x.shape)
    return head + dims + np.ascontiguousarray(x, dtype="<f4").tobytes()


def decode_tensor(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Parse one ARCT tensor at ``offset``; returns it and the offset just past it."""
    if len(buf) - offset < _HEADER.size:
        raise TruncatedError("file shorter than the ARCT header")
    magic, version, dtype, ndim = _HEADER.unpack_from(buf, offset)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported ARCT version {version}")
    if dtype != DTYPE_BINARY32:
        raise UnsupportedDtypeError(f"unsupported dtype code {dtype}")
    if ndim == 0:
        raise EmptyTensorError("tensor has no dimensions")
    pos = offset + _HEADER.size
    if len(buf) - pos < 8 * ndim:
        raise TruncatedError("truncated dimension list")
    dims = struct.unpack_from(f"<{ndim}Q", buf, pos)
    pos += 8 * ndim
    if 0 in dims:
        raise EmptyTensorError(f"zero-length dimension in {dims}")
    nbytes = int(np.prod(dims, dtype=np.uint64)) * 4
    if len(buf) - pos < nbytes:
        raise TruncatedError(f"payload has {len(buf) - pos} bytes, expected {nbytes}")
    x = np.frombuffer(buf, dtype="<f4", count=nbytes // 4, offset=pos).reshape(dims)
    return x.astype(np.float32), pos + nbytes


def write_tensor(path, x) -> None:
    Path(path).write_bytes(encode_tensor(x))


def read_tensor(path) -> np.ndarray:
    x, _ = decode_tensor(Path(path).read_bytes())
    return x


def write_quantized(path, q: QuantizedTensor) -> None:
    if q.layout is not Layout.CONTIGUOUS:
        raise TensorFileError("store quantized tensors in contiguous layout")
    name = q.format.name.encode()
    scales = encode_tensor(q.block_scales)
    rows, cols = q.codes.shape
    sec = (
        QSEC_MAGIC
        + struct.pack("<I", len(name)) + name
        + struct.pack("<IIQf", q.format.g, 0, q.k,
                      0.0 if q.tensor_scale is None else q.tensor_scale)
        + struct.pack("<QQ", rows, cols)
        + np.ascontiguousarray(q.codes, dtype=np.uint8).tobytes()
    )
    Path(path).write_bytes(scales + sec)


def read_quantized(path) -> QuantizedTensor:
    buf = Path(path).read_bytes()
    scales, pos = decode_tensor(buf)
    try:
        if buf[pos:pos + 4] != QSEC_MAGIC:
            raise BadMagicError("missing quantized companion section")
        pos += 4
        (nlen,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        name = buf[pos:pos + nlen].decode()
        pos += nlen
        g, layout, k, ts = struct.unpack_from("<IIQf", buf, pos)
        pos += struct.calcsize("<IIQf")
        rows, cols = struct.unpack_from("<QQ", buf, pos)
        pos += 16
    except struct.error as exc:
        raise TruncatedError(f"truncated companion section: {exc}") from None
    if len(buf) - pos < rows * cols:
        raise TruncatedError("truncated code payload")
    codes = np.frombuffer(buf, dtype=np.uint8, count=rows * cols, offset=pos).reshape(rows, cols).copy()
    if layout != 0:
        raise TensorFileError(f"unsupported layout code {layout}")
    return QuantizedTensor(
        codes=codes,
        block_scales=scales.astype(np.float64),
        format=get_format(name, g=g),
        k=int(k),
        tensor_scale=None if ts == 0.0 else float(ts),
    )


def outlier_indices(k: int, count: int, seed: int = 0) -> np.ndarray:
    """The channels ``gen_synthetic`` amplifies for a given seed (sorted)."""
    if not 0 <= count <= k:
        raise ValueError(f"outlier channel count {count} outside [0, {k}]")
    rng = np.random.default_rng(seed)
    return np.sort(rng.permutation(k)[:count])


def gen_synthetic(k: int, n: int, outlier_channels: int = 0, outlier_scale: float = 1.0,
                  seed: int = 0) -> np.ndarray:
    """Unit Gaussian ``n x k`` activations with ``outlier_channels`` channels scaled up."""
    idx = outlier_indices(k, outlier_channels, seed)
    x = np.random.default_rng([seed, 1]).standard_normal((n, k))
    x[:, idx] *= outlier_scale
    return x
