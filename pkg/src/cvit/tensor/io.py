"""Binary tensor format.

Layout (all integers little-endian)::

    b"CVT1" | u8 dtype (0=f32, 1=f64) | u32 rank | rank x u32 dims | payload

The payload is the row-major data in little-endian byte order.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"CVT1"
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


class TensorFormatError(ValueError):
    pass


def tensor_to_bytes(arr) -> bytes:
    arr = np.asarray(getattr(arr, "data", arr))
    try:
        code = _CODES[arr.dtype.newbyteorder("=")]
    except KeyError:
        raise TensorFormatError(f"unsupported dtype {arr.dtype}") from None
    header = MAGIC + struct.pack("<BI", code, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()


def tensor_from_bytes(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Decode one tensor starting at ``offset``; returns (array, next offset)."""
    if buf[offset:offset + 4] != MAGIC:
        raise TensorFormatError("bad tensor magic")
    offset += 4
    if len(buf) < offset + 5:
        raise TensorFormatError("truncated tensor header")
    code, rank = struct.unpack_from("<BI", buf, offset)
    offset += 5
    if code not in _DTYPES:
        raise TensorFormatError(f"unknown dtype code {code}")
    if len(buf) < offset + 4 * rank:
        raise TensorFormatError("truncated tensor header")
    dims = struct.unpack_from(f"<{rank}I", buf, offset)
    offset += 4 * rank
    dtype = _DTYPES[code]
    nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    if len(buf) < offset + nbytes:
        raise TensorFormatError("truncated tensor payload")
    arr = np.frombuffer(buf, dtype=dtype, count=nbytes // dtype.itemsize, offset=offset)
    arr = arr.reshape(dims).astype(dtype.newbyteorder("="))
    return arr, offset + nbytes


def save_tensor(path, arr) -> None:
    with open(path, "wb") as fh:
        fh.write(tensor_to_bytes(arr))


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        arr, _ = tensor_from_bytes(fh.read())
    return arr
