"""HVT1 tensor files: magic, ndim, dims, float32 payload, all little-endian.

Layout::

    b"HVT1" | uint32 ndim | uint32 dims[ndim] | float32 data[prod(dims)]

Data is row-major with the last dimension fastest.
"""

from __future__ import annotations

import numpy as np

from .errors import TensorFormatError

MAGIC = b"HVT1"
_U32 = np.dtype("<u4")
_F32 = np.dtype("<f4")


def write_hvt(path, array) -> None:
    a = np.array(array, dtype=_F32, order="C")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(np.array([a.ndim, *a.shape], dtype=_U32).tobytes())
        f.write(a.tobytes())


def read_hvt(path) -> np.ndarray:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != MAGIC:
        raise TensorFormatError(f"{path}: bad magic {raw[:4]!r}, expected {MAGIC!r}")
    if len(raw) < 8:
        raise TensorFormatError(f"{path}: truncated header")
    ndim = int(np.frombuffer(raw, _U32, 1, 4)[0])
    head = 8 + 4 * ndim
    if len(raw) < head:
        raise TensorFormatError(f"{path}: truncated header ({ndim} dims declared)")
    dims = tuple(int(d) for d in np.frombuffer(raw, _U32, ndim, 8))
    n = int(np.prod(dims, dtype=np.int64))
    if len(raw) - head != 4 * n:
        raise TensorFormatError(f"{path}: payload is {len(raw) - head} bytes, expected {4 * n} for shape {dims}")
    return np.frombuffer(raw, _F32, n, head).reshape(dims).astype(np.float32)
