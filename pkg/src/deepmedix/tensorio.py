"""DMTX binary tensor files.

Layout: ``b"DMTX"``, u8 version (1), u8 dtype (0 = float32, 1 = float64),
u8 rank, ``rank`` little-endian u32 dimensions, then the little-endian
row-major payload.
"""

import struct

import numpy as np

from .errors import DataError

MAGIC = b"DMTX"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


def encode(array):
    a = np.asarray(array)
    if a.dtype not in _CODES:
        raise TypeError(f"DMTX stores float32/float64 only, got {a.dtype}")
    code = _CODES[a.dtype]
    header = MAGIC + struct.pack("<BBB", VERSION, code, a.ndim)
    header += struct.pack(f"<{a.ndim}I", *a.shape)
    return header + np.ascontiguousarray(a, dtype=_DTYPES[code]).tobytes()


def decode(buf):
    if len(buf) < 7 or buf[:4] != MAGIC:
        raise DataError("not a DMTX buffer (bad magic)")
    version, code, rank = struct.unpack_from("<BBB", buf, 4)
    if version != VERSION:
        raise DataError(f"unsupported DMTX version {version}")
    if code not in _DTYPES:
        raise DataError(f"unknown DMTX dtype code {code}")
    off = 7 + 4 * rank
    if len(buf) < off:
        raise DataError("truncated DMTX header")
    shape = struct.unpack_from(f"<{rank}I", buf, 7)
    dtype = _DTYPES[code]
    n = int(np.prod(shape, dtype=np.int64))
    if len(buf) != off + n * dtype.itemsize:
        raise DataError(f"DMTX payload size mismatch for shape {shape}")
    return np.frombuffer(buf, dtype=dtype, count=n, offset=off).reshape(shape).astype(dtype.newbyteorder("="))


def save(path, array):
    with open(path, "wb") as f:
        f.write(encode(array))


def load(path):
    with open(path, "rb") as f:
        return decode(f.read())
