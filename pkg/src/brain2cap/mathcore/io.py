"""NCMX matrix binary format.

Layout (little-endian): magic ``b"NCMX"``, version ``u32``, rows ``u64``,
cols ``u64``, then ``rows * cols`` ``f64`` values in row-major order.
"""

import struct

import numpy as np

from ..errors import FormatError, VersionError

MAGIC = b"NCMX"
VERSION = 1
_HEADER = struct.Struct("<4sIQQ")


def pack_matrix(a):
    a = np.ascontiguousarray(a, dtype="<f8")
    if a.ndim != 2:
        raise ValueError("pack_matrix expects a 2-D array")
    return _HEADER.pack(MAGIC, VERSION, a.shape[0], a.shape[1]) + a.tobytes()


def unpack_matrix(buf, offset=0):
    """Parse one matrix starting at ``offset``; return ``(array, next_offset)``."""
    if len(buf) - offset < _HEADER.size:
        raise FormatError("truncated NCMX header", offset)
    magic, version, rows, cols = _HEADER.unpack_from(buf, offset)
    if magic != MAGIC:
        raise FormatError(f"bad NCMX magic {magic!r}", offset)
    if version != VERSION:
        raise VersionError(f"unsupported NCMX version {version}")
    start = offset + _HEADER.size
    nbytes = rows * cols * 8
    if len(buf) - start < nbytes:
        raise FormatError(
            f"truncated NCMX payload: need {nbytes} bytes, have {len(buf) - start}",
            len(buf),
        )
    a = np.frombuffer(buf, dtype="<f8", count=rows * cols, offset=start)
    return a.reshape(rows, cols).astype(np.float64), start + nbytes


def write_matrix(path, a):
    with open(path, "wb") as fh:
        fh.write(pack_matrix(a))


def read_matrix(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    a, end = unpack_matrix(buf)
    if end != len(buf):
        raise FormatError("trailing bytes after NCMX matrix", end)
    return a
