"""Reader/writer for the ``STNSR1`` tensor file format.

One ASCII header line ``STNSR1 <f32|f64> <ndim> <dim0> ... <dimN>`` followed
by the raw little-endian row-major values.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .errors import DataError

MAGIC = "STNSR1"
_CODES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}


def encode(array: np.ndarray) -> bytes:
    arr = np.asarray(array)
    if arr.dtype == np.float32:
        code = "f32"
    elif arr.dtype == np.float64:
        code = "f64"
    else:
        raise DataError(f"STNSR1 stores f32 or f64 only, got {arr.dtype}")
    header = " ".join([MAGIC, code, str(arr.ndim), *map(str, arr.shape)]) + "\n"
    return header.encode("ascii") + np.ascontiguousarray(arr, dtype=_CODES[code]).tobytes()


def decode(blob: bytes, source: str = "<bytes>") -> np.ndarray:
    nl = blob.find(b"\n")
    if nl < 0:
        raise DataError(f"{source}: missing STNSR1 header line")
    fields = blob[:nl].decode("ascii", errors="replace").split()
    if len(fields) < 3 or fields[0] != MAGIC or fields[1] not in _CODES:
        raise DataError(f"{source}: bad STNSR1 header {blob[:nl]!r}")
    try:
        ndim = int(fields[2])
        shape = tuple(int(f) for f in fields[3:])
    except ValueError:
        raise DataError(f"{source}: non-integer extents in header") from None
    if len(shape) != ndim:
        raise DataError(f"{source}: header declares {ndim} dims but lists {len(shape)}")
    dtype = _CODES[fields[1]]
    payload = blob[nl + 1:]
    expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    if len(payload) != expected:
        raise DataError(f"{source}: payload has {len(payload)} bytes, expected {expected}")
    return np.frombuffer(payload, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))


def save(path: str | os.PathLike, array: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode(array))


def load(path: str | os.PathLike) -> np.ndarray:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except FileNotFoundError:
        raise DataError(f"tensor file not found: {path}") from None
    return decode(blob, str(path))
