"""
Cached per-frame feature files.

Layout (all little-endian):
    bytes 0-3    magic b"TRKF"
    bytes 4-5    u16 format version
    bytes 6-9    u32 T (frames)
    bytes 10-13  u32 N (feature dim)
    bytes 14-    T*N float32, row-major

Values are widened to float64 on read.
"""
from __future__ import annotations

import struct
from pathlib import Path
from typing import Union

import numpy as np

from reid.aggregation import FeatureMatrix
from shared.errors import (
    BadMagicError,
    FeatureFileError,
    ShapeError,
    TruncatedFileError,
    VersionMismatchError,
)

MAGIC = b"TRKF"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHII")
HEADER_SIZE = _HEADER.size  # 14


def encode_features(matrix: Union[np.ndarray, FeatureMatrix]) -> bytes:
    data = matrix.data if isinstance(matrix, FeatureMatrix) else FeatureMatrix(matrix).data
    T, N = data.shape
    payload = np.ascontiguousarray(data, dtype="<f4").tobytes()
    return _HEADER.pack(MAGIC, FORMAT_VERSION, T, N) + payload


def decode_features(raw: bytes, path: str | None = None) -> FeatureMatrix:
    if len(raw) < HEADER_SIZE:
        raise TruncatedFileError(f"header needs {HEADER_SIZE} bytes, got {len(raw)}", path)
    magic, version, T, N = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}", path)
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"format version {version}, expected {FORMAT_VERSION}", path)
    expected = 4 * T * N
    body = len(raw) - HEADER_SIZE
    if body < expected:
        raise TruncatedFileError(f"payload has {body} bytes, header declares {expected}", path)
    if body > expected:
        raise FeatureFileError(f"{body - expected} trailing bytes after payload", path)
    values = np.frombuffer(raw, dtype="<f4", count=T * N, offset=HEADER_SIZE)
    try:
        return FeatureMatrix(values.astype(np.float64).reshape(T, N))
    except ShapeError as e:
        raise FeatureFileError(str(e), path)


def write_features(path: Union[str, Path], matrix: Union[np.ndarray, FeatureMatrix]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(encode_features(matrix))


def read_features(path: Union[str, Path]) -> FeatureMatrix:
    path = Path(path)
    with open(path, "rb") as f:
        raw = f.read()
    return decode_features(raw, str(path))
