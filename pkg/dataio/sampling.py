"""Temporal sampling of a track to a fixed number of frames."""
from __future__ import annotations

import zlib
from typing import Sequence, Union

import numpy as np

from reid.aggregation import FeatureMatrix
from shared.errors import ShapeError

DEFAULT_TIME_SAMPLES = 16

SeedLike = Union[int, Sequence[int]]


def track_seed(seed: int, track_id: str) -> list:
    """Per-track seed derived from the run seed and a stable hash of the id."""
    return [int(seed), zlib.crc32(track_id.encode("utf-8"))]


def sample_indices(n_source: int, n_out: int = DEFAULT_TIME_SAMPLES, seed: SeedLike = 0) -> np.ndarray:
    """Source-frame indices to keep.

    Long tracks: indices floor(phase + k * n_source / n_out) for k < n_out,
    with phase drawn uniformly from [0, n_source / n_out).
    Short tracks: the frame sequence repeated cyclically.
    """
    if n_source < 1:
        raise ShapeError("cannot sample frames from an empty track")
    if n_out < 1:
        raise ShapeError(f"number of output frames must be >= 1, got {n_out}")
    if n_source < n_out:
        return np.arange(n_out) % n_source
    step = n_source / n_out
    phase = np.random.default_rng(seed).random() * step
    idx = np.floor(phase + np.arange(n_out) * step).astype(np.int64)
    return np.minimum(idx, n_source - 1)


def sample_frames(
    matrix: Union[np.ndarray, FeatureMatrix],
    n_out: int = DEFAULT_TIME_SAMPLES,
    seed: SeedLike = 0,
) -> FeatureMatrix:
    data = matrix.data if isinstance(matrix, FeatureMatrix) else np.asarray(matrix)
    if data.ndim != 2 or data.shape[0] < 1:
        raise ShapeError("cannot sample frames from an empty track")
    return FeatureMatrix(data[sample_indices(data.shape[0], n_out, seed)])
