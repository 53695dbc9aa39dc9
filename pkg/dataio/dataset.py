"""Tracks of a manifest loaded into memory and sampled to a fixed length."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from dataio.features import read_features
from dataio.manifest import ManifestEntry, filter_sessions, load_manifest
from dataio.sampling import DEFAULT_TIME_SAMPLES, sample_indices, track_seed
from shared.errors import ShapeError, UnknownTrackError
from shared.logging_utils import get_logger

logger = get_logger("dataio")


@dataclass
class TrackDataset:
    entries: List[ManifestEntry]
    # sampled T x N matrices, aligned with entries
    matrices: List[np.ndarray]
    # source-frame index of every sampled row
    source_indices: List[np.ndarray]
    _index: Dict[str, int] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not (len(self.entries) == len(self.matrices) == len(self.source_indices)):
            raise ShapeError("entries, matrices and source indices must align")
        dims = {m.shape[1] for m in self.matrices}
        if len(dims) > 1:
            raise ShapeError(f"inconsistent feature dimensions in dataset: {sorted(dims)}")
        self._index = {e.track_id: i for i, e in enumerate(self.entries)}

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def feature_dim(self) -> int:
        if not self.matrices:
            raise ShapeError("empty dataset has no feature dimension")
        return self.matrices[0].shape[1]

    @property
    def track_ids(self) -> List[str]:
        return [e.track_id for e in self.entries]

    def index_of(self, track_id: str) -> int:
        try:
            return self._index[track_id]
        except KeyError:
            raise UnknownTrackError(track_id)

    def matrix(self, track_id: str) -> np.ndarray:
        return self.matrices[self.index_of(track_id)]

    def corrupted_mask(self, track_id: str) -> Optional[np.ndarray]:
        """Boolean mask over sampled rows, or None without ground truth."""
        i = self.index_of(track_id)
        corrupted = self.entries[i].corrupted_frames
        if corrupted is None:
            return None
        return np.isin(self.source_indices[i], np.asarray(corrupted, dtype=np.int64))

    @classmethod
    def from_matrices(
        cls,
        entries: Sequence[ManifestEntry],
        matrices: Sequence[np.ndarray],
        time_samples: int = DEFAULT_TIME_SAMPLES,
        seed: int = 0,
    ) -> "TrackDataset":
        sampled, indices = [], []
        for entry, matrix in zip(entries, matrices):
            idx = sample_indices(matrix.shape[0], time_samples, track_seed(seed, entry.track_id))
            sampled.append(np.asarray(matrix, dtype=np.float64)[idx])
            indices.append(idx)
        return cls(list(entries), sampled, indices)


def load_dataset(
    manifest_path: Union[str, Path],
    time_samples: int = DEFAULT_TIME_SAMPLES,
    seed: int = 0,
    sessions: Optional[Sequence[str]] = None,
    threads: int = 1,
) -> TrackDataset:
    """Read every feature file of a manifest (optionally only some sessions)."""
    manifest_path = Path(manifest_path)
    entries = filter_sessions(load_manifest(manifest_path), sessions)
    root = manifest_path.parent

    def _read(entry: ManifestEntry) -> np.ndarray:
        return read_features(entry.resolve_path(root)).data

    if threads > 1 and len(entries) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            matrices = list(pool.map(_read, entries))
    else:
        matrices = [_read(e) for e in entries]
    for entry, matrix in zip(entries, matrices):
        if matrix.shape[0] != entry.frames:
            logger.warning(
                "frame count mismatch track=%s manifest=%d file=%d",
                entry.track_id,
                entry.frames,
                matrix.shape[0],
            )
    logger.info("dataset loaded manifest=%s tracks=%d T=%d", manifest_path, len(entries), time_samples)
    return TrackDataset.from_matrices(entries, matrices, time_samples, seed)
