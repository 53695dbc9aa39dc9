"""
Synthetic track corpus for desk-scale experiments.

Every identity owns a unit prototype vector. A clean frame is the prototype
plus N(0, noise^2) noise, renormalized; with probability `corruption` a frame
is replaced by a vector from a shared distractor pool (a stand-in for an
occluded observation). Identities are spread over sessions and the k-th
track of an identity goes to video k of its session, so every identity is
seen in several videos and the retrieval protocol can be built.

A pool vector is `distractor_scale * g + occluder * o`: g is a random unit
direction of its own and o one unit direction shared by the whole pool (the
common look of an occluder). Both are far larger than a clean frame by
default, so plain averaging is swamped while a learned frame weighting can
spot the shared component. `distractor_scale=1, occluder=0` gives unit
random distractors.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import List, Union

import numpy as np

from dataio.features import write_features
from dataio.manifest import ManifestEntry, write_manifest
from shared.config import CONFIG
from shared.errors import ConfigError
from shared.logging_utils import get_logger

logger = get_logger("dataio")

MANIFEST_NAME = "manifest.jsonl"
_CAMERAS = ("left", "center", "right")


@dataclass(frozen=True)
class SynthConfig:
    identities: int = 50
    tracks_per_identity: int = 4
    frames: int = 32
    dim: int = 64
    noise: float = 0.1
    corruption: float = 0.3
    distractors: int = 16
    sessions: int = 2
    seed: int = CONFIG.default_seed
    distractor_scale: float = 8.0
    occluder: float = 40.0

    def validate(self) -> None:
        for name in ("identities", "tracks_per_identity", "frames", "dim", "distractors", "sessions"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not 0.0 <= self.corruption <= 1.0:
            raise ConfigError("corruption must be in [0, 1]")
        if self.noise < 0:
            raise ConfigError("noise must be >= 0")
        if self.distractor_scale < 0 or self.occluder < 0:
            raise ConfigError("distractor_scale and occluder must be >= 0")
        if self.distractor_scale == 0 and self.occluder == 0:
            raise ConfigError("distractor_scale and occluder cannot both be 0")


def _unit_rows(x: np.ndarray) -> np.ndarray:
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def distractor_pool(config: SynthConfig, directions: np.ndarray) -> np.ndarray:
    """Scale the pool's unit `directions` and add the shared occluder direction."""
    pool = directions * config.distractor_scale
    if config.occluder > 0:
        # separate stream: the frame stream stays the same for any occluder value
        occluder = _unit_rows(np.random.default_rng([config.seed, 1]).standard_normal((1, config.dim)))[0]
        pool = pool + config.occluder * occluder
    return pool


def synth_tracks(config: SynthConfig):
    """Generate (entries, matrices) in memory; paths are relative `features/<id>.trkf`."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    prototypes = _unit_rows(rng.standard_normal((config.identities, config.dim)))
    pool = distractor_pool(config, _unit_rows(rng.standard_normal((config.distractors, config.dim))))

    entries: List[ManifestEntry] = []
    matrices: List[np.ndarray] = []
    for i in range(config.identities):
        session = f"s{i % config.sessions}"
        for k in range(config.tracks_per_identity):
            noise = rng.normal(0.0, config.noise, size=(config.frames, config.dim))
            frames = _unit_rows(prototypes[i] + noise)
            corrupted = rng.random(config.frames) < config.corruption
            picks = rng.integers(0, config.distractors, size=config.frames)
            frames[corrupted] = pool[picks[corrupted]]

            track_id = f"{session}-id{i:04d}-t{k}"
            entries.append(
                ManifestEntry(
                    track_id=track_id,
                    identity=f"id{i:04d}",
                    session=session,
                    camera=_CAMERAS[k % len(_CAMERAS)],
                    video=f"{session}-v{k}",
                    path=f"features/{track_id}.trkf",
                    frames=config.frames,
                    corrupted_frames=[int(t) for t in np.flatnonzero(corrupted)],
                )
            )
            # round to storage precision so in-memory and on-disk corpora agree
            matrices.append(frames.astype(np.float32).astype(np.float64))
    return entries, matrices


def synth_generate(config: SynthConfig, out_dir: Union[str, Path]) -> List[ManifestEntry]:
    """Write the corpus (feature files + manifest.jsonl) under `out_dir`."""
    out_dir = Path(out_dir)
    entries, matrices = synth_tracks(config)
    for entry, matrix in zip(entries, matrices):
        write_features(out_dir / entry.path, matrix)
    write_manifest(out_dir / MANIFEST_NAME, entries)
    logger.info(
        "synthetic corpus written dir=%s tracks=%d identities=%d dim=%d distractor_scale=%g occluder=%g",
        out_dir,
        len(entries),
        config.identities,
        config.dim,
        config.distractor_scale,
        config.occluder,
    )
    return entries
