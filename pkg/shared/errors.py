"""Exception hierarchy shared by every track-reid package."""
from __future__ import annotations

from typing import Optional


class TrackReidError(Exception):
    """Base class for all errors raised by track-reid."""


class ShapeError(TrackReidError, ValueError):
    """Array shapes do not agree with each other or with declared dims."""


class NonFiniteError(TrackReidError, ValueError):
    """An input array contains NaN or Inf."""


class ConfigError(TrackReidError, ValueError):
    """A configuration value violates its invariant."""


# ---- feature files ----
class FeatureFileError(TrackReidError):
    """Base for feature-file decoding failures."""

    def __init__(self, message: str, path: Optional[str] = None):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


class BadMagicError(FeatureFileError):
    pass


class VersionMismatchError(FeatureFileError):
    pass


class TruncatedFileError(FeatureFileError):
    pass


# ---- manifests ----
class ManifestError(TrackReidError):
    def __init__(self, message: str, line_number: Optional[int] = None, path: Optional[str] = None):
        where = ":".join(str(p) for p in (path, line_number) if p is not None)
        super().__init__(f"{where}: {message}" if where else message)
        self.line_number = line_number
        self.path = path


class DuplicateTrackError(ManifestError):
    def __init__(self, track_id: str, line_number: Optional[int] = None, path: Optional[str] = None):
        super().__init__(f"duplicate track_id {track_id!r}", line_number, path)
        self.track_id = track_id


class UnknownTrackError(TrackReidError, KeyError):
    def __init__(self, track_id: str):
        super().__init__(track_id)
        self.track_id = track_id

    def __str__(self) -> str:
        return f"unknown track_id {self.track_id!r}"


class CheckpointError(TrackReidError):
    pass


class ProtocolError(TrackReidError):
    pass


class TrainingError(TrackReidError):
    pass


class NonFiniteGradientError(TrainingError):
    def __init__(self, name: str):
        super().__init__(f"non-finite gradient for parameter {name!r}")
        self.name = name
