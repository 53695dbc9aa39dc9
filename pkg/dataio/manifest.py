"""Track manifest: one JSON object per line describing a cached track."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple, Union

from pydantic import BaseModel, ValidationError, field_validator

from shared.errors import DuplicateTrackError, ManifestError

CAMERAS = ("left", "center", "right", "other")


class ManifestEntry(BaseModel):
    track_id: str
    identity: str
    session: str
    camera: str
    video: str
    path: str
    frames: int
    # source-frame indices replaced by distractors (synthetic corpora only)
    corrupted_frames: Optional[List[int]] = None

    @field_validator("track_id", "identity", "session", "video", "path")
    @classmethod
    def not_empty(cls, v):
        if not v:
            raise ValueError("must be a non-empty string")
        return v

    @field_validator("camera")
    @classmethod
    def validate_camera(cls, v):
        if v not in CAMERAS:
            raise ValueError(f"camera must be one of {', '.join(CAMERAS)}")
        return v

    @field_validator("frames")
    @classmethod
    def validate_frames(cls, v):
        if v < 1:
            raise ValueError("frames must be >= 1")
        return v

    def resolve_path(self, root: Path) -> Path:
        p = Path(self.path)
        return p if p.is_absolute() else root / p


def load_manifest(path: Union[str, Path], *, check_files: bool = True) -> List[ManifestEntry]:
    """Parse and validate a JSON-lines manifest.

    Blank lines are skipped. Feature paths are resolved against the manifest's
    directory; with `check_files` every referenced file must exist.
    """
    path = Path(path)
    root = path.parent
    entries: List[ManifestEntry] = []
    seen: dict[str, int] = {}
    with open(path, "rb") as f:
        for lineno, raw in enumerate(f, start=1):
            try:
                line = raw.decode("utf-8")
            except UnicodeDecodeError as e:
                raise ManifestError(f"invalid UTF-8 at byte {e.start}", lineno, str(path))
            if not line.strip():
                continue
            try:
                entry = ManifestEntry.model_validate(json.loads(line))
            except json.JSONDecodeError as e:
                raise ManifestError(f"malformed JSON ({e.msg})", lineno, str(path))
            except ValidationError as e:
                first = e.errors()[0]
                field = ".".join(str(p) for p in first.get("loc", ())) or "entry"
                raise ManifestError(f"invalid {field}: {first.get('msg')}", lineno, str(path))
            if entry.track_id in seen:
                raise DuplicateTrackError(entry.track_id, lineno, str(path))
            seen[entry.track_id] = lineno
            if check_files and not entry.resolve_path(root).exists():
                raise ManifestError(
                    f"feature file not found for {entry.track_id!r}: {entry.resolve_path(root)}",
                    lineno,
                    str(path),
                )
            entries.append(entry)
    return entries


def write_manifest(path: Union[str, Path], entries: Iterable[ManifestEntry]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for entry in entries:
            f.write(json.dumps(entry.model_dump(exclude_none=True), sort_keys=True))
            f.write("\n")


def split_by_sessions(
    entries: Sequence[ManifestEntry], held_out: Iterable[str]
) -> Tuple[List[ManifestEntry], List[ManifestEntry]]:
    """Partition entries into (kept, held_out) by session name."""
    held = set(held_out)
    kept = [e for e in entries if e.session not in held]
    out = [e for e in entries if e.session in held]
    return kept, out


def filter_sessions(entries: Sequence[ManifestEntry], sessions: Optional[Iterable[str]]) -> List[ManifestEntry]:
    if not sessions:
        return list(entries)
    return split_by_sessions(entries, sessions)[1]
