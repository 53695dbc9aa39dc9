"""Embedding-table helpers on top of the SQLAlchemy models."""
from __future__ import annotations

from contextlib import contextmanager
from pathlib import Path
from typing import Dict, List, Mapping, Sequence, Tuple, Union

import numpy as np

from shared.errors import TrackReidError
from shared.models import EmbeddingMeta, TrackEmbeddingRow, init_database


def sqlite_url(path: Union[str, Path]) -> str:
    return f"sqlite:///{Path(path)}"


@contextmanager
def db_session(database_url: str):
    """Context manager yielding a SQLAlchemy session; the engine is disposed on exit."""
    engine, session_local = init_database(database_url)
    try:
        with session_local() as session:
            yield session
    finally:
        engine.dispose()


def store_embeddings(
    database_url: str,
    rows: Sequence[Tuple[str, np.ndarray, bool]],
    meta: Mapping[str, str],
) -> int:
    """Replace the table contents with `rows` = (track_id, vector, degenerate)."""
    with db_session(database_url) as db:
        db.query(TrackEmbeddingRow).delete()
        db.query(EmbeddingMeta).delete()
        for position, (track_id, vector, degenerate) in enumerate(rows):
            vec = np.asarray(vector, dtype="<f8")
            db.add(
                TrackEmbeddingRow(
                    track_id=track_id,
                    position=position,
                    dim=int(vec.shape[0]),
                    vector=vec.tobytes(),
                    degenerate=bool(degenerate),
                )
            )
        for key in sorted(meta):
            db.add(EmbeddingMeta(key=key, value=str(meta[key])))
        db.commit()
    return len(rows)


def fetch_embeddings(database_url: str) -> List[Tuple[str, np.ndarray]]:
    """All (track_id, vector) pairs in manifest order."""
    with db_session(database_url) as db:
        rows = db.query(TrackEmbeddingRow).order_by(TrackEmbeddingRow.position.asc()).all()
        out = []
        for row in rows:
            vec = np.frombuffer(row.vector, dtype="<f8").astype(np.float64)
            if vec.shape[0] != row.dim:
                raise TrackReidError(f"embedding row {row.track_id!r} is corrupt")
            out.append((row.track_id, vec))
        return out


def read_meta(database_url: str) -> Dict[str, str]:
    with db_session(database_url) as db:
        return {m.key: m.value for m in db.query(EmbeddingMeta).all()}
