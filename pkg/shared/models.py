"""
Database models for the track embedding table.
One row per track; vectors are stored as little-endian float64 bytes.
"""
from sqlalchemy import Boolean, Column, Integer, LargeBinary, String, create_engine
from sqlalchemy.orm import sessionmaker

# Compatible import for both SQLAlchemy 1.x and 2.x
try:
    from sqlalchemy.orm import declarative_base
except ImportError:
    from sqlalchemy.ext.declarative import declarative_base

Base = declarative_base()


class TrackEmbeddingRow(Base):
    """Embedding of one track: track_id, dim, vector bytes, degenerate flag"""

    __tablename__ = "track_embeddings"

    track_id = Column(String(255), primary_key=True)
    position = Column(Integer, nullable=False)  # manifest order
    dim = Column(Integer, nullable=False)
    vector = Column(LargeBinary, nullable=False)
    degenerate = Column(Boolean, default=False, nullable=False)

    def __repr__(self):
        return f"<TrackEmbeddingRow(track_id='{self.track_id}', dim={self.dim})>"


class EmbeddingMeta(Base):
    """Key/value provenance of a table (variant, metric, dimension, checkpoint)."""

    __tablename__ = "embedding_meta"

    key = Column(String(64), primary_key=True)
    value = Column(String(1024), nullable=False)

    def __repr__(self):
        return f"<EmbeddingMeta({self.key}={self.value!r})>"


# Database connection utilities
def create_database_engine(database_url: str, *, echo: bool = False):
    """Create database engine. SQLite: allow access from worker threads."""
    if database_url.startswith("sqlite"):
        return create_engine(
            database_url,
            echo=echo,
            connect_args={"check_same_thread": False},
        )
    return create_engine(database_url, echo=echo, pool_pre_ping=True)


def get_session_maker(engine):
    """Create sessionmaker for database operations"""
    return sessionmaker(bind=engine)


def init_database(database_url: str):
    """Initialize database with all tables"""
    engine = create_database_engine(database_url, echo=False)
    Base.metadata.create_all(engine)
    return engine, get_session_maker(engine)
