"""
Temporal feature aggregation network.

Maps a track's per-frame feature matrix X (T x N) to one unit-norm
embedding f (M):

    Y  = tanh(X W1^T + b1)              projection, T x M
    Y' = [Y, 1 mean(Y)]                 mean augmentation, T x 2M
    A  = Y' W2^T                        attention logits, T x M (no bias)
    E  = softmax over time, per column  T x M, every column sums to 1
    f  = normalize(sum_t Y[t] * E[t])

Variants used for design-choice comparisons:
    avg            - unit-normalized time mean of X, no parameters
    project_only   - projection, then uniform weights (1/T)
    attention_only - augmentation + attention applied to X directly
    full           - everything above

All math is float64. Sums over time use numpy's reduction along axis 0
(row-major input), so results are reproducible for a fixed thread count.
"""
from __future__ import annotations

import enum
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from shared.errors import NonFiniteError, ShapeError
from shared.logging_utils import get_logger

logger = get_logger("reid")

ArrayLike = Union[np.ndarray, "FeatureMatrix"]


class AggregatorVariant(str, enum.Enum):
    FULL = "full"
    AVG = "avg"
    PROJECT_ONLY = "project_only"
    ATTENTION_ONLY = "attention_only"

    @property
    def projects(self) -> bool:
        return self in (AggregatorVariant.FULL, AggregatorVariant.PROJECT_ONLY)

    @property
    def attends(self) -> bool:
        return self in (AggregatorVariant.FULL, AggregatorVariant.ATTENTION_ONLY)


def embedding_dim(variant: AggregatorVariant, n_features: int, m_dim: int) -> int:
    """Dimension of the embedding produced by `variant` (M or raw N)."""
    return m_dim if AggregatorVariant(variant).projects else n_features


@dataclass
class FeatureMatrix:
    """T x N per-frame features of one track (row t = frame t)."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise ShapeError(f"feature matrix must be T x N with T, N >= 1, got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise NonFiniteError("feature matrix contains non-finite values")
        self.data = data

    @property
    def T(self) -> int:
        return self.data.shape[0]

    @property
    def N(self) -> int:
        return self.data.shape[1]


@dataclass
class AggregatorParams:
    """W1 (M x N), b1 (M) and W2 (M x 2M); absent arrays are None."""

    W1: Optional[np.ndarray] = None
    b1: Optional[np.ndarray] = None
    W2: Optional[np.ndarray] = None

    def arrays(self) -> Dict[str, np.ndarray]:
        out = {}
        for name in ("W1", "b1", "W2"):
            value = getattr(self, name)
            if value is not None:
                out[name] = value
        return out

    @classmethod
    def from_arrays(cls, arrays: Dict[str, np.ndarray]) -> "AggregatorParams":
        return cls(W1=arrays.get("W1"), b1=arrays.get("b1"), W2=arrays.get("W2"))

    def check(self, variant: AggregatorVariant, n_features: int) -> None:
        """Raise ShapeError / NonFiniteError unless usable by `variant` on N-dim input."""
        variant = AggregatorVariant(variant)
        for name, value in self.arrays().items():
            if not np.all(np.isfinite(value)):
                raise NonFiniteError(f"parameter {name} contains non-finite values")
        if variant.projects:
            if self.W1 is None or self.b1 is None:
                raise ShapeError(f"variant {variant.value} needs W1 and b1")
            if self.W1.ndim != 2 or self.W1.shape[1] != n_features:
                raise ShapeError(f"W1 shape {self.W1.shape} incompatible with N={n_features}")
            if self.b1.shape != (self.W1.shape[0],):
                raise ShapeError(f"b1 shape {self.b1.shape} != ({self.W1.shape[0]},)")
        if variant.attends:
            d = self.W1.shape[0] if variant.projects else n_features
            if self.W2 is None or self.W2.shape != (d, 2 * d):
                got = None if self.W2 is None else self.W2.shape
                raise ShapeError(f"W2 shape {got} != ({d}, {2 * d})")


@dataclass
class TrackEmbedding:
    vector: np.ndarray
    # s == 0 before normalization; vector is all zeros
    degenerate: bool = False
    # ||s|| before normalization
    norm: float = 0.0


@dataclass
class AggregatorTape:
    """Intermediates of one forward call, consumed by `aggregate_backward`."""

    variant: AggregatorVariant
    Y: np.ndarray
    Yp: Optional[np.ndarray]
    A: Optional[np.ndarray]
    E: np.ndarray
    f: np.ndarray
    norm: float


@dataclass
class AggregatorGrads:
    dX: np.ndarray
    dW1: Optional[np.ndarray] = None
    db1: Optional[np.ndarray] = None
    dW2: Optional[np.ndarray] = None

    def params(self) -> Dict[str, np.ndarray]:
        out = {}
        for name in ("W1", "b1", "W2"):
            value = getattr(self, "d" + name)
            if value is not None:
                out[name] = value
        return out


def _as_array(X: ArrayLike) -> np.ndarray:
    if isinstance(X, FeatureMatrix):
        return X.data
    return FeatureMatrix(X).data


def _check_finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name} contains non-finite values")


# ---- forward pieces ----
def project_frames(X: ArrayLike, params: AggregatorParams) -> np.ndarray:
    """Y[t] = tanh(W1 x_t + b1)."""
    X = _as_array(X)
    if params.W1 is None or params.b1 is None:
        raise ShapeError("projection needs W1 and b1")
    if params.W1.ndim != 2 or params.W1.shape[1] != X.shape[1]:
        raise ShapeError(f"W1 shape {params.W1.shape} incompatible with X shape {X.shape}")
    if params.b1.shape != (params.W1.shape[0],):
        raise ShapeError(f"b1 shape {params.b1.shape} != ({params.W1.shape[0]},)")
    _check_finite("W1", params.W1)
    _check_finite("b1", params.b1)
    return np.tanh(X @ params.W1.T + params.b1)


def augment_with_mean(Y: np.ndarray) -> np.ndarray:
    """Append the track mean to every row: T x M -> T x 2M."""
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim != 2 or Y.shape[0] < 1:
        raise ShapeError(f"cannot mean-augment matrix of shape {Y.shape}")
    mean = Y.mean(axis=0)
    return np.concatenate([Y, np.broadcast_to(mean, Y.shape)], axis=1)


def attention_logits(Yp: np.ndarray, W2: np.ndarray) -> np.ndarray:
    """A[t] = W2 y'_t."""
    if W2.ndim != 2 or Yp.ndim != 2 or W2.shape[1] != Yp.shape[1]:
        raise ShapeError(f"W2 shape {W2.shape} incompatible with Y' shape {Yp.shape}")
    return Yp @ W2.T


def column_softmax(A: np.ndarray) -> np.ndarray:
    """Softmax along time (axis 0), independently for every column."""
    A = np.asarray(A, dtype=np.float64)
    _check_finite("attention logits", A)
    ex = np.exp(A - A.max(axis=0, keepdims=True))
    return ex / ex.sum(axis=0, keepdims=True)


def _normalize(s: np.ndarray) -> TrackEmbedding:
    norm = float(np.sqrt(np.dot(s, s)))
    if norm == 0.0:
        logger.warning("degenerate track embedding: pooled sum is zero dim=%d", s.shape[0])
        return TrackEmbedding(vector=np.zeros_like(s), degenerate=True)
    return TrackEmbedding(vector=s / norm, norm=norm)


def pool_and_normalize(Y: np.ndarray, E: np.ndarray) -> TrackEmbedding:
    """f = s / ||s|| with s = sum_t Y[t] * E[t]."""
    if Y.shape != E.shape:
        raise ShapeError(f"Y shape {Y.shape} != E shape {E.shape}")
    return _normalize((Y * E).sum(axis=0))


def aggregate(
    X: ArrayLike,
    params: AggregatorParams,
    variant: AggregatorVariant = AggregatorVariant.FULL,
):
    """Forward pass. Returns (TrackEmbedding, AggregatorTape)."""
    variant = AggregatorVariant(variant)
    X = _as_array(X)
    params.check(variant, X.shape[1])
    T = X.shape[0]

    Y = project_frames(X, params) if variant.projects else X
    if variant.attends:
        Yp = augment_with_mean(Y)
        A = attention_logits(Yp, params.W2)
        E = column_softmax(A)
    else:
        Yp, A = None, None
        E = np.full(Y.shape, 1.0 / T)

    emb = pool_and_normalize(Y, E)
    tape = AggregatorTape(variant=variant, Y=Y, Yp=Yp, A=A, E=E, f=emb.vector, norm=emb.norm)
    return emb, tape


def aggregate_backward(
    tape: AggregatorTape,
    X: ArrayLike,
    params: AggregatorParams,
    df: np.ndarray,
) -> AggregatorGrads:
    """Gradients of <df, f> w.r.t. X and every parameter of `tape.variant`."""
    X = _as_array(X)
    variant = tape.variant
    T, D = tape.Y.shape
    df = np.asarray(df, dtype=np.float64)
    if df.shape != (D,):
        raise ShapeError(f"df shape {df.shape} != ({D},)")
    if X.shape[0] != T or (not variant.projects and X.shape[1] != D):
        raise ShapeError(f"tape (T={T}, D={D}) does not match X shape {X.shape}")
    params.check(variant, X.shape[1])
    if variant.attends and params.W2.shape[0] != D:
        raise ShapeError("tape does not match W2")

    # normalization: J = (I - f f^T) / ||s||
    if tape.norm == 0.0:
        ds = np.zeros(D)
    else:
        ds = (df - tape.f * np.dot(tape.f, df)) / tape.norm

    grads = AggregatorGrads(dX=np.zeros_like(X))
    dY = ds * tape.E
    if variant.attends:
        dE = ds * tape.Y
        # column softmax: dA = E * (dE - sum_t E dE)
        dA = tape.E * (dE - (tape.E * dE).sum(axis=0, keepdims=True))
        grads.dW2 = dA.T @ tape.Yp
        dYp = dA @ params.W2
        dY = dY + dYp[:, :D] + dYp[:, D:].sum(axis=0) / T

    if variant.projects:
        dpre = dY * (1.0 - tape.Y * tape.Y)
        grads.dW1 = dpre.T @ X
        grads.db1 = dpre.sum(axis=0)
        grads.dX = dpre @ params.W1
    else:
        grads.dX = dY
    return grads


@dataclass
class FrameWeightStats:
    mean_weights: np.ndarray
    mean_relative_std: float


def frame_weight_stats(E: np.ndarray) -> FrameWeightStats:
    """Per-frame mean weight over components and mean relative std of rows."""
    E = np.asarray(E, dtype=np.float64)
    if E.ndim != 2 or E.shape[0] < 1 or E.shape[1] < 1:
        raise ShapeError(f"weight matrix must be T x M, got {E.shape}")
    mean_weights = E.mean(axis=1)
    nonzero = mean_weights > 0
    if not np.any(nonzero):
        return FrameWeightStats(mean_weights=mean_weights, mean_relative_std=0.0)
    rel = E[nonzero].std(axis=1) / mean_weights[nonzero]
    return FrameWeightStats(mean_weights=mean_weights, mean_relative_std=float(rel.mean()))


def embed_tracks(
    matrices: Sequence[ArrayLike],
    params: AggregatorParams,
    variant: AggregatorVariant = AggregatorVariant.FULL,
    threads: int = 1,
) -> List[TrackEmbedding]:
    """Embed many tracks; results come back in input order."""

    def _one(X):
        return aggregate(X, params, variant)[0]

    if threads <= 1 or len(matrices) < 2:
        return [_one(X) for X in matrices]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(_one, matrices))
