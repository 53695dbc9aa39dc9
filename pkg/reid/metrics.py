"""
Distances between track embeddings and their gradients.

euclidean           sqrt(sum (u-v)^2)
weighted_euclidean  sqrt(sum w_i (u_i-v_i)^2), w >= 0, O(D)
mahalanobis         ||W^T (u-v)||, the factored form of (u-v)^T W W^T (u-v)

All three are evaluated as sqrt(sum(z * z)) on a transformed difference so
that w = 1 and W = I reproduce the Euclidean value bit for bit.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from shared.errors import ShapeError
from shared.logging_utils import get_logger

logger = get_logger("reid")

# below this distance the gradient is defined as zero
GRAD_EPS = 1e-8


class MetricKind(str, enum.Enum):
    EUCLIDEAN = "euclidean"
    WEIGHTED_EUCLIDEAN = "weighted_euclidean"
    MAHALANOBIS = "mahalanobis"


@dataclass
class MetricParams:
    kind: MetricKind
    dim: int
    w: Optional[np.ndarray] = None
    W: Optional[np.ndarray] = None

    def __post_init__(self):
        self.kind = MetricKind(self.kind)
        if self.kind is MetricKind.WEIGHTED_EUCLIDEAN:
            if self.w is None or self.w.shape != (self.dim,):
                raise ShapeError(f"w must have shape ({self.dim},)")
            if np.any(self.w < 0):
                raise ValueError("weighted euclidean weights must be non-negative")
        if self.kind is MetricKind.MAHALANOBIS:
            if self.W is None or self.W.shape != (self.dim, self.dim):
                raise ShapeError(f"W must have shape ({self.dim}, {self.dim})")

    @classmethod
    def euclidean(cls, dim: int) -> "MetricParams":
        return cls(MetricKind.EUCLIDEAN, dim)

    def arrays(self) -> Dict[str, np.ndarray]:
        if self.kind is MetricKind.WEIGHTED_EUCLIDEAN:
            return {"w": self.w}
        if self.kind is MetricKind.MAHALANOBIS:
            return {"W": self.W}
        return {}


def _delta(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape or u.ndim != 1:
        raise ShapeError(f"vectors must have equal 1-D shapes, got {u.shape} and {v.shape}")
    return u - v


def euclidean(u: np.ndarray, v: np.ndarray) -> float:
    delta = _delta(u, v)
    return float(np.sqrt(np.sum(delta * delta)))


def weighted_euclidean(u: np.ndarray, v: np.ndarray, w: np.ndarray) -> float:
    delta = _delta(u, v)
    w = np.asarray(w, dtype=np.float64)
    if w.shape != delta.shape:
        raise ShapeError(f"weight shape {w.shape} != vector shape {delta.shape}")
    if np.any(w < 0):
        raise ValueError("weighted euclidean weights must be non-negative")
    return float(np.sqrt(np.sum(w * delta * delta)))


def mahalanobis_factored(u: np.ndarray, v: np.ndarray, W: np.ndarray) -> float:
    delta = _delta(u, v)
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2 or W.shape[0] != delta.shape[0]:
        raise ShapeError(f"W shape {W.shape} incompatible with dimension {delta.shape[0]}")
    z = W.T @ delta
    return float(np.sqrt(np.sum(z * z)))


def distance(u: np.ndarray, v: np.ndarray, params: MetricParams) -> float:
    if params.kind is MetricKind.WEIGHTED_EUCLIDEAN:
        return weighted_euclidean(u, v, params.w)
    if params.kind is MetricKind.MAHALANOBIS:
        return mahalanobis_factored(u, v, params.W)
    return euclidean(u, v)


def distances_to(query: np.ndarray, gallery: np.ndarray, params: MetricParams) -> np.ndarray:
    """Distances from one query (D) to every row of gallery (G x D)."""
    query = np.asarray(query, dtype=np.float64)
    gallery = np.asarray(gallery, dtype=np.float64)
    if gallery.ndim != 2 or gallery.shape[1] != query.shape[0]:
        raise ShapeError(f"gallery shape {gallery.shape} incompatible with query {query.shape}")
    delta = gallery - query
    if params.kind is MetricKind.WEIGHTED_EUCLIDEAN:
        sq = np.sum(params.w * delta * delta, axis=1)
    elif params.kind is MetricKind.MAHALANOBIS:
        z = delta @ params.W
        sq = np.sum(z * z, axis=1)
    else:
        sq = np.sum(delta * delta, axis=1)
    return np.sqrt(sq)


@dataclass
class MetricGrads:
    du: np.ndarray
    dv: np.ndarray
    dparams: Dict[str, np.ndarray]


def metric_grad(u: np.ndarray, v: np.ndarray, params: MetricParams) -> Tuple[float, MetricGrads]:
    """Distance and its gradient w.r.t. u, v and the metric parameters."""
    delta = _delta(u, v)
    d = distance(u, v, params)
    zero_params = {k: np.zeros_like(a) for k, a in params.arrays().items()}
    if d <= GRAD_EPS:
        return d, MetricGrads(np.zeros_like(delta), np.zeros_like(delta), zero_params)

    if params.kind is MetricKind.WEIGHTED_EUCLIDEAN:
        du = params.w * delta / d
        dparams = {"w": delta * delta / (2.0 * d)}
    elif params.kind is MetricKind.MAHALANOBIS:
        z = params.W.T @ delta
        du = params.W @ z / d
        dparams = {"W": np.outer(delta, z) / d}
    else:
        du = delta / d
        dparams = {}
    return d, MetricGrads(du=du, dv=-du, dparams=dparams)


def project_nonnegative(w: np.ndarray) -> np.ndarray:
    """Clip weights below zero (applied after every update)."""
    return np.maximum(np.asarray(w, dtype=np.float64), 0.0)


def mahalanobis_regularizer(W: np.ndarray, lam: float) -> Tuple[float, np.ndarray]:
    """0.5 * lam * ||W W^T - I||_F^2 and its gradient 2 lam (W W^T - I) W."""
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise ShapeError(f"regularizer needs a square matrix, got {W.shape}")
    R = W @ W.T - np.eye(W.shape[0])
    penalty = 0.5 * lam * float(np.sum(R * R))
    return penalty, 2.0 * lam * (R @ W)


def diag_dominance(M: np.ndarray) -> Tuple[float, bool]:
    """tr(|M|) / sum(|M|). Returns (ratio, degenerate); all-zero M gives (0.0, True)."""
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ShapeError(f"diag dominance needs a square matrix, got {M.shape}")
    absM = np.abs(M)
    total = float(absM.sum())
    if total == 0.0:
        logger.warning("diag dominance of an all-zero matrix dim=%d", M.shape[0])
        return 0.0, True
    return float(np.trace(absM)) / total, False
