"""Trainable state of one aggregator + metric pair."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Sequence

import numpy as np

from reid.aggregation import AggregatorParams, AggregatorVariant, TrackEmbedding, embed_tracks
from reid.metrics import MetricParams


@dataclass
class Model:
    aggregator: AggregatorParams
    metric: MetricParams
    variant: AggregatorVariant = AggregatorVariant.FULL

    def __post_init__(self):
        self.variant = AggregatorVariant(self.variant)

    @property
    def input_dim(self) -> int:
        """Per-frame feature dimension N the model accepts."""
        if self.variant.projects:
            return self.aggregator.W1.shape[1]
        return self.metric.dim

    def parameters(self) -> Dict[str, np.ndarray]:
        """Every trainable array by name; the arrays are shared, not copied."""
        out = dict(self.aggregator.arrays())
        out.update(self.metric.arrays())
        return out

    def embed(self, matrices: Sequence[np.ndarray], threads: int = 1) -> List[TrackEmbedding]:
        return embed_tracks(matrices, self.aggregator, self.variant, threads)
