"""
Siamese contrastive training of the aggregator and the metric.

Both branches of a pair run through the same AggregatorParams; gradients
from the two branches are summed into the shared arrays. Each epoch:
embed all tracks with the parameters frozen at epoch start, mine the
hardest negatives for every positive pair, shuffle positives + negatives
with a (seed, epoch)-seeded generator, then take one Adam step per batch
on the batch-mean loss.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from reid.aggregation import AggregatorParams, AggregatorVariant, aggregate, aggregate_backward, embedding_dim
from reid.evaluation import EvalCase, build_protocol
from reid.metrics import (
    MetricKind,
    MetricParams,
    distances_to,
    mahalanobis_regularizer,
    metric_grad,
    project_nonnegative,
)
from reid.model import Model
from reid.optim import Adam
from shared.config import CONFIG, resolve_layers
from shared.errors import ConfigError, NonFiniteGradientError, TrainingError
from shared.logging_utils import get_logger

logger = get_logger("reid")

EUCLIDEAN_LR = 1e-5
# "1e-4.4" read as 10^-4.4
LEARNED_METRIC_LR = 10.0**-4.4


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    # None: 1e-5 for euclidean, 10^-4.4 for learned metrics
    learning_rate: Optional[float] = None
    margin: float = 2.0
    time_samples: int = 16
    embedding_dim: int = 128
    metric: str = MetricKind.EUCLIDEAN.value
    variant: str = AggregatorVariant.FULL.value
    reg_lambda: float = 0.01
    seed: int = CONFIG.default_seed
    hard_negatives_per_positive: int = 1
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    @property
    def effective_learning_rate(self) -> float:
        if self.learning_rate is not None:
            return self.learning_rate
        return EUCLIDEAN_LR if self.metric == MetricKind.EUCLIDEAN.value else LEARNED_METRIC_LR

    def validate(self) -> None:
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.margin <= 0:
            raise ConfigError("margin must be > 0")
        if self.time_samples < 1:
            raise ConfigError("time_samples must be >= 1")
        if self.embedding_dim < 1:
            raise ConfigError("embedding_dim must be >= 1")
        if self.learning_rate is not None and self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if self.hard_negatives_per_positive < 1:
            raise ConfigError("hard_negatives_per_positive must be >= 1")
        if self.reg_lambda < 0:
            raise ConfigError("reg_lambda must be >= 0")
        try:
            MetricKind(self.metric)
        except ValueError:
            raise ConfigError(f"unknown metric {self.metric!r}")
        try:
            AggregatorVariant(self.variant)
        except ValueError:
            raise ConfigError(f"unknown variant {self.variant!r}")


def resolve_train_config(
    file_values: Optional[Dict[str, Any]] = None,
    overrides: Optional[Dict[str, Any]] = None,
) -> TrainConfig:
    """defaults < config file < flags; unknown keys raise ConfigError."""
    return resolve_layers(TrainConfig, file_values, overrides)


@dataclass(frozen=True)
class PairSample:
    query: str
    gallery: str
    label: int
    # candidate negatives for a positive pair (protocol negatives of the case)
    candidates: Tuple[str, ...] = ()


@dataclass
class EpochStats:
    epoch: int
    mean_loss: float
    mean_pos_d: float
    mean_neg_d: float
    regularizer: float = 0.0
    aborted: bool = False


@dataclass
class ModelCheckpoint:
    model: Model
    config: TrainConfig
    epoch: int = 0
    optimizer: Adam = field(default_factory=Adam)


@dataclass
class TrainResult:
    checkpoint: ModelCheckpoint
    history: List[EpochStats]


# ---- loss ----
def contrastive_loss(d: float, y: int, margin: float) -> float:
    """y d^2 + (1 - y) max(margin - d, 0)^2."""
    if d < 0:
        raise ValueError(f"distance must be >= 0, got {d}")
    if margin <= 0:
        raise ValueError(f"margin must be > 0, got {margin}")
    if y == 1:
        return d * d
    hinge = max(margin - d, 0.0)
    return hinge * hinge


def contrastive_loss_grad(d: float, y: int, margin: float) -> float:
    """dL/dd; 0 at the hinge kink d == margin."""
    if y == 1:
        return 2.0 * d
    return -2.0 * max(margin - d, 0.0)


# ---- initialization ----
def init_params(
    seed: int,
    n_features: int,
    m_dim: int,
    kind: MetricKind,
    variant: AggregatorVariant = AggregatorVariant.FULL,
) -> Tuple[AggregatorParams, MetricParams]:
    """Fan-in scaled normal weights, zero bias, w ~ N(1, 0.1) clipped, W ~ I + N(0, 0.01)."""
    if n_features < 1 or m_dim < 1:
        raise ConfigError("feature and embedding dimensions must be >= 1")
    variant = AggregatorVariant(variant)
    kind = MetricKind(kind)
    rng = np.random.default_rng(seed)
    agg = AggregatorParams()
    if variant.projects:
        agg.W1 = rng.normal(0.0, 1.0 / np.sqrt(n_features), size=(m_dim, n_features))
        agg.b1 = np.zeros(m_dim)
    D = embedding_dim(variant, n_features, m_dim)
    if variant.attends:
        agg.W2 = rng.normal(0.0, 1.0 / np.sqrt(2 * D), size=(D, 2 * D))

    if kind is MetricKind.WEIGHTED_EUCLIDEAN:
        metric = MetricParams(kind, D, w=project_nonnegative(rng.normal(1.0, 0.1, size=D)))
    elif kind is MetricKind.MAHALANOBIS:
        metric = MetricParams(kind, D, W=np.eye(D) + rng.normal(0.0, 0.01, size=(D, D)))
    else:
        metric = MetricParams.euclidean(D)
    return agg, metric


# ---- pairs ----
def positives_from_protocol(cases: Sequence[EvalCase]) -> List[PairSample]:
    return [PairSample(c.query, c.positive, 1, c.negatives) for c in cases]


def mine_hard_negatives(
    embeddings: Dict[str, np.ndarray],
    positives: Sequence[PairSample],
    metric: MetricParams,
    per_positive: int = 1,
) -> List[PairSample]:
    """The `per_positive` closest candidate negatives to each positive's query."""
    mined: List[PairSample] = []
    for pair in positives:
        if not pair.candidates:
            logger.warning("positive pair without negatives skipped query=%s positive=%s", pair.query, pair.gallery)
            continue
        ids = list(pair.candidates)
        d = distances_to(embeddings[pair.query], np.stack([embeddings[c] for c in ids]), metric)
        order = sorted(range(len(ids)), key=lambda i: (d[i], ids[i]))
        for i in order[:per_positive]:
            mined.append(PairSample(pair.query, ids[i], 0))
    return mined


def pair_loss_and_grads(
    model: Model,
    Xq: np.ndarray,
    Xg: np.ndarray,
    label: int,
    margin: float,
) -> Tuple[float, float, Dict[str, np.ndarray]]:
    """Loss, distance and parameter gradients for one pair through both branches."""
    fq, tape_q = aggregate(Xq, model.aggregator, model.variant)
    fg, tape_g = aggregate(Xg, model.aggregator, model.variant)
    d, mg = metric_grad(fq.vector, fg.vector, model.metric)
    loss = contrastive_loss(d, label, margin)
    dL = contrastive_loss_grad(d, label, margin)

    grads: Dict[str, np.ndarray] = {}
    if model.aggregator.arrays():
        gq = aggregate_backward(tape_q, Xq, model.aggregator, dL * mg.du).params()
        gg = aggregate_backward(tape_g, Xg, model.aggregator, dL * mg.dv).params()
        for name in gq:
            grads[name] = gq[name] + gg[name]
    for name, value in mg.dparams.items():
        grads[name] = dL * value
    return loss, d, grads


def adam_step(model: Model, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], optimizer: Adam) -> None:
    """Adam update followed by the non-negativity projection of w."""
    optimizer.step(params, grads)
    if model.metric.kind is MetricKind.WEIGHTED_EUCLIDEAN:
        np.maximum(model.metric.w, 0.0, out=model.metric.w)


def _embedding_table(model: Model, dataset, threads: int) -> Dict[str, np.ndarray]:
    embedded = model.embed(dataset.matrices, threads=threads)
    return {tid: emb.vector for tid, emb in zip(dataset.track_ids, embedded)}


def train(
    dataset,
    config: TrainConfig,
    protocol: Optional[Sequence[EvalCase]] = None,
    resume: Optional[ModelCheckpoint] = None,
    threads: int = 1,
    on_epoch: Optional[Callable[[EpochStats], None]] = None,
) -> TrainResult:
    """Train on `dataset` (a TrackDataset) and return the final checkpoint + history."""
    config.validate()
    if len(dataset) == 0:
        raise TrainingError("cannot train on an empty dataset")
    variant = AggregatorVariant(config.variant)
    kind = MetricKind(config.metric)
    n_features = dataset.feature_dim

    if resume is not None:
        checkpoint = resume
        model = resume.model
        if model.variant is not variant or model.metric.kind is not kind:
            raise TrainingError(
                f"checkpoint holds {model.variant.value}/{model.metric.kind.value}, "
                f"config asks for {variant.value}/{kind.value}"
            )
        if model.input_dim != n_features:
            raise TrainingError(f"checkpoint expects N={model.input_dim}, dataset has N={n_features}")
        checkpoint.config = config
        if checkpoint.optimizer.lr != config.effective_learning_rate:
            logger.info(
                "resume learning rate changed from=%.3g to=%.3g",
                checkpoint.optimizer.lr,
                config.effective_learning_rate,
            )
        # moments carry over; the step size follows the config being run
        checkpoint.optimizer.lr = config.effective_learning_rate
    else:
        agg, metric = init_params(config.seed, n_features, config.embedding_dim, kind, variant)
        model = Model(agg, metric, variant)
        optimizer = Adam(config.effective_learning_rate, config.beta1, config.beta2, config.adam_eps)
        checkpoint = ModelCheckpoint(model, config, 0, optimizer)

    if protocol is None:
        protocol = build_protocol(dataset.entries)
    positives = positives_from_protocol(protocol)
    if not positives:
        raise TrainingError("no positive pairs: every identity needs tracks in two videos")

    params = model.parameters()
    history: List[EpochStats] = []
    if not params:
        logger.warning("nothing to train variant=%s metric=%s", variant.value, kind.value)
        return TrainResult(checkpoint, history)

    adam = checkpoint.optimizer
    logger.info(
        "training start variant=%s metric=%s epochs=%d positives=%d lr=%.3g",
        variant.value,
        kind.value,
        config.epochs,
        len(positives),
        adam.lr,
    )
    for epoch in range(checkpoint.epoch, config.epochs):
        table = _embedding_table(model, dataset, threads)
        negatives = mine_hard_negatives(table, positives, model.metric, config.hard_negatives_per_positive)
        pairs = positives + negatives
        order = np.random.default_rng([config.seed, epoch]).permutation(len(pairs))

        loss_sum, reg_sum, steps = 0.0, 0.0, 0
        pos_d, neg_d = [], []
        aborted = False
        try:
            for start in range(0, len(order), config.batch_size):
                batch = [pairs[i] for i in order[start : start + config.batch_size]]
                grads = {k: np.zeros_like(v) for k, v in params.items()}
                for pair in batch:
                    loss, d, g = pair_loss_and_grads(
                        model,
                        dataset.matrix(pair.query),
                        dataset.matrix(pair.gallery),
                        pair.label,
                        config.margin,
                    )
                    loss_sum += loss
                    (pos_d if pair.label == 1 else neg_d).append(d)
                    for name, value in g.items():
                        grads[name] += value
                scale = 1.0 / len(batch)
                for name in grads:
                    grads[name] *= scale
                if kind is MetricKind.MAHALANOBIS:
                    penalty, dW = mahalanobis_regularizer(model.metric.W, config.reg_lambda)
                    grads["W"] += dW
                    reg_sum += penalty
                adam_step(model, params, grads, adam)
                steps += 1
        except NonFiniteGradientError as e:
            logger.error("epoch aborted epoch=%d step=%d reason=%s", epoch + 1, steps, e)
            aborted = True

        n_pairs = len(pos_d) + len(neg_d)
        stats = EpochStats(
            epoch=epoch + 1,
            mean_loss=loss_sum / n_pairs if n_pairs else 0.0,
            mean_pos_d=float(np.mean(pos_d)) if pos_d else 0.0,
            mean_neg_d=float(np.mean(neg_d)) if neg_d else 0.0,
            regularizer=reg_sum / steps if steps else 0.0,
            aborted=aborted,
        )
        history.append(stats)
        checkpoint.epoch = epoch + 1
        logger.info(
            "epoch done epoch=%d mean_loss=%.6f pos_d=%.4f neg_d=%.4f reg=%.6f",
            stats.epoch,
            stats.mean_loss,
            stats.mean_pos_d,
            stats.mean_neg_d,
            stats.regularizer,
        )
        if on_epoch is not None:
            on_epoch(stats)
    return TrainResult(checkpoint, history)


def write_history_csv(history: Sequence[EpochStats], path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "mean_loss", "mean_pos_d", "mean_neg_d", "regularizer"])
        for s in history:
            writer.writerow([s.epoch, repr(s.mean_loss), repr(s.mean_pos_d), repr(s.mean_neg_d), repr(s.regularizer)])
