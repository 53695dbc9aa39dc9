"""
Design-choice comparisons on one corpus.

Every run trains on the training sessions and is evaluated on the held-out
sessions (or on the training sessions when nothing is held out). The
random-split runs instead halve the identities at random several times and
average. Results are rows of mAP and Hit@{1,5,10,20}, written as JSON and CSV.
"""
from __future__ import annotations

import csv
import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel

from dataio.dataset import TrackDataset
from dataio.manifest import split_by_sessions
from reid.aggregation import AggregatorVariant, aggregate
from reid.evaluation import REPORT_RANKS, EvalReport, build_protocol, evaluate
from reid.metrics import MetricKind
from reid.model import Model
from reid.training import TrainConfig, train
from shared.errors import ConfigError, ProtocolError
from shared.logging_utils import get_logger

logger = get_logger("reid")

ABLATION_VARIANTS = (
    AggregatorVariant.AVG,
    AggregatorVariant.PROJECT_ONLY,
    AggregatorVariant.ATTENTION_ONLY,
    AggregatorVariant.FULL,
)
COMPARED_METRICS = (MetricKind.EUCLIDEAN, MetricKind.WEIGHTED_EUCLIDEAN, MetricKind.MAHALANOBIS)
SWEEP_DIMS = (8, 32, 128)
RANDOM_SPLITS = 10
LR_CANDIDATES = (1e-5, 1e-4, 1e-3)


class ExperimentRow(BaseModel):
    name: str
    variant: str
    metric: str
    embedding_dim: int
    mAP: float
    hit_at: Dict[int, float]
    final_loss: Optional[float] = None


class CorruptionStats(BaseModel):
    corrupted_mean: float
    clean_mean: float
    # (clean - corrupted) / clean
    relative_gap: float
    corrupted_frames: int
    clean_frames: int


@dataclass
class Split:
    train: TrackDataset
    test: TrackDataset


def _subset(dataset: TrackDataset, keep: Sequence[str]) -> TrackDataset:
    idx = [dataset.index_of(t) for t in keep]
    return TrackDataset(
        [dataset.entries[i] for i in idx],
        [dataset.matrices[i] for i in idx],
        [dataset.source_indices[i] for i in idx],
    )


def split_dataset(dataset: TrackDataset, held_out: Sequence[str] = ()) -> Split:
    """Partition by session; an empty `held_out` trains and tests on everything."""
    if not held_out:
        return Split(dataset, dataset)
    kept, out = split_by_sessions(dataset.entries, held_out)
    if not kept or not out:
        raise ProtocolError(f"session split {list(held_out)} leaves an empty side")
    return Split(_subset(dataset, [e.track_id for e in kept]), _subset(dataset, [e.track_id for e in out]))


def identity_halves(dataset: TrackDataset, seed: Union[int, Sequence[int]]) -> Split:
    """Random split of the identities: half train, the rest test."""
    identities = sorted({e.identity for e in dataset.entries})
    if len(identities) < 2:
        raise ProtocolError(f"need at least two identities to split, got {len(identities)}")
    order = np.random.default_rng(seed).permutation(len(identities))
    train_ids = {identities[i] for i in order[: len(identities) // 2]}
    train_tracks = [e.track_id for e in dataset.entries if e.identity in train_ids]
    test_tracks = [e.track_id for e in dataset.entries if e.identity not in train_ids]
    return Split(_subset(dataset, train_tracks), _subset(dataset, test_tracks))


def random_identity_splits(dataset: TrackDataset, n_splits: int = RANDOM_SPLITS, seed: int = 0) -> List[Split]:
    if n_splits < 1:
        raise ConfigError(f"number of splits must be >= 1, got {n_splits}")
    return [identity_halves(dataset, [seed, i]) for i in range(n_splits)]


def mean_row(name: str, rows: Sequence[ExperimentRow]) -> ExperimentRow:
    """Average mAP, Hit@R and final loss over runs of one configuration."""
    losses = [r.final_loss for r in rows if r.final_loss is not None]
    return ExperimentRow(
        name=name,
        variant=rows[0].variant,
        metric=rows[0].metric,
        embedding_dim=rows[0].embedding_dim,
        mAP=float(np.mean([r.mAP for r in rows])),
        hit_at={k: float(np.mean([r.hit_at[k] for r in rows])) for k in REPORT_RANKS},
        final_loss=float(np.mean(losses)) if losses else None,
    )


def train_and_evaluate(
    name: str,
    split: Split,
    config: TrainConfig,
    threads: int = 1,
) -> Tuple[Model, ExperimentRow, EvalReport]:
    result = train(split.train, config, threads=threads)
    model = result.checkpoint.model
    report = evaluate(model, split.test, build_protocol(split.test.entries), threads)
    row = ExperimentRow(
        name=name,
        variant=config.variant,
        metric=config.metric,
        embedding_dim=model.metric.dim,
        mAP=report.mAP,
        hit_at=report.hit_at,
        final_loss=result.history[-1].mean_loss if result.history else None,
    )
    logger.info("experiment run done name=%s mAP=%.4f hit1=%.4f", name, row.mAP, row.hit_at[1])
    return model, row, report


def ablation_runs(split: Split, base: TrainConfig, threads: int = 1) -> List[Tuple[Model, ExperimentRow]]:
    """The four aggregator variants under the base config's metric, with their models."""
    runs = []
    for variant in ABLATION_VARIANTS:
        config = dataclasses.replace(base, variant=variant.value)
        model, row, _ = train_and_evaluate(variant.value, split, config, threads)
        runs.append((model, row))
    return runs


def run_ablation(split: Split, base: TrainConfig, threads: int = 1) -> List[ExperimentRow]:
    return [row for _, row in ablation_runs(split, base, threads)]


def run_metric_comparison(
    split: Split,
    base: TrainConfig,
    threads: int = 1,
    metrics: Sequence[MetricKind] = COMPARED_METRICS,
) -> List[ExperimentRow]:
    """Full aggregator with each metric; the learning rate follows the metric unless set."""
    rows = []
    for kind in metrics:
        kind = MetricKind(kind)
        config = dataclasses.replace(base, variant=AggregatorVariant.FULL.value, metric=kind.value)
        rows.append(train_and_evaluate(kind.value, split, config, threads)[1])
    return rows


def run_dimension_sweep(
    split: Split,
    base: TrainConfig,
    dims: Sequence[int] = SWEEP_DIMS,
    threads: int = 1,
) -> List[ExperimentRow]:
    rows = []
    for m in dims:
        config = dataclasses.replace(base, variant=AggregatorVariant.FULL.value, embedding_dim=int(m))
        rows.append(train_and_evaluate(f"M={m}", split, config, threads)[1])
    return rows


def run_random_splits(
    dataset: TrackDataset,
    base: TrainConfig,
    n_splits: int = RANDOM_SPLITS,
    threads: int = 1,
) -> List[ExperimentRow]:
    """Train and test on `n_splits` random identity halves; the last row is their mean."""
    rows = []
    for i, split in enumerate(random_identity_splits(dataset, n_splits, base.seed)):
        rows.append(train_and_evaluate(f"split{i:02d}", split, base, threads)[1])
    return rows + [mean_row("mean", rows)]


def select_learning_rate(
    dataset: TrackDataset,
    base: TrainConfig,
    candidates: Sequence[float] = LR_CANDIDATES,
    threads: int = 1,
) -> Tuple[float, List[ExperimentRow]]:
    """Pick the candidate with the best mAP on a held-out identity half of `dataset`.

    Ties go to the earlier candidate. Returns the rate and one row per candidate.
    """
    if not candidates:
        raise ConfigError("no learning rate candidates")
    split = identity_halves(dataset, [base.seed, len(candidates)])
    rows = []
    for lr in candidates:
        config = dataclasses.replace(base, learning_rate=float(lr))
        rows.append(train_and_evaluate(f"lr={lr:g}", split, config, threads)[1])
    best = max(range(len(rows)), key=lambda i: (rows[i].mAP, -i))
    logger.info("learning rate selected lr=%g mAP=%.4f", candidates[best], rows[best].mAP)
    return float(candidates[best]), rows


def frame_weights(model: Model, matrix: np.ndarray) -> np.ndarray:
    """Per-frame mean attention weight (mean over embedding components)."""
    _, tape = aggregate(matrix, model.aggregator, model.variant)
    return tape.E.mean(axis=1)


def attention_corruption_stats(model: Model, dataset: TrackDataset) -> Optional[CorruptionStats]:
    """Mean frame weight of corrupted vs clean sampled frames; None without ground truth."""
    corrupted, clean = [], []
    for track_id, matrix in zip(dataset.track_ids, dataset.matrices):
        mask = dataset.corrupted_mask(track_id)
        if mask is None:
            continue
        weights = frame_weights(model, matrix)
        corrupted.extend(weights[mask])
        clean.extend(weights[~mask])
    if not corrupted or not clean:
        logger.warning("no corrupted/clean frame split available in dataset tracks=%d", len(dataset))
        return None
    corrupted_mean = float(np.mean(corrupted))
    clean_mean = float(np.mean(clean))
    return CorruptionStats(
        corrupted_mean=corrupted_mean,
        clean_mean=clean_mean,
        relative_gap=(clean_mean - corrupted_mean) / clean_mean,
        corrupted_frames=len(corrupted),
        clean_frames=len(clean),
    )


def write_rows(rows: Sequence[ExperimentRow], out_dir: Path, name: str) -> Tuple[Path, Path]:
    """`<name>.json` (full rows) and `<name>.csv` (one line per row)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    json_path = out_dir / f"{name}.json"
    with open(json_path, "w", encoding="utf-8") as f:
        json.dump([json.loads(r.model_dump_json()) for r in rows], f, indent=2, sort_keys=True)
        f.write("\n")
    csv_path = out_dir / f"{name}.csv"
    with open(csv_path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["name", "variant", "metric", "embedding_dim", "mAP"] + [f"hit@{k}" for k in REPORT_RANKS])
        for r in rows:
            writer.writerow(
                [r.name, r.variant, r.metric, r.embedding_dim, repr(r.mAP)] + [repr(r.hit_at[k]) for k in REPORT_RANKS]
            )
    return json_path, csv_path
