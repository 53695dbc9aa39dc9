"""
track-reid command line.

    python -m cli synth --out DIR
    python -m cli train --manifest M --out DIR [--config FILE] [flags]
    python -m cli embed --manifest M --checkpoint C --out DIR
    python -m cli eval --manifest M --checkpoint C --out DIR
    python -m cli search --embeddings DB --query ID [--k K]
    python -m cli diag --manifest M --checkpoint C --out DIR
    python -m cli experiment --manifest M --out DIR [--kind ablation|metrics|dims|splits|all]

Exit codes: 0 success, 1 runtime failure, 2 usage or validation failure.
Every run with --out leaves run.log and run_summary.json in that directory.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
from rich.console import Console
from rich.table import Table

from dataio.checkpoint import load_checkpoint, save_checkpoint
from dataio.dataset import TrackDataset, load_dataset
from dataio.synth import MANIFEST_NAME, SynthConfig, synth_generate
from reid.aggregation import AggregatorVariant, aggregate, frame_weight_stats
from reid.evaluation import REPORT_RANKS, EvalReport, build_protocol, evaluate, search_topk, write_report
from reid.experiments import (
    RANDOM_SPLITS,
    SWEEP_DIMS,
    ExperimentRow,
    ablation_runs,
    attention_corruption_stats,
    run_dimension_sweep,
    run_metric_comparison,
    run_random_splits,
    select_learning_rate,
    split_dataset,
    write_rows,
)
from reid.metrics import MetricKind, MetricParams, diag_dominance
from reid.model import Model
from reid.training import ModelCheckpoint, TrainConfig, resolve_train_config, train, write_history_csv
from shared.config import CONFIG, dump_config, load_config_file, resolve_layers
from shared.db import fetch_embeddings, read_meta, sqlite_url, store_embeddings
from shared.errors import (
    ConfigError,
    ManifestError,
    ProtocolError,
    ShapeError,
    TrackReidError,
    UnknownTrackError,
)
from shared.logging_utils import attach_run_log, detach_handler, get_logger
from shared.monitor import RunMonitor, write_run_summary

logger = get_logger("cli")
console = Console(stderr=True)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2

HISTOGRAM_BINS = 20
EXPERIMENT_KINDS = ("ablation", "metrics", "dims", "splits")

# flag name -> TrainConfig field
_TRAIN_FLAGS = {
    "epochs": "epochs",
    "batch_size": "batch_size",
    "learning_rate": "learning_rate",
    "margin": "margin",
    "time_samples": "time_samples",
    "embedding_dim": "embedding_dim",
    "metric": "metric",
    "variant": "variant",
    "reg_lambda": "reg_lambda",
    "seed": "seed",
    "hard_negatives": "hard_negatives_per_positive",
}


# ---- helpers ----
def _require_file(path: Optional[Path], what: str) -> Path:
    if path is None:
        raise ConfigError(f"--{what} is required")
    if not Path(path).exists():
        raise FileNotFoundError(f"{what} not found: {path}")
    return Path(path)


def _sessions(raw: Optional[str]) -> Optional[List[str]]:
    if not raw:
        return None
    return [s.strip() for s in raw.split(",") if s.strip()]


def _train_overrides(args) -> Dict[str, Any]:
    return {field: getattr(args, flag, None) for flag, field in _TRAIN_FLAGS.items()}


# fields that shape a trained model; a config file cannot change them afterwards
_MODEL_FIELDS = ("metric", "variant", "embedding_dim")


def _replay_config(args, checkpoint: ModelCheckpoint) -> TrainConfig:
    """The checkpoint's training config with --config and --seed layered on top.

    Written to the run directory; its time_samples and seed drive frame sampling.
    """
    file_values = load_config_file(args.config)
    trained = dataclasses.asdict(checkpoint.config)
    clashes = sorted(k for k in _MODEL_FIELDS if k in file_values and file_values[k] != trained[k])
    if clashes:
        raise ConfigError(f"config file changes {clashes} of the trained checkpoint")
    config = resolve_layers(TrainConfig, {**trained, **file_values}, {"seed": args.seed})
    dump_config(config, args.out / "config.resolved.json")
    return config


def _load_run_inputs(args, checkpoint: ModelCheckpoint) -> TrackDataset:
    """Load the manifest with the checkpoint's sampling settings unless overridden."""
    manifest = _require_file(args.manifest, "manifest")
    config = _replay_config(args, checkpoint)
    dataset = load_dataset(manifest, config.time_samples, config.seed, _sessions(args.sessions), args.threads)
    if len(dataset) and dataset.feature_dim != checkpoint.model.input_dim:
        raise ShapeError(
            f"checkpoint expects N={checkpoint.model.input_dim}, features in {manifest} have N={dataset.feature_dim}"
        )
    return dataset


def _write_json(obj: Any, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


def _report_table(title: str, rows: Sequence[ExperimentRow]) -> Table:
    table = Table(title=title)
    for col in ("name", "mAP", *(f"Hit@{k}" for k in REPORT_RANKS)):
        table.add_column(col, justify="right" if col != "name" else "left")
    for r in rows:
        table.add_row(r.name, f"{r.mAP:.4f}", *(f"{r.hit_at[k]:.4f}" for k in REPORT_RANKS))
    return table


def _print_report(report: EvalReport) -> None:
    table = Table(title=f"evaluation ({report.protocol.cases} cases)")
    table.add_column("metric")
    table.add_column("value", justify="right")
    table.add_row("mAP", f"{report.mAP:.4f}")
    for k in REPORT_RANKS:
        table.add_row(f"Hit@{k}", f"{report.hit_at[k]:.4f}")
    console.print(table)


# ---- subcommands ----
def cmd_synth(args) -> Dict[str, Any]:
    config = resolve_layers(
        SynthConfig,
        load_config_file(args.config),
        {
            "identities": args.identities,
            "tracks_per_identity": args.tracks_per_identity,
            "frames": args.frames,
            "dim": args.dim,
            "noise": args.noise,
            "corruption": args.corruption,
            "distractors": args.distractors,
            "sessions": args.n_sessions,
            "seed": args.seed,
            "distractor_scale": args.distractor_scale,
            "occluder": args.occluder,
        },
    )
    dump_config(config, args.out / "config.resolved.json")
    entries = synth_generate(config, args.out)
    return {"manifest": str(args.out / MANIFEST_NAME), "tracks": len(entries), "seed": config.seed}


def cmd_train(args) -> Dict[str, Any]:
    manifest = _require_file(args.manifest, "manifest")
    config = resolve_train_config(load_config_file(args.config), _train_overrides(args))
    dump_config(config, args.out / "config.resolved.json")

    resume = load_checkpoint(_require_file(args.resume, "resume")) if args.resume else None
    dataset = load_dataset(manifest, config.time_samples, config.seed, _sessions(args.sessions), args.threads)
    history_path = args.out / "loss.csv"
    result = train(dataset, config, resume=resume, threads=args.threads)
    checkpoint_path = args.out / "checkpoint.trkc"
    save_checkpoint(checkpoint_path, result.checkpoint)
    write_history_csv(result.history, history_path)
    if result.history:
        last = result.history[-1]
        console.print(
            f"epoch {last.epoch}: loss {last.mean_loss:.6f} pos_d {last.mean_pos_d:.4f} neg_d {last.mean_neg_d:.4f}"
        )
    return {
        "manifest": str(manifest),
        "checkpoint": str(checkpoint_path),
        "loss_csv": str(history_path),
        "epochs_run": len(result.history),
        "seed": config.seed,
    }


def cmd_embed(args) -> Dict[str, Any]:
    checkpoint_path = _require_file(args.checkpoint, "checkpoint")
    checkpoint = load_checkpoint(checkpoint_path)
    dataset = _load_run_inputs(args, checkpoint)
    model = checkpoint.model
    embedded = model.embed(dataset.matrices, threads=args.threads)
    rows = [(tid, emb.vector, emb.degenerate) for tid, emb in zip(dataset.track_ids, embedded)]
    db_path = args.out / CONFIG.embedding_db_name
    meta = {
        "checkpoint": str(checkpoint_path.resolve()),
        "dim": str(model.metric.dim),
        "metric": model.metric.kind.value,
        "variant": model.variant.value,
    }
    count = store_embeddings(sqlite_url(db_path), rows, meta)
    logger.info("embeddings stored path=%s rows=%d", db_path, count)
    return {"checkpoint": str(checkpoint_path), "embeddings": str(db_path), "rows": count}


def cmd_eval(args) -> Dict[str, Any]:
    checkpoint_path = _require_file(args.checkpoint, "checkpoint")
    checkpoint = load_checkpoint(checkpoint_path)
    dataset = _load_run_inputs(args, checkpoint)
    protocol = build_protocol(dataset.entries)
    report = evaluate(checkpoint.model, dataset, protocol, args.threads)
    report_path, cmc_path = write_report(report, args.out)
    _print_report(report)
    return {"checkpoint": str(checkpoint_path), "report": str(report_path), "cmc_csv": str(cmc_path)}


def _search_metric(db_url: str, checkpoint: Optional[Path], dim: int) -> MetricParams:
    if checkpoint is None:
        stored = read_meta(db_url).get("checkpoint")
        if stored and Path(stored).exists():
            checkpoint = Path(stored)
    if checkpoint is None:
        logger.warning("no checkpoint for the embedding table; ranking with euclidean distance")
        return MetricParams.euclidean(dim)
    metric = load_checkpoint(_require_file(checkpoint, "checkpoint")).model.metric
    if metric.dim != dim:
        raise ShapeError(f"checkpoint metric has dim {metric.dim}, embeddings have dim {dim}")
    return metric


def cmd_search(args) -> Dict[str, Any]:
    if args.k < 1:
        raise ConfigError(f"--k must be >= 1, got {args.k}")
    db_path = _require_file(args.embeddings, "embeddings")
    url = sqlite_url(db_path)
    gallery = fetch_embeddings(url)
    table = dict(gallery)
    if args.query not in table:
        raise UnknownTrackError(args.query)
    metric = _search_metric(url, args.checkpoint, table[args.query].shape[0])
    result = search_topk(table[args.query], gallery, metric, args.k)
    for rank, (track_id, d) in enumerate(result.items, start=1):
        print(f"{rank}\t{track_id}\t{d:.6f}")
    return {"embeddings": str(db_path), "query": args.query, "k": args.k, "returned": len(result.items)}


def _histogram(values: np.ndarray, T: int, bins: int) -> Dict[str, List[float]]:
    edges = np.linspace(0.0, 2.0 / T, bins + 1)
    # weights above 2/T land in the last bin
    counts, _ = np.histogram(np.clip(values, 0.0, edges[-1]), bins=edges)
    total = counts.sum()
    fractions = counts / total if total else counts.astype(np.float64)
    return {"bin_edges": [float(e) for e in edges], "fractions": [float(x) for x in fractions]}


def diagnostics(model: Model, dataset: TrackDataset, bins: int = HISTOGRAM_BINS) -> Dict[str, Any]:
    weights, rel_std = [], []
    for matrix in dataset.matrices:
        _, tape = aggregate(matrix, model.aggregator, model.variant)
        stats = frame_weight_stats(tape.E)
        weights.append(stats.mean_weights)
        rel_std.append(stats.mean_relative_std)
    T = dataset.matrices[0].shape[0] if dataset.matrices else 1
    flat = np.concatenate(weights) if weights else np.zeros(0)
    out: Dict[str, Any] = {
        "tracks": len(dataset),
        "time_samples": T,
        "histogram": _histogram(flat, T, bins),
        "weight_range": [float(flat.min()), float(flat.max())] if flat.size else None,
        "mean_relative_std": float(np.mean(rel_std)) if rel_std else 0.0,
        "diag_dominance": None,
        "corruption": None,
    }
    if model.metric.kind is MetricKind.MAHALANOBIS:
        ratio, degenerate = diag_dominance(model.metric.W @ model.metric.W.T)
        out["diag_dominance"] = {"ratio": ratio, "degenerate": degenerate}
    if model.variant.attends and len(dataset):
        stats = attention_corruption_stats(model, dataset)
        if stats is not None:
            out["corruption"] = json.loads(stats.model_dump_json())
    return out


def cmd_diag(args) -> Dict[str, Any]:
    if args.bins < 1:
        raise ConfigError(f"--bins must be >= 1, got {args.bins}")
    checkpoint_path = _require_file(args.checkpoint, "checkpoint")
    checkpoint = load_checkpoint(checkpoint_path)
    dataset = _load_run_inputs(args, checkpoint)
    result = diagnostics(checkpoint.model, dataset, args.bins)
    path = args.out / "diagnostics.json"
    _write_json(result, path)
    console.print(f"mean relative std of frame weights: {result['mean_relative_std']:.4f}")
    return {"checkpoint": str(checkpoint_path), "diagnostics": str(path)}


def cmd_experiment(args) -> Dict[str, Any]:
    manifest = _require_file(args.manifest, "manifest")
    base = resolve_train_config(load_config_file(args.config), _train_overrides(args))
    if args.splits < 1:
        raise ConfigError(f"--splits must be >= 1, got {args.splits}")
    dataset = load_dataset(manifest, base.time_samples, base.seed, None, args.threads)
    split = split_dataset(dataset, _sessions(args.held_out) or ())
    kinds = EXPERIMENT_KINDS if args.kind == "all" else (args.kind,)

    outputs: Dict[str, Any] = {"manifest": str(manifest)}
    if args.select_lr:
        lr, rows = select_learning_rate(split.train, base, threads=args.threads)
        base = dataclasses.replace(base, learning_rate=lr)
        json_path, _ = write_rows(rows, args.out, "lr_selection")
        console.print(_report_table(f"learning rate selection (chose {lr:g})", rows))
        outputs["lr_selection"] = {"json": str(json_path), "learning_rate": lr}
    dump_config(base, args.out / "config.resolved.json")

    for kind in kinds:
        if kind == "ablation":
            runs = ablation_runs(split, base, args.threads)
            rows = [row for _, row in runs]
            full = next(model for model, row in runs if row.variant == AggregatorVariant.FULL.value)
            stats = attention_corruption_stats(full, split.test)
            if stats is not None:
                path = args.out / "attention.json"
                _write_json(json.loads(stats.model_dump_json()), path)
                outputs["attention"] = str(path)
        elif kind == "metrics":
            rows = run_metric_comparison(split, base, args.threads)
        elif kind == "dims":
            dims = [int(d) for d in args.dims.split(",")] if args.dims else SWEEP_DIMS
            rows = run_dimension_sweep(split, base, dims, args.threads)
        else:
            rows = run_random_splits(dataset, base, args.splits, args.threads)
        json_path, csv_path = write_rows(rows, args.out, kind)
        console.print(_report_table(kind, rows))
        outputs[kind] = {"json": str(json_path), "csv": str(csv_path)}
    return outputs


# ---- parser ----
def _add_common(p: argparse.ArgumentParser, *, out_required: bool = True) -> None:
    p.add_argument("--out", type=Path, required=out_required, help="run directory")
    p.add_argument("--seed", type=int, default=None, help=f"seed (default {CONFIG.default_seed})")
    p.add_argument("--threads", type=int, default=CONFIG.threads, help="worker threads (default 1)")
    p.add_argument("--config", type=Path, default=None, help="JSON config file")


def _add_inputs(p: argparse.ArgumentParser) -> None:
    p.add_argument("--manifest", type=Path, default=None)
    p.add_argument("--checkpoint", type=Path, default=None)
    p.add_argument("--sessions", default=None, help="comma-separated sessions to keep")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--learning-rate", dest="learning_rate", type=float, default=None)
    p.add_argument("--margin", type=float, default=None)
    p.add_argument("--time-samples", dest="time_samples", type=int, default=None)
    p.add_argument("--embedding-dim", dest="embedding_dim", type=int, default=None)
    p.add_argument("--metric", choices=[k.value for k in MetricKind], default=None)
    p.add_argument("--variant", choices=[v.value for v in AggregatorVariant], default=None)
    p.add_argument("--reg-lambda", dest="reg_lambda", type=float, default=None)
    p.add_argument("--hard-negatives", dest="hard_negatives", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trackreid", description="Track embedding training and retrieval")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    _add_common(p)
    p.add_argument("--identities", type=int, default=None)
    p.add_argument("--tracks-per-identity", dest="tracks_per_identity", type=int, default=None)
    p.add_argument("--frames", type=int, default=None)
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--noise", type=float, default=None)
    p.add_argument("--corruption", type=float, default=None)
    p.add_argument("--distractors", type=int, default=None)
    p.add_argument("--n-sessions", dest="n_sessions", type=int, default=None)
    p.add_argument("--distractor-scale", dest="distractor_scale", type=float, default=None)
    p.add_argument("--occluder", type=float, default=None, help="magnitude of the shared occluder direction")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train aggregator and metric")
    _add_common(p)
    _add_inputs(p)
    _add_train_flags(p)
    p.add_argument("--resume", type=Path, default=None, help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("embed", help="embed every manifest track")
    _add_common(p)
    _add_inputs(p)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the retrieval protocol")
    _add_common(p)
    _add_inputs(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("search", help="top-k gallery search from an embedding table")
    _add_common(p, out_required=False)
    p.add_argument("--embeddings", type=Path, default=None, help="embedding table written by embed")
    p.add_argument("--checkpoint", type=Path, default=None, help="metric source (default: the table's checkpoint)")
    p.add_argument("--query", required=True)
    p.add_argument("--k", type=int, default=10)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("diag", help="frame-weight and metric diagnostics")
    _add_common(p)
    _add_inputs(p)
    p.add_argument("--bins", type=int, default=HISTOGRAM_BINS)
    p.set_defaults(func=cmd_diag)

    p = sub.add_parser("experiment", help="variant / metric / dimension comparisons")
    _add_common(p)
    p.add_argument("--manifest", type=Path, default=None)
    _add_train_flags(p)
    p.add_argument("--kind", choices=[*EXPERIMENT_KINDS, "all"], default="ablation")
    p.add_argument("--held-out", dest="held_out", default=None, help="comma-separated test sessions")
    p.add_argument("--dims", default=None, help="comma-separated embedding dims for the sweep")
    p.add_argument(
        "--splits", type=int, default=RANDOM_SPLITS, help=f"random identity halves (default {RANDOM_SPLITS})"
    )
    p.add_argument(
        "--select-lr",
        dest="select_lr",
        action="store_true",
        help="cross-validate the learning rate on an identity half of the training data first",
    )
    p.set_defaults(func=cmd_experiment)
    return parser


_USAGE_ERRORS = (ConfigError, ManifestError, ProtocolError, UnknownTrackError, FileNotFoundError)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else EXIT_OK

    if args.threads < 1:
        console.print("error: --threads must be >= 1")
        return EXIT_USAGE

    out: Optional[Path] = args.out
    handler = attach_run_log(out) if out is not None else None
    monitor = RunMonitor()
    func: Callable[[argparse.Namespace], Dict[str, Any]] = args.func
    try:
        details = func(args)
    except _USAGE_ERRORS as e:
        logger.error("%s failed: %s", args.command, e)
        console.print(f"error: {e}")
        return EXIT_USAGE
    except (TrackReidError, OSError) as e:
        logger.error("%s failed: %s", args.command, e)
        console.print(f"error: {e}")
        return EXIT_RUNTIME
    finally:
        if handler is not None:
            detach_handler(handler)

    if out is not None:
        details.update({"threads": args.threads, "seed_flag": args.seed})
        write_run_summary(out, args.command, monitor, details)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
