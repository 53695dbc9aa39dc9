"""
Retrieval protocol and scoring.

A case is (query, positive, negatives): every ordered pair of same-identity
tracks from different videos, with the negatives being all other tracks in
the positive's video whose identity differs from the positive's. The
gallery of a case is the positive plus its negatives; ranking is by
ascending distance with ties broken by ascending track id.
"""
from __future__ import annotations

import csv
import json
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel

from dataio.manifest import ManifestEntry
from reid.metrics import MetricParams, distances_to
from shared.errors import ProtocolError
from shared.logging_utils import get_logger

logger = get_logger("reid")

REPORT_RANKS = (1, 5, 10, 20)
MAX_RANK = 20

Gallery = Sequence[Tuple[str, np.ndarray]]


@dataclass(frozen=True)
class EvalCase:
    query: str
    positive: str
    negatives: Tuple[str, ...]


def build_protocol(entries: Sequence[ManifestEntry]) -> List[EvalCase]:
    """One case per ordered same-identity pair of tracks in different videos."""
    if not entries:
        raise ProtocolError("cannot build a protocol from an empty manifest")
    by_identity: Dict[str, List[ManifestEntry]] = defaultdict(list)
    by_video: Dict[str, List[ManifestEntry]] = defaultdict(list)
    for e in entries:
        by_identity[e.identity].append(e)
        by_video[e.video].append(e)

    cases: List[EvalCase] = []
    for query in sorted(entries, key=lambda e: e.track_id):
        group = by_identity[query.identity]
        if len(group) < 2:
            logger.debug("identity with a single track produces no case identity=%s", query.identity)
            continue
        for positive in sorted(group, key=lambda e: e.track_id):
            if positive.track_id == query.track_id or positive.video == query.video:
                continue
            negatives = tuple(
                sorted(t.track_id for t in by_video[positive.video] if t.identity != positive.identity)
            )
            cases.append(EvalCase(query.track_id, positive.track_id, negatives))
    return cases


class ProtocolStats(BaseModel):
    cases: int
    identities: int
    mean_negatives: float
    min_negatives: int
    max_negatives: int


def protocol_stats(cases: Sequence[EvalCase], identity_of: Optional[Dict[str, str]] = None) -> ProtocolStats:
    counts = [len(c.negatives) for c in cases]
    ids = {identity_of[c.query] for c in cases} if identity_of else {c.query for c in cases}
    return ProtocolStats(
        cases=len(cases),
        identities=len(ids),
        mean_negatives=float(np.mean(counts)) if counts else 0.0,
        min_negatives=min(counts) if counts else 0,
        max_negatives=max(counts) if counts else 0,
    )


def _scored(query_embedding: np.ndarray, gallery: Gallery, metric: MetricParams) -> List[Tuple[str, float]]:
    if len(gallery) == 0:
        raise ProtocolError("cannot rank an empty gallery")
    ids = [g[0] for g in gallery]
    d = distances_to(query_embedding, np.stack([g[1] for g in gallery]), metric)
    order = sorted(range(len(ids)), key=lambda i: (d[i], ids[i]))
    return [(ids[i], float(d[i])) for i in order]


def rank_gallery(query_embedding: np.ndarray, gallery: Gallery, metric: MetricParams) -> List[str]:
    """Gallery ids by ascending distance, ties by ascending id."""
    return [track_id for track_id, _ in _scored(query_embedding, gallery, metric)]


@dataclass
class SearchResult:
    items: List[Tuple[str, float]]
    # k exceeded the gallery size; all items returned
    truncated: bool = False


def search_topk(query_embedding: np.ndarray, gallery: Gallery, metric: MetricParams, k: int) -> SearchResult:
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    scored = _scored(query_embedding, gallery, metric)
    if k > len(scored):
        logger.warning("k exceeds gallery size k=%d gallery=%d", k, len(scored))
        return SearchResult(scored, truncated=True)
    return SearchResult(scored[:k])


def positive_rank(ranked_ids: Sequence[str], positive: str) -> int:
    try:
        return ranked_ids.index(positive) + 1
    except ValueError:
        raise ProtocolError(f"positive {positive!r} absent from gallery")


def average_precision(rank: int) -> float:
    """AP of a ranking with a single relevant item at 1-based `rank`."""
    if rank < 1:
        raise ValueError(f"rank must be >= 1, got {rank}")
    return 1.0 / rank


def mean_average_precision(ranks: Sequence[int]) -> float:
    if not ranks:
        raise ProtocolError("no ranks to average")
    return float(np.mean([average_precision(r) for r in ranks]))


@dataclass
class CmcResult:
    cmc: np.ndarray
    hit_at: Dict[int, float]


def cmc_and_hits(ranks: Sequence[int], max_rank: int = MAX_RANK) -> CmcResult:
    if len(ranks) == 0:
        raise ProtocolError("no ranks to build a CMC from")
    r = np.asarray(ranks, dtype=np.int64)
    if np.any(r < 1):
        raise ValueError("ranks must be >= 1")
    cmc = np.array([np.mean(r <= k) for k in range(1, max_rank + 1)])
    hit_at = {k: float(cmc[k - 1]) for k in REPORT_RANKS if k <= max_rank}
    return CmcResult(cmc=cmc, hit_at=hit_at)


class CaseRank(BaseModel):
    query: str
    positive: str
    rank: int


class EvalReport(BaseModel):
    mAP: float
    hit_at: Dict[int, float]
    cmc: List[float]
    ranks: List[CaseRank]
    protocol: ProtocolStats
    metric: Optional[str] = None
    variant: Optional[str] = None


def score_case(case: EvalCase, embeddings: Dict[str, np.ndarray], metric: MetricParams) -> int:
    gallery = [(t, embeddings[t]) for t in (case.positive, *case.negatives)]
    return positive_rank(rank_gallery(embeddings[case.query], gallery, metric), case.positive)


def evaluate_embeddings(
    embeddings: Dict[str, np.ndarray],
    cases: Sequence[EvalCase],
    metric: MetricParams,
    threads: int = 1,
    identity_of: Optional[Dict[str, str]] = None,
) -> EvalReport:
    """Score every case against a read-only embedding table."""
    if not cases:
        raise ProtocolError("protocol has no cases (need identities seen in at least two videos)")

    def _one(case: EvalCase) -> int:
        return score_case(case, embeddings, metric)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            ranks = list(pool.map(_one, cases))
    else:
        ranks = [_one(c) for c in cases]

    cmc = cmc_and_hits(ranks)
    report = EvalReport(
        mAP=mean_average_precision(ranks),
        hit_at=cmc.hit_at,
        cmc=[float(x) for x in cmc.cmc],
        ranks=[CaseRank(query=c.query, positive=c.positive, rank=r) for c, r in zip(cases, ranks)],
        protocol=protocol_stats(cases, identity_of),
        metric=metric.kind.value,
    )
    logger.info(
        "evaluation done cases=%d mAP=%.4f hit1=%.4f hit5=%.4f hit10=%.4f hit20=%.4f",
        len(cases),
        report.mAP,
        report.hit_at[1],
        report.hit_at[5],
        report.hit_at[10],
        report.hit_at[20],
    )
    return report


def evaluate(model, dataset, protocol: Sequence[EvalCase], threads: int = 1) -> EvalReport:
    """Embed every track of `dataset` once with `model`, then score `protocol`."""
    embedded = model.embed(dataset.matrices, threads=threads)
    table = {tid: emb.vector for tid, emb in zip(dataset.track_ids, embedded)}
    identity_of = {e.track_id: e.identity for e in dataset.entries}
    report = evaluate_embeddings(table, protocol, model.metric, threads, identity_of)
    report.variant = model.variant.value
    return report


def write_report(report: EvalReport, out_dir: Path) -> Tuple[Path, Path]:
    """Write report.json and cmc.csv (rank, fraction) under `out_dir`."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report_path = out_dir / "report.json"
    with open(report_path, "w", encoding="utf-8") as f:
        json.dump(json.loads(report.model_dump_json()), f, indent=2, sort_keys=True)
        f.write("\n")
    cmc_path = out_dir / "cmc.csv"
    with open(cmc_path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["rank", "fraction"])
        for rank, fraction in enumerate(report.cmc, start=1):
            writer.writerow([rank, repr(fraction)])
    return report_path, cmc_path
