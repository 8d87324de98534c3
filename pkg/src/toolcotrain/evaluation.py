"""Retrieval evaluation: hit/recall/NDCG at k, tier and split stratification,
paired-bootstrap confidence intervals, and report emission."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .catalog import QueryExample, RenderingId, Split, Tier
from .encoder import EncoderParams, embed
from .hashing import derive_seed
from .rewriter import GREEDY_DECODE, DecodeConfig, GeneratorPolicy, clean, generate
from .vindex import VectorIndex, topk

DEFAULT_K_SET = (1, 5, 10, 20)
METRICS = ("hit", "recall", "ndcg")


def _check_args(gold_set, k: int) -> None:
    if k < 1:
        raise ValueError("k must be at least 1")
    if not gold_set:
        raise ValueError("gold set must not be empty")


def hit_at_k(ranked_ids: Sequence[str], gold_set: frozenset | set, k: int) -> int:
    """1 if any gold id appears in the first k positions, else 0."""
    _check_args(gold_set, k)
    return int(any(tool_id in gold_set for tool_id in ranked_ids[:k]))


def recall_at_k(ranked_ids: Sequence[str], gold_set: frozenset | set, k: int) -> float:
    """Fraction of the gold set found in the first k positions."""
    _check_args(gold_set, k)
    found = sum(1 for tool_id in ranked_ids[:k] if tool_id in gold_set)
    return found / len(gold_set)


def ndcg_at_k(ranked_ids: Sequence[str], gold_set: frozenset | set, k: int) -> float:
    """Binary-relevance NDCG with log2(j+1) discounts.

    The ideal gain truncates at min(k, |gold|); rankings shorter than k
    simply contribute nothing at the missing positions.
    """
    _check_args(gold_set, k)
    dcg = 0.0
    for j, tool_id in enumerate(ranked_ids[:k], start=1):
        if tool_id in gold_set:
            dcg += 1.0 / math.log2(j + 1)
    ideal = sum(1.0 / math.log2(j + 1) for j in range(1, min(k, len(gold_set)) + 1))
    return dcg / ideal


@dataclass
class PerQueryScore:
    query_id: str
    tier: Tier
    split: Split
    metrics: dict[str, dict[int, float]]  # metric -> k -> value
    ranked_ids: list[str]


@dataclass
class MetricReport:
    """Per-(metric, split, tier, k) means with query counts.

    Cells carry ``None`` means when no query fell into them; every tier is
    emitted for every split that was evaluated.
    """

    cells: dict[tuple[str, str, str, int], tuple[float | None, int]]
    k_set: tuple[int, ...]
    splits: tuple[str, ...]
    encoder_fingerprint: str = ""
    policy_fingerprint: str | None = None
    use_rewriter: bool = False
    stage: str | None = None

    def mean(self, metric: str, split: Split | str, tier: Tier | str, k: int) -> float | None:
        key = (metric, str(getattr(split, "value", split)), str(getattr(tier, "value", tier)), k)
        return self.cells[key][0]

    def count(self, metric: str, split: Split | str, tier: Tier | str, k: int) -> int:
        key = (metric, str(getattr(split, "value", split)), str(getattr(tier, "value", tier)), k)
        return self.cells[key][1]

    def tier_average(self, metric: str, split: Split | str, k: int) -> float | None:
        """Macro average over tiers that contain at least one query."""
        values = []
        for tier in Tier:
            mean = self.mean(metric, split, tier, k)
            if mean is not None:
                values.append(mean)
        if not values:
            return None
        return math.fsum(values) / len(values)

    def rows(self) -> list[tuple]:
        out = []
        for (metric, split, tier, k), (mean, n) in sorted(self.cells.items()):
            out.append((metric, split, tier, k, mean, n))
        return out


def score_ranking(ranked_ids: Sequence[str], gold_set, k_set: Sequence[int]) -> dict[str, dict[int, float]]:
    return {
        "hit": {k: float(hit_at_k(ranked_ids, gold_set, k)) for k in k_set},
        "recall": {k: recall_at_k(ranked_ids, gold_set, k) for k in k_set},
        "ndcg": {k: ndcg_at_k(ranked_ids, gold_set, k) for k in k_set},
    }


def evaluate(
    encoder_params: EncoderParams,
    policy: GeneratorPolicy | None,
    index: VectorIndex,
    queries: Sequence[QueryExample],
    k_set: Sequence[int] = DEFAULT_K_SET,
    use_rewriter: bool = False,
    decode: DecodeConfig = GREEDY_DECODE,
    seed: int = 0,
    stage: str | None = None,
) -> tuple[MetricReport, list[PerQueryScore]]:
    """Score every query against the index and aggregate per (split, tier).

    With ``use_rewriter`` the query is replaced by its cleaned greedy
    description before embedding; otherwise the raw query text is embedded.
    Aggregation uses exact summation, so query order never changes a mean.
    """
    if index.rendering is not RenderingId.R5:
        raise ValueError("evaluation requires an index built under the full-record rendering")
    if use_rewriter and policy is None:
        raise ValueError("use_rewriter requires a generator policy")
    k_set = tuple(sorted(set(int(k) for k in k_set)))
    max_k = max(k_set)

    per_query: list[PerQueryScore] = []
    for query in queries:
        if use_rewriter:
            desc = generate(policy, query.text, decode, n=1, seed=derive_seed(seed, query.query_id))[0]
            anchor_text = clean(desc.text, query.text)
        else:
            anchor_text = query.text
        result = topk(index, embed(encoder_params, anchor_text), max_k)
        per_query.append(
            PerQueryScore(
                query_id=query.query_id,
                tier=query.tier,
                split=query.split,
                metrics=score_ranking(result.ids, query.gold_tool_ids, k_set),
                ranked_ids=result.ids,
            )
        )

    splits = tuple(sorted({score.split.value for score in per_query}))
    cells: dict[tuple[str, str, str, int], tuple[float | None, int]] = {}
    for metric in METRICS:
        for split in splits:
            for tier in Tier:
                bucket = [
                    s for s in per_query if s.split.value == split and s.tier is tier
                ]
                for k in k_set:
                    if bucket:
                        mean = math.fsum(s.metrics[metric][k] for s in bucket) / len(bucket)
                    else:
                        mean = None
                    cells[(metric, split, tier.value, k)] = (mean, len(bucket))

    report = MetricReport(
        cells=cells,
        k_set=k_set,
        splits=splits,
        encoder_fingerprint=encoder_params.fingerprint(),
        policy_fingerprint=policy.fingerprint() if policy is not None else None,
        use_rewriter=use_rewriter,
        stage=stage,
    )
    return report, per_query


@dataclass
class BootstrapResult:
    delta: float
    lo: float
    hi: float
    b: int
    seed: int


def paired_bootstrap(
    x: Mapping[str, float],
    y: Mapping[str, float],
    b: int = 10_000,
    seed: int = 0,
) -> BootstrapResult:
    """Percentile CI of the mean difference under paired query resampling.

    Query ids are resampled with replacement ``b`` times with a fixed seed;
    the interval is the nearest-rank (2.5%, 97.5%) percentile pair of the
    resampled differences.  Passing all-zero ``y`` yields a single-system CI.
    """
    if b < 1:
        raise ValueError("b must be at least 1")
    if set(x) != set(y):
        only_x = sorted(set(x) - set(y))[:5]
        only_y = sorted(set(y) - set(x))[:5]
        raise ValueError(f"query ids do not match (x-only {only_x}, y-only {only_y})")
    if not x:
        raise ValueError("score maps must not be empty")
    ids = sorted(x)
    xv = np.array([x[i] for i in ids], dtype=np.float64)
    yv = np.array([y[i] for i in ids], dtype=np.float64)
    n = len(ids)
    rng = np.random.default_rng(seed)
    deltas = np.empty(b, dtype=np.float64)
    for i in range(b):
        pick = rng.integers(0, n, size=n)
        deltas[i] = float(xv[pick].mean() - yv[pick].mean())
    deltas.sort()
    lo = deltas[max(0, math.ceil(0.025 * b) - 1)]
    hi = deltas[max(0, math.ceil(0.975 * b) - 1)]
    return BootstrapResult(
        delta=float(xv.mean() - yv.mean()),
        lo=float(lo),
        hi=float(hi),
        b=b,
        seed=seed,
    )


def emit_report(report: MetricReport, fmt: str, path: str | Path) -> None:
    """Write a report deterministically as ``csv``, ``json``, or ``plot``
    (per-tier NDCG@5 rows for trajectory plotting)."""
    path = Path(path)
    if fmt == "csv":
        with path.open("w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["metric", "split", "tier", "k", "mean", "n"])
            for metric, split, tier, k, mean, n in report.rows():
                writer.writerow([metric, split, tier, k, _fmt_mean(mean), n])
    elif fmt == "json":
        payload = {
            "stage": report.stage,
            "use_rewriter": report.use_rewriter,
            "encoder_fingerprint": report.encoder_fingerprint,
            "policy_fingerprint": report.policy_fingerprint,
            "k_set": list(report.k_set),
            "splits": list(report.splits),
            "cells": [
                {"metric": m, "split": s, "tier": t, "k": k, "mean": mean, "n": n}
                for m, s, t, k, mean, n in report.rows()
            ],
        }
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    elif fmt == "plot":
        with path.open("w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["stage", "split", "tier", "ndcg@5"])
            for split in report.splits:
                for tier in Tier:
                    mean = report.mean("ndcg", split, tier, 5) if 5 in report.k_set else None
                    writer.writerow([report.stage or "", split, tier.value, _fmt_mean(mean)])
    else:
        raise ValueError(f"unknown report format {fmt!r}")


def _fmt_mean(mean: float | None) -> str:
    return "" if mean is None else repr(mean)


def parse_report_csv(path: str | Path) -> dict[tuple[str, str, str, int], tuple[float | None, int]]:
    cells = {}
    with Path(path).open("r", encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader)
        if header != ["metric", "split", "tier", "k", "mean", "n"]:
            raise ValueError(f"{path}: unexpected report header {header}")
        for metric, split, tier, k, mean, n in reader:
            cells[(metric, split, tier, int(k))] = (
                None if mean == "" else float(mean),
                int(n),
            )
    return cells


def write_perquery_scores(scores: Iterable[PerQueryScore], path: str | Path) -> None:
    """Line-delimited per-query scores, the input format for CI comparisons."""
    with Path(path).open("w", encoding="utf-8") as handle:
        for score in scores:
            handle.write(
                json.dumps(
                    {
                        "query_id": score.query_id,
                        "tier": score.tier.value,
                        "split": score.split.value,
                        "metrics": {
                            m: {str(k): v for k, v in sorted(ks.items())}
                            for m, ks in sorted(score.metrics.items())
                        },
                        "ranked_ids": score.ranked_ids,
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def read_perquery_scores(path: str | Path, metric: str = "ndcg", k: int = 5) -> dict[str, float]:
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}")
    out: dict[str, float] = {}
    with Path(path).open("r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            record = json.loads(line)
            try:
                out[record["query_id"]] = float(record["metrics"][metric][str(k)])
            except KeyError as exc:
                raise ValueError(f"{path}: line {lineno}: missing {metric}@{k}") from exc
    return out
