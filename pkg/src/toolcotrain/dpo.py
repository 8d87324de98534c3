"""Preference-pair construction scored by retrieval NDCG@5, and sigmoid DPO
training of the generator policy against a frozen reference snapshot."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .catalog import QueryExample
from .encoder import EncoderParams, embed
from .evaluation import ndcg_at_k
from .hashing import derive_seed
from .optim import AdamWState, adamw_update, warmup_cosine_lr
from .rewriter import (
    CANDIDATE_DECODE,
    DecodeConfig,
    GeneratedDescription,
    GeneratorPolicy,
    PolicyGrad,
    clean,
    generate,
    log_prob,
    log_prob_and_grad,
)
from .vindex import VectorIndex, topk

log = logging.getLogger(__name__)

LN2 = math.log(2.0)


@dataclass(frozen=True)
class PreferencePair:
    """Best- and worst-scoring candidate for one query, by retrieval NDCG@5.

    The scores must differ strictly; queries whose candidates all tie are
    dropped before a pair is ever formed.
    """

    query_id: str
    query_text: str
    chosen: GeneratedDescription
    rejected: GeneratedDescription
    chosen_score: float
    rejected_score: float

    def __post_init__(self) -> None:
        if not self.chosen_score > self.rejected_score:
            raise ValueError(
                f"chosen score {self.chosen_score} must exceed rejected score {self.rejected_score}"
            )


def select_pair(scores: Sequence[float]) -> tuple[int, int] | None:
    """(argmax, argmin) candidate indices, ties resolved to the lowest index;
    all-equal score vectors yield no pair."""
    if not scores:
        return None
    best = max(scores)
    worst = min(scores)
    if best == worst:
        return None
    return scores.index(best), scores.index(worst)


def build_pairs(
    policy: GeneratorPolicy,
    encoder_params: EncoderParams,
    index: VectorIndex,
    queries: Sequence[QueryExample],
    n_candidates: int = 4,
    decode: DecodeConfig = CANDIDATE_DECODE,
    seed: int = 0,
) -> list[PreferencePair]:
    """Sample candidates per query, score each by NDCG@5 of the retrieval it
    triggers, and keep (best, worst) pairs.

    Candidates are cleaned before embedding and the cleaned text is recorded
    on the pair; the raw token sequence stays available for log-probability
    computation.  The index must have been built under the encoder that is
    meant to do the scoring.
    """
    if n_candidates < 2:
        raise ValueError("need at least two candidates to form a pair")
    if index.encoder_fingerprint != encoder_params.fingerprint():
        raise ValueError("index was not built by the scoring encoder")
    pairs: list[PreferencePair] = []
    for query in queries:
        candidates = generate(
            policy, query.text, decode, n=n_candidates, seed=derive_seed(seed, query.query_id)
        )
        scores: list[float] = []
        cleaned: list[GeneratedDescription] = []
        for cand in candidates:
            cleaned_text = clean(cand.text, query.text)
            cleaned.append(replace(cand, cleaned_text=cleaned_text))
            result = topk(index, embed(encoder_params, cleaned_text), 5)
            scores.append(ndcg_at_k(result.ids, query.gold_tool_ids, 5))
        picked = select_pair(scores)
        if picked is None:
            continue
        best, worst = picked
        pairs.append(
            PreferencePair(
                query_id=query.query_id,
                query_text=query.text,
                chosen=cleaned[best],
                rejected=cleaned[worst],
                chosen_score=scores[best],
                rejected_score=scores[worst],
            )
        )
    if queries and not pairs:
        log.warning("all %d queries produced tied candidate scores; no pairs built", len(queries))
    return pairs


def _margin(policy: GeneratorPolicy, reference: GeneratorPolicy, pair: PreferencePair) -> float:
    lp_chosen = log_prob(policy, pair.query_text, pair.chosen)
    lp_rejected = log_prob(policy, pair.query_text, pair.rejected)
    ref_chosen = log_prob(reference, pair.query_text, pair.chosen)
    ref_rejected = log_prob(reference, pair.query_text, pair.rejected)
    values = (lp_chosen, lp_rejected, ref_chosen, ref_rejected)
    if not all(math.isfinite(v) for v in values):
        raise FloatingPointError(f"non-finite log-probability in DPO margin: {values}")
    return (lp_chosen - ref_chosen) - (lp_rejected - ref_rejected)


def dpo_loss(
    policy: GeneratorPolicy,
    reference: GeneratorPolicy,
    pair: PreferencePair,
    beta: float = 0.1,
) -> float:
    """Sigmoid preference loss on the log-ratio margin.

    Equals ln 2 exactly when policy and reference agree on the pair, and
    stays strictly positive everywhere.
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    return float(np.logaddexp(0.0, -beta * _margin(policy, reference, pair)))


def dpo_grad(
    policy: GeneratorPolicy,
    reference: GeneratorPolicy,
    pair: PreferencePair,
    beta: float = 0.1,
) -> PolicyGrad:
    """Exact loss gradient over the policy tables; reference terms are
    constants and contribute only through the margin."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    lp_chosen, grad_chosen = log_prob_and_grad(policy, pair.query_text, pair.chosen)
    lp_rejected, grad_rejected = log_prob_and_grad(policy, pair.query_text, pair.rejected)
    ref_chosen = log_prob(reference, pair.query_text, pair.chosen)
    ref_rejected = log_prob(reference, pair.query_text, pair.rejected)
    values = (lp_chosen, lp_rejected, ref_chosen, ref_rejected)
    if not all(math.isfinite(v) for v in values):
        raise FloatingPointError(f"non-finite log-probability in DPO gradient: {values}")
    margin = (lp_chosen - ref_chosen) - (lp_rejected - ref_rejected)
    # d/dm of -ln sigmoid(beta m) is -beta sigmoid(-beta m).
    coeff = -beta / (1.0 + math.exp(beta * margin))
    return PolicyGrad(
        context_table=coeff * (grad_chosen.context_table - grad_rejected.context_table),
        feature_table=coeff * (grad_chosen.feature_table - grad_rejected.feature_table),
    )


@dataclass
class DpoConfig:
    beta: float = 0.1
    lr: float = 0.05
    epochs: int = 1
    batch_size: int = 16
    seed: int = 0
    weight_decay: float = 0.0
    warmup_frac: float = 0.03

    def __post_init__(self) -> None:
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")


@dataclass
class DpoTrainResult:
    policy: GeneratorPolicy
    epoch_losses: list[float]


def dpo_train(
    policy: GeneratorPolicy,
    pairs: Sequence[PreferencePair],
    cfg: DpoConfig,
) -> DpoTrainResult:
    """Mini-batch AdamW on the sigmoid DPO loss.

    The reference is a frozen snapshot of the incoming policy, taken once
    per call and never refreshed mid-epoch.  Deterministic under
    ``cfg.seed``; zero epochs return an identical copy.
    """
    if not pairs:
        raise ValueError("dpo_train needs at least one preference pair")
    reference = policy.copy()
    work = policy.copy()
    if cfg.epochs == 0:
        return DpoTrainResult(work, [])

    n = len(pairs)
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch
    rng = np.random.default_rng(cfg.seed)
    state = AdamWState()
    named = {"context_table": work.context_table, "feature_table": work.feature_table}
    grad_ctx = np.zeros_like(work.context_table)
    grad_feat = np.zeros_like(work.feature_table)
    losses: list[float] = []
    step = 0

    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, cfg.batch_size):
            chosen = order[start : start + cfg.batch_size]
            grad_ctx.fill(0.0)
            grad_feat.fill(0.0)
            batch_loss = 0.0
            for i in chosen:
                pair = pairs[int(i)]
                batch_loss += dpo_loss(work, reference, pair, cfg.beta)
                grad = dpo_grad(work, reference, pair, cfg.beta)
                grad_ctx += grad.context_table
                grad_feat += grad.feature_table
            scale = 1.0 / len(chosen)
            grad_ctx *= scale
            grad_feat *= scale
            lr = warmup_cosine_lr(step, total_steps, cfg.lr, cfg.warmup_frac)
            adamw_update(
                named,
                {"context_table": grad_ctx, "feature_table": grad_feat},
                state,
                lr,
                weight_decay=cfg.weight_decay,
            )
            epoch_loss += batch_loss
            step += 1
        losses.append(epoch_loss / n)
    return DpoTrainResult(work, losses)


def mean_logprob_margin(policy: GeneratorPolicy, pairs: Sequence[PreferencePair]) -> float:
    """Mean (chosen - rejected) log-probability under one policy; a training
    progress probe."""
    if not pairs:
        raise ValueError("no pairs")
    total = 0.0
    for pair in pairs:
        total += log_prob(policy, pair.query_text, pair.chosen) - log_prob(
            policy, pair.query_text, pair.rejected
        )
    return total / len(pairs)


def write_pairs(pairs: Sequence[PreferencePair], path: str | Path) -> None:
    """Audit trail: one JSON record per pair with both texts and scores."""
    with Path(path).open("w", encoding="utf-8") as handle:
        for pair in pairs:
            handle.write(
                json.dumps(
                    {
                        "query_id": pair.query_id,
                        "query_text": pair.query_text,
                        "chosen_text": pair.chosen.cleaned_text or pair.chosen.text,
                        "rejected_text": pair.rejected.cleaned_text or pair.rejected.text,
                        "chosen_score": pair.chosen_score,
                        "rejected_score": pair.rejected_score,
                    },
                    sort_keys=True,
                )
                + "\n"
            )
