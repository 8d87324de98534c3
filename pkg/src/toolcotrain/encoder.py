"""Hashed character n-gram encoder trained with symmetric InfoNCE.

The encoder is a single linear map from a fixed hashed n-gram space onto the
unit sphere in R^d.  The same matrix embeds queries, tool renderings, and
generated descriptions, so contrastive training moves all text
representations relative to each other.
"""

from __future__ import annotations

import math
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .catalog import ToolCatalog, TrainingPair, render
from .hashing import char_ngram_buckets, sha256_hex
from .optim import AdamWState, adamw_update, warmup_cosine_lr

DEFAULT_FEATURE_SPACE = 1 << 18
DEFAULT_DIM = 64
DEFAULT_TAU = 0.05
DEFAULT_NGRAM_SIZES = (3, 4, 5)

# EmbeddingVector: dense unit-norm float64 vector of length ``dim``.
EmbeddingVector = np.ndarray


class CheckpointError(ValueError):
    """Raised when an encoder checkpoint cannot be read back."""


@dataclass(frozen=True)
class FeatureVector:
    """Sparse counts over the hashed n-gram space (indices sorted, unique)."""

    indices: np.ndarray
    counts: np.ndarray

    @property
    def nnz(self) -> int:
        return int(self.indices.size)


def featurize(
    text: str,
    sizes: tuple[int, ...] = DEFAULT_NGRAM_SIZES,
    feature_space: int = DEFAULT_FEATURE_SPACE,
) -> FeatureVector:
    """Deterministic, case-insensitive character n-gram counts."""
    buckets = char_ngram_buckets(text, sizes, feature_space)
    if buckets.size == 0:
        return FeatureVector(np.empty(0, dtype=np.int64), np.empty(0, dtype=np.float64))
    idx, cnt = np.unique(buckets, return_counts=True)
    return FeatureVector(idx.astype(np.int64), cnt.astype(np.float64))


@dataclass
class EncoderParams:
    """Trainable linear embedding plus its optimizer state.

    ``weights`` has shape (feature_space, dim).  Optimizer moments are
    allocated lazily on the first training step and are never persisted;
    checkpoints carry the weights and the header only.
    """

    weights: np.ndarray
    tau: float = DEFAULT_TAU
    ngram_sizes: tuple[int, ...] = DEFAULT_NGRAM_SIZES
    opt: AdamWState = field(default_factory=AdamWState)
    step: int = 0

    def __post_init__(self) -> None:
        if self.weights.ndim != 2:
            raise ValueError("weights must be a 2-d matrix")
        if self.dim < 2:
            raise ValueError("embedding dimension must be at least 2")
        if not self.tau > 0:
            raise ValueError("temperature must be positive")
        self.ngram_sizes = tuple(int(n) for n in self.ngram_sizes)

    @property
    def feature_space(self) -> int:
        return int(self.weights.shape[0])

    @property
    def dim(self) -> int:
        return int(self.weights.shape[1])

    @classmethod
    def init(
        cls,
        feature_space: int = DEFAULT_FEATURE_SPACE,
        dim: int = DEFAULT_DIM,
        tau: float = DEFAULT_TAU,
        ngram_sizes: tuple[int, ...] = DEFAULT_NGRAM_SIZES,
        seed: int = 0,
        scale: float = 0.02,
    ) -> "EncoderParams":
        rng = np.random.default_rng(seed)
        weights = rng.standard_normal((feature_space, dim)) * scale
        return cls(weights=weights, tau=tau, ngram_sizes=ngram_sizes)

    def copy(self) -> "EncoderParams":
        return EncoderParams(
            weights=self.weights.copy(),
            tau=self.tau,
            ngram_sizes=self.ngram_sizes,
            step=self.step,
        )

    def fingerprint(self) -> str:
        header = f"{self.feature_space}:{self.dim}:{self.tau!r}:{self.ngram_sizes}"
        return sha256_hex(header.encode(), np.ascontiguousarray(self.weights).tobytes())


def _fallback_vector(dim: int) -> np.ndarray:
    e0 = np.zeros(dim, dtype=np.float64)
    e0[0] = 1.0
    return e0


def _embed_features(params: EncoderParams, fv: FeatureVector) -> tuple[np.ndarray, float]:
    """Unit-norm embedding plus the pre-normalization norm (0.0 marks fallback)."""
    if fv.nnz == 0:
        return _fallback_vector(params.dim), 0.0
    u = fv.counts @ params.weights[fv.indices]
    norm = float(np.linalg.norm(u))
    if norm == 0.0:
        return _fallback_vector(params.dim), 0.0
    return u / norm, norm


def embed(params: EncoderParams, text: str) -> EmbeddingVector:
    """Map text onto the unit sphere; degenerate inputs fall back to e0."""
    fv = featurize(text, params.ngram_sizes, params.feature_space)
    vec, _ = _embed_features(params, fv)
    return vec


# A contrastive batch is a sequence of (anchor_text, positive_text) pairs.
ContrastiveBatch = Sequence[tuple[str, str]]


def _embed_batch(params: EncoderParams, texts: Sequence[str]):
    feats = [featurize(t, params.ngram_sizes, params.feature_space) for t in texts]
    rows = np.empty((len(texts), params.dim), dtype=np.float64)
    norms = np.empty(len(texts), dtype=np.float64)
    for i, fv in enumerate(feats):
        rows[i], norms[i] = _embed_features(params, fv)
    return feats, rows, norms


def _similarity(params: EncoderParams, batch: ContrastiveBatch):
    anchors = [a for a, _ in batch]
    positives = [p for _, p in batch]
    fa, ea, na = _embed_batch(params, anchors)
    fp, ep, np_ = _embed_batch(params, positives)
    sims = (ea @ ep.T) / params.tau
    if not np.all(np.isfinite(sims)):
        raise FloatingPointError("non-finite similarity matrix; encoder weights are corrupt")
    return fa, ea, na, fp, ep, np_, sims


def _log_softmax(scores: np.ndarray, axis: int) -> np.ndarray:
    shifted = scores - scores.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def infonce_loss(params: EncoderParams, batch: ContrastiveBatch) -> float:
    """Two-way softmax cross-entropy over in-batch similarities.

    Averaged with factor 1/(2B) across both softmax directions; a batch of
    one is a perfect single-class problem and scores exactly zero.
    """
    if len(batch) < 1:
        raise ValueError("batch must contain at least one pair")
    *_, sims = _similarity(params, batch)
    rows = _log_softmax(sims, axis=1)
    cols = _log_softmax(sims, axis=0)
    diag = np.arange(len(batch))
    return float(-(rows[diag, diag].sum() + cols[diag, diag].sum()) / (2.0 * len(batch)))


def infonce_loss_and_grad(
    params: EncoderParams,
    batch: ContrastiveBatch,
    grad_out: np.ndarray | None = None,
) -> tuple[float, np.ndarray]:
    """Loss plus its exact gradient with respect to every weight entry.

    The gradient flows through the similarity matrix, the normalization
    Jacobian, and the sparse feature lift; fallback embeddings are constant
    and contribute nothing.
    """
    if len(batch) < 1:
        raise ValueError("batch must contain at least one pair")
    b = len(batch)
    fa, ea, na, fp, ep, np_, sims = _similarity(params, batch)

    rows = _log_softmax(sims, axis=1)
    cols = _log_softmax(sims, axis=0)
    diag = np.arange(b)
    loss = float(-(rows[diag, diag].sum() + cols[diag, diag].sum()) / (2.0 * b))

    soft_rows = np.exp(rows)
    soft_cols = np.exp(cols)
    d_sims = (soft_rows + soft_cols) / (2.0 * b)
    d_sims[diag, diag] -= 1.0 / b

    d_anchor = (d_sims @ ep) / params.tau
    d_positive = (d_sims.T @ ea) / params.tau

    if grad_out is None:
        grad_out = np.zeros_like(params.weights)
    else:
        grad_out.fill(0.0)

    _accumulate_embedding_grad(grad_out, fa, ea, na, d_anchor)
    _accumulate_embedding_grad(grad_out, fp, ep, np_, d_positive)
    return loss, grad_out


def infonce_grad(params: EncoderParams, batch: ContrastiveBatch) -> np.ndarray:
    """Gradient of :func:`infonce_loss` over the weight matrix."""
    _, grad = infonce_loss_and_grad(params, batch)
    return grad


def _accumulate_embedding_grad(grad, feats, embeds, norms, d_embeds) -> None:
    idx_chunks = []
    row_chunks = []
    for fv, vec, norm, dv in zip(feats, embeds, norms, d_embeds):
        if norm == 0.0:
            continue  # fallback embedding: constant, no gradient
        du = (dv - float(dv @ vec) * vec) / norm
        idx_chunks.append(fv.indices)
        row_chunks.append(fv.counts[:, None] * du[None, :])
    if idx_chunks:
        np.add.at(grad, np.concatenate(idx_chunks), np.vstack(row_chunks))


@dataclass
class EncoderTrainConfig:
    lr: float = 1e-2
    batch_size: int = 32
    epochs: int = 3
    seed: int = 0
    shuffle: bool = True
    weight_decay: float = 1e-2
    warmup_frac: float = 0.05


@dataclass
class EncoderTrainResult:
    params: EncoderParams
    epoch_losses: list[float]


def train_contrastive(
    params: EncoderParams,
    pairs: Sequence[TrainingPair],
    catalog: ToolCatalog,
    cfg: EncoderTrainConfig,
) -> EncoderTrainResult:
    """Shuffled mini-batch AdamW over InfoNCE with a warmup/cosine schedule.

    Pure with respect to its input: the returned params are a trained copy,
    and zero epochs return an identical copy.  Fully deterministic under
    ``cfg.seed``.
    """
    if not pairs:
        raise ValueError("training needs at least one pair")
    if cfg.batch_size < 1:
        raise ValueError("batch_size must be at least 1")

    out = params.copy()
    if cfg.epochs == 0:
        return EncoderTrainResult(out, [])

    anchor_feats = [
        featurize(p.anchor_text, out.ngram_sizes, out.feature_space) for p in pairs
    ]
    positive_feats = [
        featurize(render(catalog.get(p.tool_id), p.rendering), out.ngram_sizes, out.feature_space)
        for p in pairs
    ]

    n = len(pairs)
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch
    rng = np.random.default_rng(cfg.seed)
    grad = np.zeros_like(out.weights)
    named_params = {"weights": out.weights}
    losses: list[float] = []
    step = 0

    for _ in range(cfg.epochs):
        order = rng.permutation(n) if cfg.shuffle else np.arange(n)
        epoch_loss = 0.0
        for start in range(0, n, cfg.batch_size):
            chosen = order[start : start + cfg.batch_size]
            loss = _train_step(out, anchor_feats, positive_feats, chosen, grad)
            if not math.isfinite(loss):
                raise FloatingPointError(
                    f"non-finite InfoNCE loss at step {step}; lower the learning rate"
                )
            lr = warmup_cosine_lr(step, total_steps, cfg.lr, cfg.warmup_frac)
            adamw_update(named_params, {"weights": grad}, out.opt, lr, weight_decay=cfg.weight_decay)
            epoch_loss += loss * len(chosen)
            step += 1
        losses.append(epoch_loss / n)

    out.step += step
    return EncoderTrainResult(out, losses)


def _train_step(params, anchor_feats, positive_feats, chosen, grad_out) -> float:
    b = len(chosen)
    ea = np.empty((b, params.dim), dtype=np.float64)
    na = np.empty(b, dtype=np.float64)
    ep = np.empty((b, params.dim), dtype=np.float64)
    np_ = np.empty(b, dtype=np.float64)
    fa = []
    fp = []
    for row, i in enumerate(chosen):
        fa.append(anchor_feats[i])
        fp.append(positive_feats[i])
        ea[row], na[row] = _embed_features(params, anchor_feats[i])
        ep[row], np_[row] = _embed_features(params, positive_feats[i])

    sims = (ea @ ep.T) / params.tau
    if not np.all(np.isfinite(sims)):
        raise FloatingPointError("non-finite similarity matrix during training")
    rows = _log_softmax(sims, axis=1)
    cols = _log_softmax(sims, axis=0)
    diag = np.arange(b)
    loss = float(-(rows[diag, diag].sum() + cols[diag, diag].sum()) / (2.0 * b))

    d_sims = (np.exp(rows) + np.exp(cols)) / (2.0 * b)
    d_sims[diag, diag] -= 1.0 / b
    d_anchor = (d_sims @ ep) / params.tau
    d_positive = (d_sims.T @ ea) / params.tau

    grad_out.fill(0.0)
    _accumulate_embedding_grad(grad_out, fa, ea, na, d_anchor)
    _accumulate_embedding_grad(grad_out, fp, ep, np_, d_positive)
    return loss


_CKPT_MAGIC = b"TCEN"
_CKPT_VERSION = 1


def save_checkpoint(params: EncoderParams, path: str | Path) -> None:
    """Binary layout: magic, version, (feature_space, dim, tau, n-gram sizes,
    step) header, row-major float64 weights, trailing CRC32 of the weights."""
    path = Path(path)
    weights = np.ascontiguousarray(params.weights, dtype=np.float64)
    payload = weights.tobytes()
    sizes = params.ngram_sizes
    header = struct.pack(
        f"<4sIQId B{len(sizes)}B Q".replace(" ", ""),
        _CKPT_MAGIC,
        _CKPT_VERSION,
        params.feature_space,
        params.dim,
        params.tau,
        len(sizes),
        *sizes,
        params.step,
    )
    with path.open("wb") as handle:
        handle.write(header)
        handle.write(payload)
        handle.write(struct.pack("<I", zlib.crc32(payload)))


def load_checkpoint(
    path: str | Path,
    expected_dim: int | None = None,
    expected_feature_space: int | None = None,
) -> EncoderParams:
    path = Path(path)
    blob = path.read_bytes()
    base = struct.calcsize("<4sIQIdB")
    if len(blob) < base:
        raise CheckpointError(f"{path}: truncated checkpoint header")
    magic, version, feature_space, dim, tau, n_sizes = struct.unpack_from("<4sIQIdB", blob, 0)
    if magic != _CKPT_MAGIC:
        raise CheckpointError(f"{path}: not an encoder checkpoint")
    if version != _CKPT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    offset = base
    if len(blob) < offset + n_sizes + 8:
        raise CheckpointError(f"{path}: truncated checkpoint header")
    sizes = struct.unpack_from(f"<{n_sizes}B", blob, offset)
    offset += n_sizes
    (step,) = struct.unpack_from("<Q", blob, offset)
    offset += 8

    expected_bytes = feature_space * dim * 8
    if len(blob) != offset + expected_bytes + 4:
        raise CheckpointError(f"{path}: truncated or oversized checkpoint body")
    payload = blob[offset : offset + expected_bytes]
    (crc,) = struct.unpack_from("<I", blob, offset + expected_bytes)
    if zlib.crc32(payload) != crc:
        raise CheckpointError(f"{path}: checksum mismatch, file is corrupt")
    if expected_dim is not None and dim != expected_dim:
        raise CheckpointError(f"{path}: dimension mismatch (found {dim}, expected {expected_dim})")
    if expected_feature_space is not None and feature_space != expected_feature_space:
        raise CheckpointError(
            f"{path}: feature-space mismatch (found {feature_space}, expected {expected_feature_space})"
        )

    weights = np.frombuffer(payload, dtype=np.float64).reshape(feature_space, dim).copy()
    return EncoderParams(weights=weights, tau=tau, ngram_sizes=tuple(sizes), step=step)
