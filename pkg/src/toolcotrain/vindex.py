"""Cosine top-k retrieval over precomputed catalog embeddings.

Exact scan is the evaluation default; a clustered (inverted-list) mode
exists for the performance surface and is never used to produce metrics.
The index is immutable after build and safe for concurrent readers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .catalog import RenderingId, ToolCatalog, render
from .encoder import EncoderParams, embed


@dataclass
class RetrievalResult:
    """Ranked (tool_id, score) list; scores non-increasing, ties by id."""

    ranked: list[tuple[str, float]]

    @property
    def ids(self) -> list[str]:
        return [tool_id for tool_id, _ in self.ranked]


@dataclass
class _ApproxState:
    centroids: np.ndarray
    assignments: list[np.ndarray]  # member row indices per cluster


@dataclass
class VectorIndex:
    tool_ids: list[str]
    vectors: np.ndarray  # (n, dim), unit rows
    rendering: RenderingId
    encoder_fingerprint: str
    _id_order: np.ndarray = field(init=False, repr=False)
    _approx: _ApproxState | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if len(self.tool_ids) != self.vectors.shape[0]:
            raise ValueError("id list and vector matrix disagree on size")
        if len(set(self.tool_ids)) != len(self.tool_ids):
            raise ValueError("tool ids in an index must be unique")
        # Rank of each row in ascending-id order; used as the tie-breaking key.
        order = sorted(range(len(self.tool_ids)), key=lambda i: self.tool_ids[i])
        ranks = np.empty(len(order), dtype=np.int64)
        for rank, row in enumerate(order):
            ranks[row] = rank
        self._id_order = ranks

    @property
    def size(self) -> int:
        return len(self.tool_ids)

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    def prepare_approx(self, n_clusters: int | None = None, seed: int = 0, iterations: int = 8) -> None:
        """Attach a clustered search structure (k-means over the unit vectors)."""
        n = self.size
        if n_clusters is None:
            n_clusters = max(1, int(round(np.sqrt(n))))
        n_clusters = min(n_clusters, n)
        rng = np.random.default_rng(seed)
        start = rng.choice(n, size=n_clusters, replace=False)
        centroids = self.vectors[np.sort(start)].copy()
        assign = np.zeros(n, dtype=np.int64)
        for _ in range(iterations):
            assign = np.argmax(self.vectors @ centroids.T, axis=1)
            for c in range(n_clusters):
                members = self.vectors[assign == c]
                if len(members):
                    mean = members.mean(axis=0)
                    norm = np.linalg.norm(mean)
                    if norm > 0:
                        centroids[c] = mean / norm
        assignments = [np.flatnonzero(assign == c) for c in range(n_clusters)]
        self._approx = _ApproxState(centroids=centroids, assignments=assignments)


def build_index(
    params: EncoderParams,
    catalog: ToolCatalog,
    rendering: RenderingId = RenderingId.R5,
) -> VectorIndex:
    """Embed every tool once under the given rendering."""
    if len(catalog) == 0:
        raise ValueError("cannot build an index over an empty catalog")
    vectors = np.empty((len(catalog), params.dim), dtype=np.float64)
    ids = []
    for i, tool in enumerate(catalog):
        vectors[i] = embed(params, render(tool, rendering))
        ids.append(tool.id)
    return VectorIndex(
        tool_ids=ids,
        vectors=vectors,
        rendering=rendering,
        encoder_fingerprint=params.fingerprint(),
    )


def _rank_rows(index: VectorIndex, rows: np.ndarray, scores: np.ndarray, k: int) -> RetrievalResult:
    # lexsort: last key is primary.  Sort by descending score, then ascending id.
    order = np.lexsort((index._id_order[rows], -scores))
    top = order[: min(k, rows.size)]
    return RetrievalResult(
        ranked=[(index.tool_ids[int(rows[i])], float(scores[i])) for i in top]
    )


def topk(index: VectorIndex, query_vec: np.ndarray, k: int) -> RetrievalResult:
    """Exact inner-product top-k; ties broken by ascending tool id."""
    if k < 1:
        raise ValueError("k must be at least 1")
    query_vec = np.asarray(query_vec, dtype=np.float64)
    if query_vec.shape != (index.dim,):
        raise ValueError(
            f"query vector has shape {query_vec.shape}, index dimension is {index.dim}"
        )
    scores = index.vectors @ query_vec
    rows = np.arange(index.size)
    return _rank_rows(index, rows, scores, k)


@dataclass
class ApproxConfig:
    """``n_probe`` clusters are scanned exactly; probing all of them
    reproduces the exact result."""

    n_probe: int = 24

    def __post_init__(self) -> None:
        if self.n_probe < 1:
            raise ValueError("n_probe must be at least 1")


def topk_approx(
    index: VectorIndex,
    query_vec: np.ndarray,
    k: int,
    cfg: ApproxConfig | None = None,
) -> RetrievalResult:
    """Clustered search: score centroids, scan the best ``n_probe`` lists."""
    if index._approx is None:
        raise ValueError("index has no approximate structure; call prepare_approx first")
    if k < 1:
        raise ValueError("k must be at least 1")
    cfg = cfg or ApproxConfig()
    query_vec = np.asarray(query_vec, dtype=np.float64)
    if query_vec.shape != (index.dim,):
        raise ValueError(
            f"query vector has shape {query_vec.shape}, index dimension is {index.dim}"
        )
    state = index._approx
    n_clusters = state.centroids.shape[0]
    n_probe = min(cfg.n_probe, n_clusters)
    centroid_scores = state.centroids @ query_vec
    probe = np.argsort(-centroid_scores, kind="stable")[:n_probe]
    rows = np.concatenate([state.assignments[int(c)] for c in probe]) if n_probe else np.empty(0, np.int64)
    if rows.size == 0:
        rows = np.arange(index.size)
    scores = index.vectors[rows] @ query_vec
    return _rank_rows(index, rows, scores, k)
