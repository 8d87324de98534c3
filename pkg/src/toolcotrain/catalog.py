"""Tool catalog data model: records, renderings, queries, and corpus ingestion.

A corpus file is line-delimited JSON with two record kinds distinguished by a
``kind`` field ("tool" | "query").  The catalog is immutable after load and
safe for concurrent reads.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np


class CorpusError(ValueError):
    """Raised for malformed or inconsistent corpus/lexicon files."""


class Tier(str, Enum):
    G1 = "G1"
    G2 = "G2"
    G3 = "G3"


class Split(str, Enum):
    TRAIN = "train"
    EVAL_STANDARD = "eval_standard"
    EVAL_VAGUE = "eval_vague"


class RenderingId(str, Enum):
    """The five serialization conventions for a tool record.

    R5 is the full record and is the designated index-time rendering.
    """

    R1 = "R1"
    R2 = "R2"
    R3 = "R3"
    R4 = "R4"
    R5 = "R5"


ALL_RENDERINGS: tuple[RenderingId, ...] = tuple(RenderingId)
INDEX_RENDERING = RenderingId.R5


@dataclass(frozen=True)
class ToolRecord:
    id: str
    title: str
    api_name: str
    tool_description: str
    api_description: str
    tier: Tier

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("tool id must be a non-empty string")


@dataclass(frozen=True)
class QueryExample:
    query_id: str
    text: str
    gold_tool_ids: frozenset[str]
    tier: Tier
    split: Split

    def __post_init__(self) -> None:
        if not self.query_id:
            raise ValueError("query_id must be a non-empty string")
        if not self.gold_tool_ids:
            raise ValueError(f"query {self.query_id!r} has an empty gold tool set")
        object.__setattr__(self, "gold_tool_ids", frozenset(self.gold_tool_ids))


@dataclass(frozen=True)
class TrainingPair:
    """One contrastive (anchor, tool) pair.

    ``anchor_kind`` records the anchor's provenance ("query" for raw user
    queries, "description" for generator output) so later training stages can
    assert that no raw query leaked into a description-only stage.
    """

    anchor_text: str
    tool_id: str
    rendering: RenderingId
    anchor_kind: str = "query"

    def __post_init__(self) -> None:
        if self.anchor_kind not in ("query", "description"):
            raise ValueError(f"unknown anchor_kind {self.anchor_kind!r}")


class ToolCatalog(Sequence[ToolRecord]):
    """Immutable id-indexed view over a list of tool records."""

    def __init__(self, tools: Iterable[ToolRecord]):
        self._tools = list(tools)
        self._by_id: dict[str, ToolRecord] = {}
        for tool in self._tools:
            if tool.id in self._by_id:
                raise CorpusError(f"duplicate tool id {tool.id!r}")
            self._by_id[tool.id] = tool

    def __len__(self) -> int:
        return len(self._tools)

    def __getitem__(self, i):
        return self._tools[i]

    def __iter__(self) -> Iterator[ToolRecord]:
        return iter(self._tools)

    def get(self, tool_id: str) -> ToolRecord:
        try:
            return self._by_id[tool_id]
        except KeyError:
            raise KeyError(f"unknown tool id {tool_id!r}") from None

    def __contains__(self, tool_id) -> bool:
        return tool_id in self._by_id

    @property
    def ids(self) -> list[str]:
        return [t.id for t in self._tools]


_SEGMENT_SEP = " | "


def render(tool: ToolRecord, rendering: RenderingId) -> str:
    """Deterministic text serialization of a tool record.

    Fields appear in a fixed order with labels, joined by ``" | "``; the
    title-only form carries no label.  Empty fields drop their whole segment
    so separators never dangle.
    """
    if rendering is RenderingId.R1:
        return tool.title

    segments: list[str] = []
    if tool.title:
        segments.append(f"Tool: {tool.title}")
    if tool.api_name:
        segments.append(f"API: {tool.api_name}")
    if rendering in (RenderingId.R3, RenderingId.R5) and tool.tool_description:
        segments.append(f"Tool Description: {tool.tool_description}")
    if rendering in (RenderingId.R4, RenderingId.R5) and tool.api_description:
        segments.append(f"API Description: {tool.api_description}")
    return _SEGMENT_SEP.join(segments)


def sample_rendering(
    rng: np.random.Generator,
    choices: Sequence[RenderingId] = ALL_RENDERINGS,
) -> RenderingId:
    """Uniform draw over the rendering family (restrictable for tests)."""
    return choices[int(rng.integers(0, len(choices)))]


def flatten(
    examples: Sequence[QueryExample],
    rng: np.random.Generator | None = None,
    fixed_rendering: RenderingId | None = None,
) -> list[TrainingPair]:
    """Expand (query, gold set) examples into one pair per gold tool.

    Renderings are sampled uniformly per pair unless ``fixed_rendering`` pins
    them (the query-anchored warmup trains against the full record only).
    Gold ids are visited in sorted order so output is deterministic.
    """
    if fixed_rendering is None and rng is None:
        raise ValueError("flatten needs an rng when no fixed rendering is given")
    pairs: list[TrainingPair] = []
    for example in examples:
        if not example.gold_tool_ids:
            raise CorpusError(f"query {example.query_id!r} has an empty gold tool set")
        for tool_id in sorted(example.gold_tool_ids):
            rendering = fixed_rendering if fixed_rendering is not None else sample_rendering(rng)
            pairs.append(
                TrainingPair(
                    anchor_text=example.text,
                    tool_id=tool_id,
                    rendering=rendering,
                    anchor_kind="query",
                )
            )
    return pairs


def stratified_subset(
    catalog: Sequence[ToolRecord],
    target_n: int,
    gold_ids: set[str],
    rng: np.random.Generator,
) -> list[ToolRecord]:
    """Subset the catalog to ``target_n`` tools, keeping every gold tool.

    Remaining slots are filled from the non-gold pool with per-tier quotas
    proportional to the pool's tier sizes (largest-remainder rounding, ties
    by tier order), sampled without replacement.
    """
    by_id = {t.id: t for t in catalog}
    missing = sorted(g for g in gold_ids if g not in by_id)
    if missing:
        raise ValueError(f"gold ids not in catalog: {missing}")
    if target_n < len(gold_ids):
        raise ValueError(f"target_n={target_n} is below the gold set size {len(gold_ids)}")
    if target_n > len(catalog):
        raise ValueError(f"target_n={target_n} exceeds catalog size {len(catalog)}")

    kept = [by_id[g] for g in sorted(gold_ids)]
    pool = [t for t in catalog if t.id not in gold_ids]
    remaining = target_n - len(kept)
    if remaining == 0:
        return kept

    tiers = list(Tier)
    pool_by_tier = {tier: [t for t in pool if t.tier is tier] for tier in tiers}
    quotas = _largest_remainder_quotas(
        [len(pool_by_tier[tier]) for tier in tiers], remaining
    )
    for tier, quota in zip(tiers, quotas):
        bucket = pool_by_tier[tier]
        if quota == 0:
            continue
        picks = rng.choice(len(bucket), size=quota, replace=False)
        kept.extend(bucket[int(i)] for i in np.sort(picks))
    return kept


def _largest_remainder_quotas(sizes: list[int], total: int) -> list[int]:
    pool = sum(sizes)
    if total > pool:
        raise ValueError(f"cannot draw {total} items from a pool of {pool}")
    if pool == 0:
        return [0] * len(sizes)
    shares = [total * s / pool for s in sizes]
    quotas = [int(share) for share in shares]
    leftover = total - sum(quotas)
    # Hand out the leftover units by descending fractional part, ties by
    # position; capped at the bucket size.
    order = sorted(range(len(sizes)), key=lambda i: (-(shares[i] - quotas[i]), i))
    for i in order:
        if leftover == 0:
            break
        if quotas[i] < sizes[i]:
            quotas[i] += 1
            leftover -= 1
    return quotas


_FILLER_PREFIXES = ("hey so", "um", "quick one", "listen", "real quick", "so like")
_FILLER_SUFFIXES = (
    "if that makes sense",
    "or whatever",
    "thanks a bunch",
    "no rush",
    "when you get a chance",
)


def vaguify(
    query: QueryExample,
    lexicon: Mapping[str, str],
    rng: np.random.Generator,
    *,
    filler_prob: float = 0.0,
    new_query_id: str | None = None,
) -> QueryExample:
    """Colloquial rewrite of a query via case-insensitive token substitution.

    The gold tool set and tier are never touched.  Queries with no matched
    token get a filler perturbation instead, so the output text always
    differs in surface form; matched queries take a filler only with
    ``filler_prob``.
    """
    text = query.text
    n_subs = 0
    if lexicon:
        keys = sorted(lexicon, key=len, reverse=True)
        pattern = re.compile(
            r"\b(?:" + "|".join(re.escape(k) for k in keys) + r")\b", re.IGNORECASE
        )
        lower_map = {k.lower(): v for k, v in lexicon.items()}

        def _swap(match: re.Match) -> str:
            nonlocal n_subs
            n_subs += 1
            return lower_map[match.group(0).lower()]

        text = pattern.sub(_swap, text)

    add_filler = n_subs == 0 or (filler_prob > 0 and rng.random() < filler_prob)
    if add_filler:
        if rng.random() < 0.5:
            text = f"{_FILLER_PREFIXES[int(rng.integers(0, len(_FILLER_PREFIXES)))]}, {text}"
        else:
            text = f"{text}, {_FILLER_SUFFIXES[int(rng.integers(0, len(_FILLER_SUFFIXES)))]}"

    return replace(
        query,
        query_id=new_query_id if new_query_id is not None else f"{query.query_id}.vague",
        text=text,
        split=Split.EVAL_VAGUE,
    )


_TOOL_FIELDS = ("id", "title", "api_name", "tool_description", "api_description", "tier")
_QUERY_FIELDS = ("query_id", "text", "gold_tool_ids", "tier", "split")


def load_corpus(path: str | Path) -> tuple[ToolCatalog, list[QueryExample]]:
    """Parse and validate a corpus file.

    Duplicate ids and gold ids that do not resolve to a catalog tool are
    rejected; malformed lines are reported with their line number.
    """
    path = Path(path)
    tools: list[ToolRecord] = []
    queries: list[QueryExample] = []
    with path.open("r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}: line {lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(record, dict):
                raise CorpusError(f"{path}: line {lineno}: record is not an object")
            kind = record.get("kind")
            try:
                if kind == "tool":
                    tools.append(_parse_tool(record))
                elif kind == "query":
                    queries.append(_parse_query(record))
                else:
                    raise CorpusError(f"unknown record kind {kind!r}")
            except (CorpusError, ValueError, KeyError) as exc:
                raise CorpusError(f"{path}: line {lineno}: {exc}") from exc

    catalog = ToolCatalog(tools)
    seen_queries: set[str] = set()
    for query in queries:
        if query.query_id in seen_queries:
            raise CorpusError(f"{path}: duplicate query id {query.query_id!r}")
        seen_queries.add(query.query_id)
        for gold in sorted(query.gold_tool_ids):
            if gold not in catalog:
                raise CorpusError(
                    f"{path}: query {query.query_id!r} references unknown tool id {gold!r}"
                )
    return catalog, queries


def _parse_tool(record: dict) -> ToolRecord:
    missing = [f for f in _TOOL_FIELDS if f not in record]
    if missing:
        raise CorpusError(f"tool record missing fields {missing}")
    return ToolRecord(
        id=str(record["id"]),
        title=str(record["title"]),
        api_name=str(record["api_name"]),
        tool_description=str(record["tool_description"]),
        api_description=str(record["api_description"]),
        tier=Tier(record["tier"]),
    )


def _parse_query(record: dict) -> QueryExample:
    missing = [f for f in _QUERY_FIELDS if f not in record]
    if missing:
        raise CorpusError(f"query record missing fields {missing}")
    gold = record["gold_tool_ids"]
    if not isinstance(gold, list) or not gold:
        raise CorpusError("gold_tool_ids must be a non-empty list")
    return QueryExample(
        query_id=str(record["query_id"]),
        text=str(record["text"]),
        gold_tool_ids=frozenset(str(g) for g in gold),
        tier=Tier(record["tier"]),
        split=Split(record["split"]),
    )


def write_corpus(path: str | Path, tools: Iterable[ToolRecord], queries: Iterable[QueryExample]) -> None:
    """Serialize a corpus back to its line-delimited form (deterministic bytes)."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as handle:
        for tool in tools:
            handle.write(
                json.dumps(
                    {
                        "kind": "tool",
                        "id": tool.id,
                        "title": tool.title,
                        "api_name": tool.api_name,
                        "tool_description": tool.tool_description,
                        "api_description": tool.api_description,
                        "tier": tool.tier.value,
                    },
                    sort_keys=True,
                )
                + "\n"
            )
        for query in queries:
            handle.write(
                json.dumps(
                    {
                        "kind": "query",
                        "query_id": query.query_id,
                        "text": query.text,
                        "gold_tool_ids": sorted(query.gold_tool_ids),
                        "tier": query.tier.value,
                        "split": query.split.value,
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def load_lexicon(path: str | Path) -> dict[str, str]:
    """Read a two-column (technical token, colloquial phrase) TSV file."""
    path = Path(path)
    lexicon: dict[str, str] = {}
    with path.open("r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            stripped = line.rstrip("\n")
            if not stripped.strip() or stripped.lstrip().startswith("#"):
                continue
            parts = stripped.split("\t")
            if len(parts) != 2 or not parts[0] or not parts[1]:
                raise CorpusError(f"{path}: line {lineno}: expected 'token<TAB>phrase'")
            lexicon[parts[0]] = parts[1]
    return lexicon


def write_lexicon(path: str | Path, lexicon: Mapping[str, str]) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as handle:
        for key in sorted(lexicon):
            handle.write(f"{key}\t{lexicon[key]}\n")
