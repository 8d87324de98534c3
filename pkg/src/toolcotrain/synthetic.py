"""Seeded synthetic corpora with a deliberate colloquial/technical gap.

Tools carry invented-but-pronounceable action words ("forecast", "geotrace")
embedded in catalog-style records.  Standard queries mention those technical
words directly; the vague split swaps them for colloquial phrases via the
corpus lexicon, so an encoder trained on surface overlap loses its signal
exactly the way real paraphrased queries break lexical retrieval.  All
construction is deterministic under the seed.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .catalog import (
    QueryExample,
    Split,
    Tier,
    ToolCatalog,
    ToolRecord,
    vaguify,
    write_corpus,
    write_lexicon,
)

_STEMS = (
    "fore", "geo", "iso", "multi", "tele", "hydro", "aero", "chrono", "crypto",
    "photo", "thermo", "micro", "macro", "omni", "poly", "mono", "auto", "retro",
    "ultra", "inter", "intra", "proto", "pseudo", "quasi", "semi", "super",
    "trans", "hyper", "meta", "para", "peri", "ana", "cata", "dia", "epi",
    "exo", "endo", "grav", "lumen", "sono", "tri", "octo", "deca", "nano",
)
_MIDS = (
    "", "flux", "grid", "node", "wave", "core", "link", "path", "band", "cell",
    "loop", "mesh", "snap", "dash", "rail", "tone",
)
_SUFFIXES = (
    "cast", "code", "metric", "index", "graph", "scan", "trace", "scope",
    "rank", "merge", "parse", "route", "batch", "sync", "audit", "probe",
)

_DOMAINS = (
    "weather", "finance", "travel", "sports", "music", "movies", "food",
    "health", "maps", "language", "shopping", "news", "email", "calendar",
    "payments", "gaming", "fitness", "realestate", "jobs", "education",
    "logistics", "energy", "social", "security", "astronomy",
)

_TITLE_SUFFIXES = ("Hub", "Box", "Desk", "Port", "Base", "Works", "Point", "Station")
_API_VERBS = ("get", "fetch", "query", "list", "lookup")
_QUALIFIERS = (
    "hourly", "daily", "regional", "global", "historic", "live", "batched",
    "premium", "compact", "secure", "cached", "streaming", "verified", "ranked",
)
_ENTITY_KINDS = ("city", "region", "account", "team", "artist", "title", "route", "symbol")

_COLLOQ_OPENERS = (
    "sort", "figure", "check", "peek", "poke", "dig", "suss", "work",
    "eyeball", "nose", "riff", "noodle",
)
_COLLOQ_JOINERS = ("out", "into", "around", "over", "through", "up")
_COLLOQ_OBJECTS = (
    "the thing", "that stuff", "the deal", "the lowdown", "the scoop",
    "the vibe", "the gist", "the skinny", "what matters", "the works",
    "the angle", "the drift", "the mood", "the buzz",
)

_QUERY_OPENERS = (
    "need", "grab", "fetch", "pull up", "show me", "whats", "give me",
    "find", "get", "looking for",
)
_QUERY_TAILS = ("", " today", " right now", " for tomorrow", " this week", " asap", " please")
_ENTITIES = (
    "berlin", "tokyo", "paris", "austin", "oslo", "cairo", "lima", "quito",
    "delhi", "sydney", "dublin", "seoul", "bogota", "nairobi", "vienna",
    "havana", "lagos", "manila", "prague", "athens", "denver", "zagreb",
    "riga", "tunis", "hanoi", "perth", "quebec", "leipzig", "malmo", "gdansk",
    "bergen", "turin", "porto", "basel", "ghent", "lyon", "brno", "arhus",
    "salem", "fresno",
)


@dataclass
class SyntheticCorpus:
    tools: ToolCatalog
    queries: list[QueryExample]
    lexicon: dict[str, str]  # technical action word -> colloquial phrase

    def split(self, split: Split) -> list[QueryExample]:
        return [q for q in self.queries if q.split is split]


def _pick(rng: np.random.Generator, pool) -> str:
    return pool[int(rng.integers(0, len(pool)))]


def _tier_counts(per_domain: int) -> tuple[int, int, int]:
    g1 = max(1, int(np.ceil(0.55 * per_domain)))
    g2 = int(np.ceil(0.30 * per_domain))
    while g1 + g2 > per_domain:
        if g2 > 0:
            g2 -= 1
        else:
            g1 -= 1
    return g1, g2, per_domain - g1 - g2


def make_corpus(
    n_tools: int = 500,
    n_train_queries: int = 2000,
    n_eval_queries: int = 300,
    seed: int = 7,
    domain_mention_prob: float = 0.6,
) -> SyntheticCorpus:
    """Build a catalog plus train/eval/vague query splits.

    Tools are spread round-robin over domains; tiers are assigned within
    each domain (G1-heavy) so every tier has same-domain and cross-domain
    material.  Each eval-standard query gets a vague twin with the same
    gold set.
    """
    if n_tools < 2:
        raise ValueError("need at least two tools")
    rng = np.random.default_rng(seed)

    combos = [f"{s}{m}{x}" for s in _STEMS for m in _MIDS for x in _SUFFIXES]
    if n_tools > len(combos):
        raise ValueError(f"cannot mint {n_tools} unique action words (max {len(combos)})")
    actions = [combos[int(i)] for i in rng.permutation(len(combos))[:n_tools]]

    n_domains = min(len(_DOMAINS), max(2, n_tools // 20))
    domains = _DOMAINS[:n_domains]

    tools: list[ToolRecord] = []
    by_tier_domain: dict[tuple[Tier, str], list[ToolRecord]] = {}
    per_domain_indices: dict[str, list[int]] = {d: [] for d in domains}
    for i in range(n_tools):
        per_domain_indices[domains[i % n_domains]].append(i)

    for domain in domains:
        indices = per_domain_indices[domain]
        g1, g2, _ = _tier_counts(len(indices))
        for pos, i in enumerate(indices):
            tier = Tier.G1 if pos < g1 else Tier.G2 if pos < g1 + g2 else Tier.G3
            action = actions[i]
            qualifier = _pick(rng, _QUALIFIERS)
            qualifier2 = _pick(rng, _QUALIFIERS)
            entity_kind = _pick(rng, _ENTITY_KINDS)
            tool = ToolRecord(
                id=f"t{i:05d}",
                title=f"{domain.title()}{action.title()}{_pick(rng, _TITLE_SUFFIXES)}",
                api_name=f"{_pick(rng, _API_VERBS)}_{action}_{domain}",
                tool_description=(
                    f"Returns {qualifier} {action} results for any {entity_kind} "
                    f"in the {domain} domain."
                ),
                api_description=(
                    f"Endpoint serving {action} lookups over {domain} data "
                    f"with {qualifier2} output."
                ),
                tier=tier,
            )
            tools.append(tool)
            by_tier_domain.setdefault((tier, domain), []).append(tool)

    catalog = ToolCatalog(tools)
    action_of = {t.id: actions[int(t.id[1:])] for t in tools}

    def _tool_pool(tier: Tier) -> list[ToolRecord]:
        return [t for t in tools if t.tier is tier]

    def _draw_query(split: Split, i: int) -> QueryExample:
        roll = rng.random()
        tier = Tier.G1 if roll < 0.55 else Tier.G2 if roll < 0.90 else Tier.G3
        opener = _pick(rng, _QUERY_OPENERS)
        entity = _pick(rng, _ENTITIES)
        tail = _pick(rng, _QUERY_TAILS)

        if tier is Tier.G2:
            # Two tools from one domain, when the domain has a pair to give.
            domains_with_pairs = sorted(
                d for (t, d), pool in by_tier_domain.items() if t is Tier.G2 and len(pool) >= 2
            )
            if domains_with_pairs:
                domain = _pick(rng, domains_with_pairs)
                pool = by_tier_domain[(Tier.G2, domain)]
                picks = rng.choice(len(pool), size=2, replace=False)
                pair = [pool[int(j)] for j in np.sort(picks)]
                a1, a2 = action_of[pair[0].id], action_of[pair[1].id]
                text = f"{opener} the {a1} and the {a2} for {entity}"
                if rng.random() < domain_mention_prob:
                    text += f" in {domain}"
                text += tail
                return QueryExample(
                    query_id=f"q_{split.value}_{i:05d}",
                    text=text,
                    gold_tool_ids=frozenset(t.id for t in pair),
                    tier=tier,
                    split=split,
                )
            tier = Tier.G2  # fall through to a single-tool query below

        if tier is Tier.G3:
            pools = sorted(
                d for (t, d), pool in by_tier_domain.items() if t is Tier.G3 and pool
            )
            if len(pools) >= 2:
                picked = rng.choice(len(pools), size=2, replace=False)
                d1, d2 = pools[int(picked.min())], pools[int(picked.max())]
                t1 = _pick(rng, by_tier_domain[(Tier.G3, d1)])
                t2 = _pick(rng, by_tier_domain[(Tier.G3, d2)])
                entity2 = _pick(rng, _ENTITIES)
                a1, a2 = action_of[t1.id], action_of[t2.id]
                text = f"{opener} the {a1} for {entity} plus the {a2} for {entity2}"
                if rng.random() < domain_mention_prob:
                    text += f" across {d1} and {d2}"
                text += tail
                return QueryExample(
                    query_id=f"q_{split.value}_{i:05d}",
                    text=text,
                    gold_tool_ids=frozenset({t1.id, t2.id}),
                    tier=tier,
                    split=split,
                )

        pool = _tool_pool(tier) or tools
        tool = _pick(rng, pool)
        action = action_of[tool.id]
        domain = tool.api_name.rsplit("_", 1)[1]
        text = f"{opener} the {action} for {entity}"
        if rng.random() < domain_mention_prob:
            text += f" in {domain}"
        text += tail
        return QueryExample(
            query_id=f"q_{split.value}_{i:05d}",
            text=text,
            gold_tool_ids=frozenset({tool.id}),
            tier=tier,
            split=split,
        )

    queries: list[QueryExample] = []
    for i in range(n_train_queries):
        queries.append(_draw_query(Split.TRAIN, i))
    eval_standard: list[QueryExample] = []
    for i in range(n_eval_queries):
        eval_standard.append(_draw_query(Split.EVAL_STANDARD, i))
    queries.extend(eval_standard)

    # Lexicon covers every action word reachable from the eval split.
    eval_actions = sorted(
        {action_of[tool_id] for q in eval_standard for tool_id in q.gold_tool_ids}
    )
    phrases = [
        f"{a} {b} {c}"
        for a in _COLLOQ_OPENERS
        for b in _COLLOQ_JOINERS
        for c in _COLLOQ_OBJECTS
    ]
    if len(eval_actions) > len(phrases):
        raise ValueError("not enough colloquial phrases for the eval action vocabulary")
    order = rng.permutation(len(phrases))
    lexicon = {
        action: phrases[int(order[j])] for j, action in enumerate(eval_actions)
    }

    for q in eval_standard:
        queries.append(vaguify(q, lexicon, rng))

    return SyntheticCorpus(tools=catalog, queries=queries, lexicon=lexicon)


def write_corpus_files(corpus: SyntheticCorpus, out_dir: str | Path) -> tuple[Path, Path]:
    """Materialize corpus.jsonl and lexicon.tsv under ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    corpus_path = out_dir / "corpus.jsonl"
    lexicon_path = out_dir / "lexicon.tsv"
    write_corpus(corpus_path, corpus.tools, corpus.queries)
    write_lexicon(lexicon_path, corpus.lexicon)
    return corpus_path, lexicon_path


def fixture_corpus(seed: int = 11) -> SyntheticCorpus:
    """Small deterministic corpus for pipeline tests and demos."""
    return make_corpus(n_tools=60, n_train_queries=160, n_eval_queries=48, seed=seed)
