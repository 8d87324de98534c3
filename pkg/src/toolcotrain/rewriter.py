"""Query-to-description generator: prompt handling, a trainable token policy
with exact sequence log-probabilities, the deterministic clean operator, and
an HTTP adapter for external chat-completion models.

The built-in policy is a fixed-order Markov emission model over the catalog
vocabulary, mixed with per-feature emission tables selected by hashed query
tokens.  A substitution lexicon lets colloquial phrases activate the feature
rows of their technical counterparts, which is what allows vague queries to
be rewritten into catalog-style text.
"""

from __future__ import annotations

import json
import re
import struct
import time
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import requests

from .catalog import ALL_RENDERINGS, RenderingId, ToolCatalog, render
from .hashing import derive_seed, sha256_hex, stable_bucket

_TOKEN_RE = re.compile(r"[a-z0-9]+")

EOS_TOKEN = "<eos>"
_BOS_TOKEN = "<bos>"


def tokenize(text: str) -> list[str]:
    """Lowercased alphanumeric word tokens; punctuation acts as a separator."""
    return _TOKEN_RE.findall(text.lower())


# ---------------------------------------------------------------------------
# Prompt handling
# ---------------------------------------------------------------------------

_PLACEHOLDER = "{query}"


@dataclass(frozen=True)
class PromptTemplate:
    system_text: str
    user_text: str

    def __post_init__(self) -> None:
        if self.user_text.count(_PLACEHOLDER) != 1:
            raise ValueError("user_text must contain the {query} placeholder exactly once")


DEFAULT_HYDE_PROMPT = PromptTemplate(
    system_text=(
        "You are an expert at understanding API tool pipelines. When given a "
        "user query, you describe the sequence of API calls needed to fulfill "
        "it. Each description should focus on what the tool does, what inputs "
        "it takes, and what data it returns. Write each tool's description as "
        "a single concise technical sentence."
    ),
    user_text=(
        "User query: {query}\n\n"
        "Think about the full pipeline of API calls needed to answer the "
        "query. Describe each API tool in the pipeline in order, explaining "
        "what data it provides and how it feeds into the next step. Be "
        "concise and technical."
    ),
)


def apply_prompt(template: PromptTemplate, query: str) -> str:
    """Substitute the query into the template (verbatim, applied once) and
    join system and user parts with a blank line for the built-in policy."""
    user = template.user_text.replace(_PLACEHOLDER, query, 1)
    return f"{template.system_text}\n\n{user}"


# ---------------------------------------------------------------------------
# Clean operator
# ---------------------------------------------------------------------------

_THINK_OPEN = "<think>"
_THINK_BLOCK = re.compile(r"<think>(?:(?!<think>).)*?</think>", re.DOTALL)
_PREAMBLE = re.compile(r"^(?:Sure|Okay|Of course|Here is|Here's)[^.]*\.\s+")
_LINE_TRAILING_WS = re.compile(r"[ \t]+\n")
_BLANK_RUNS = re.compile(r"\n{3,}")


def clean(text: str, original_query: str) -> str:
    """Deterministic post-processing of generator output.

    In order: remove reasoning-trace blocks (innermost first when nested);
    an unterminated opening marker rejects the whole output and the original
    query stands in; strip leading conversational preambles through their
    first sentence; normalize trailing whitespace and collapse repeated
    blank lines.  The operator is idempotent.
    """
    out = text
    while True:
        stripped = _THINK_BLOCK.sub("", out)
        if stripped == out:
            break
        out = stripped
    if _THINK_OPEN in out:
        return original_query
    # Preambles are stripped to a fixed point; a single pass would leave a
    # second "Sure ..." sentence exposed and break idempotence.
    while True:
        stripped = _PREAMBLE.sub("", out, count=1)
        if stripped == out:
            break
        out = stripped
    out = _LINE_TRAILING_WS.sub("\n", out)
    out = _BLANK_RUNS.sub("\n\n", out)
    return out.rstrip()


# ---------------------------------------------------------------------------
# Generator policy
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DecodeConfig:
    """Sampling controls; temperature zero means greedy decoding."""

    temperature: float = 0.0
    top_p: float = 1.0
    top_k: int | None = None
    max_tokens: int = 150

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")
        if not (0.0 < self.top_p <= 1.0):
            raise ValueError("top_p must lie in (0, 1]")
        if self.top_k is not None and self.top_k < 1:
            raise ValueError("top_k must be at least 1 when set")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be at least 1")


# Greedy inference and bootstrap generation share a 150-token budget;
# preference candidates are sampled wider and longer.
GREEDY_DECODE = DecodeConfig(temperature=0.0, top_p=1.0, top_k=None, max_tokens=150)
CANDIDATE_DECODE = DecodeConfig(temperature=0.7, top_p=0.95, top_k=50, max_tokens=300)


@dataclass(frozen=True)
class LexiconEntry:
    """Maps a colloquial phrase to the technical token whose feature row it
    should activate; ``weight`` scales that activation."""

    phrase: str
    token: str
    weight: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "phrase", " ".join(tokenize(self.phrase)))
        object.__setattr__(self, "token", " ".join(tokenize(self.token)))


def invert_lexicon(technical_to_colloquial: dict[str, str], weight: float = 1.0) -> list[LexiconEntry]:
    """Turn a vaguifier lexicon around so the policy can map colloquial
    phrases back onto technical feature rows."""
    return [
        LexiconEntry(phrase=colloquial, token=technical, weight=weight)
        for technical, colloquial in sorted(technical_to_colloquial.items())
    ]


@dataclass
class PolicyConfig:
    order: int = 2
    context_buckets: int = 2048
    feature_buckets: int = 1024
    cond_weight: float = 4.0
    prob_floor: float = 1e-8
    smoothing: float = 1e-3
    backoff: float = 5.0  # pseudo-count mass pulling feature rows to the background

    def __post_init__(self) -> None:
        if self.order < 1:
            raise ValueError("Markov order must be at least 1")
        if self.context_buckets < 1 or self.feature_buckets < 1:
            raise ValueError("bucket counts must be positive")
        if not (0.0 < self.prob_floor < 1e-2):
            raise ValueError("prob_floor must lie in (0, 1e-2)")
        if self.smoothing <= 0:
            raise ValueError("smoothing must be positive")
        if self.cond_weight < 0:
            raise ValueError("cond_weight must be non-negative")
        if self.backoff <= 0:
            raise ValueError("backoff must be positive")


@dataclass(frozen=True)
class GeneratedDescription:
    """One generated sequence with its exact log-probability.

    ``token_ids`` includes the terminal end-of-sequence id when the policy
    stopped on its own; remote generations carry neither ids nor a
    log-probability.  ``cleaned_text`` is filled in by preference-pair
    construction.
    """

    text: str
    token_ids: tuple[int, ...] | None
    log_prob: float | None
    seed: int | None
    cleaned_text: str | None = None


@dataclass
class GeneratorPolicy:
    """Catalog-vocabulary Markov policy with hashed-feature conditioning.

    ``context_table`` holds log-affinities per hashed Markov context;
    ``feature_table`` holds log-affinities per hashed query feature.  The
    emission distribution is a softmax over their mix, floored so every
    probability stays strictly positive.
    """

    config: PolicyConfig
    vocab: list[str]
    context_table: np.ndarray  # (context_buckets, V)
    feature_table: np.ndarray  # (feature_buckets, V)
    lexicon: list[LexiconEntry] = field(default_factory=list)
    prompt: PromptTemplate = DEFAULT_HYDE_PROMPT

    def __post_init__(self) -> None:
        if not self.vocab or self.vocab[0] != EOS_TOKEN:
            raise ValueError("vocab[0] must be the end-of-sequence token")
        self.token_ids = {tok: i for i, tok in enumerate(self.vocab)}
        if len(self.token_ids) != len(self.vocab):
            raise ValueError("vocabulary contains duplicates")
        v = len(self.vocab)
        if self.context_table.shape != (self.config.context_buckets, v):
            raise ValueError("context_table shape does not match config/vocab")
        if self.feature_table.shape != (self.config.feature_buckets, v):
            raise ValueError("feature_table shape does not match config/vocab")

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    @property
    def eos_id(self) -> int:
        return 0

    @classmethod
    def uniform(
        cls,
        catalog: ToolCatalog,
        config: PolicyConfig | None = None,
        lexicon: Sequence[LexiconEntry] = (),
        prompt: PromptTemplate = DEFAULT_HYDE_PROMPT,
        renderings: Sequence[RenderingId] = ALL_RENDERINGS,
    ) -> "GeneratorPolicy":
        """Zero-table policy whose vocabulary comes from catalog renderings."""
        if len(catalog) == 0:
            raise ValueError("cannot build a policy vocabulary from an empty catalog")
        config = config or PolicyConfig()
        words: set[str] = set()
        for tool in catalog:
            for rendering in renderings:
                words.update(tokenize(render(tool, rendering)))
        vocab = [EOS_TOKEN] + sorted(words)
        v = len(vocab)
        return cls(
            config=config,
            vocab=vocab,
            context_table=np.zeros((config.context_buckets, v), dtype=np.float64),
            feature_table=np.zeros((config.feature_buckets, v), dtype=np.float64),
            lexicon=list(lexicon),
            prompt=prompt,
        )

    def copy(self) -> "GeneratorPolicy":
        return GeneratorPolicy(
            config=replace(self.config),
            vocab=list(self.vocab),
            context_table=self.context_table.copy(),
            feature_table=self.feature_table.copy(),
            lexicon=list(self.lexicon),
            prompt=self.prompt,
        )

    # -- conditioning -------------------------------------------------------

    def _feature_bucket(self, token: str) -> int:
        return stable_bucket(token.encode("utf-8"), self.config.feature_buckets)

    def query_features(self, query: str) -> tuple[np.ndarray, np.ndarray]:
        """Hashed feature rows and mixing coefficients for a query.

        Base features are the query's unique tokens (weight 1); lexicon
        phrases found in the query add their technical token's row at the
        entry weight.  Coefficients are normalized to sum to ``cond_weight``.
        """
        tokens = tokenize(query)
        weights: dict[int, float] = {}
        for token in set(tokens):
            row = self._feature_bucket(token)
            weights[row] = weights.get(row, 0.0) + 1.0
        if self.lexicon and tokens:
            padded = " " + " ".join(tokens) + " "
            for entry in self.lexicon:
                if entry.phrase and f" {entry.phrase} " in padded:
                    row = self._feature_bucket(entry.token)
                    weights[row] = weights.get(row, 0.0) + entry.weight
        if not weights:
            return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.float64)
        rows = np.array(sorted(weights), dtype=np.int64)
        coefs = np.array([weights[int(r)] for r in rows], dtype=np.float64)
        coefs *= self.config.cond_weight / coefs.sum()
        return rows, coefs

    def _cond_vector(self, rows: np.ndarray, coefs: np.ndarray) -> np.ndarray:
        if rows.size == 0:
            return np.zeros(self.vocab_size, dtype=np.float64)
        return coefs @ self.feature_table[rows]

    def context_bucket(self, context_tokens: Sequence[str]) -> int:
        window = [_BOS_TOKEN] * self.config.order + list(context_tokens)
        key = "\x1f".join(window[-self.config.order :])
        return stable_bucket(key.encode("utf-8"), self.config.context_buckets)

    def _floor_alpha(self) -> float:
        return self.config.prob_floor * self.vocab_size

    def conditional(self, query: str, context_tokens: Sequence[str]) -> np.ndarray:
        """Full next-token distribution; sums to one, every entry positive."""
        rows, coefs = self.query_features(query)
        cond = self._cond_vector(rows, coefs)
        logits = self.context_table[self.context_bucket(context_tokens)] + cond
        return _floored_softmax(logits, self._floor_alpha())[0]

    # -- persistence --------------------------------------------------------

    def _meta(self) -> dict:
        return {
            "config": {
                "order": self.config.order,
                "context_buckets": self.config.context_buckets,
                "feature_buckets": self.config.feature_buckets,
                "cond_weight": self.config.cond_weight,
                "prob_floor": self.config.prob_floor,
                "smoothing": self.config.smoothing,
            },
            "vocab": self.vocab,
            "lexicon": [[e.phrase, e.token, e.weight] for e in self.lexicon],
            "prompt": {"system_text": self.prompt.system_text, "user_text": self.prompt.user_text},
        }

    def to_bytes(self) -> bytes:
        meta = json.dumps(self._meta(), sort_keys=True, separators=(",", ":")).encode("utf-8")
        m = np.ascontiguousarray(self.context_table, dtype=np.float64)
        q = np.ascontiguousarray(self.feature_table, dtype=np.float64)
        body = m.tobytes() + q.tobytes()
        header = struct.pack("<4sIQ", _POLICY_MAGIC, _POLICY_VERSION, len(meta))
        return header + meta + body + struct.pack("<I", zlib.crc32(body))

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> "GeneratorPolicy":
        blob = Path(path).read_bytes()
        base = struct.calcsize("<4sIQ")
        if len(blob) < base:
            raise ValueError(f"{path}: truncated policy checkpoint")
        magic, version, meta_len = struct.unpack_from("<4sIQ", blob, 0)
        if magic != _POLICY_MAGIC:
            raise ValueError(f"{path}: not a policy checkpoint")
        if version != _POLICY_VERSION:
            raise ValueError(f"{path}: unsupported policy version {version}")
        meta_end = base + meta_len
        if len(blob) < meta_end:
            raise ValueError(f"{path}: truncated policy metadata")
        meta = json.loads(blob[base:meta_end].decode("utf-8"))
        config = PolicyConfig(**meta["config"])
        vocab = list(meta["vocab"])
        v = len(vocab)
        m_bytes = config.context_buckets * v * 8
        q_bytes = config.feature_buckets * v * 8
        if len(blob) != meta_end + m_bytes + q_bytes + 4:
            raise ValueError(f"{path}: truncated or oversized policy body")
        body = blob[meta_end : meta_end + m_bytes + q_bytes]
        (crc,) = struct.unpack_from("<I", blob, meta_end + m_bytes + q_bytes)
        if zlib.crc32(body) != crc:
            raise ValueError(f"{path}: checksum mismatch, file is corrupt")
        context = np.frombuffer(body[:m_bytes], dtype=np.float64).reshape(config.context_buckets, v).copy()
        feature = np.frombuffer(body[m_bytes:], dtype=np.float64).reshape(config.feature_buckets, v).copy()
        return cls(
            config=config,
            vocab=vocab,
            context_table=context,
            feature_table=feature,
            lexicon=[LexiconEntry(p, t, w) for p, t, w in meta["lexicon"]],
            prompt=PromptTemplate(**meta["prompt"]),
        )

    def fingerprint(self) -> str:
        return sha256_hex(self.to_bytes())


_POLICY_MAGIC = b"TCPO"
_POLICY_VERSION = 1


def _floored_softmax(logits: np.ndarray, alpha: float) -> tuple[np.ndarray, np.ndarray]:
    """Return (floored distribution, raw softmax).

    The floor mixes in ``alpha`` of uniform mass so every token keeps at
    least ``alpha / V`` probability regardless of the logits.
    """
    shifted = logits - logits.max()
    expd = np.exp(shifted)
    soft = expd / expd.sum()
    return (1.0 - alpha) * soft + alpha / logits.size, soft


# ---------------------------------------------------------------------------
# Generation and scoring
# ---------------------------------------------------------------------------


def generate(
    policy: GeneratorPolicy,
    query: str,
    cfg: DecodeConfig,
    n: int = 1,
    seed: int = 0,
) -> list[GeneratedDescription]:
    """Draw ``n`` sequences; each carries its exact log-probability.

    The recorded log-probability is taken under the policy's untempered
    emission distribution, regardless of the sampling temperature or
    truncation.  A single draw uses ``seed`` directly, so any description is
    reproducible via ``generate(..., n=1, seed=desc.seed)``.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if policy.vocab_size <= 1:
        raise ValueError("policy vocabulary is empty")
    rows, coefs = policy.query_features(query)
    cond = policy._cond_vector(rows, coefs)
    out = []
    for j in range(n):
        candidate_seed = seed if n == 1 else derive_seed(seed, j)
        out.append(_generate_one(policy, cond, cfg, candidate_seed))
    return out


def _generate_one(policy: GeneratorPolicy, cond: np.ndarray, cfg: DecodeConfig, seed: int) -> GeneratedDescription:
    rng = np.random.default_rng(seed)
    alpha = policy._floor_alpha()
    context: list[str] = []
    ids: list[int] = []
    log_prob = 0.0
    for _ in range(cfg.max_tokens):
        logits = policy.context_table[policy.context_bucket(context)] + cond
        token = _sample_token(logits, cfg, rng)
        floored, _ = _floored_softmax(logits, alpha)
        log_prob += float(np.log(floored[token]))
        ids.append(token)
        if token == policy.eos_id:
            break
        context.append(policy.vocab[token])
    text = " ".join(policy.vocab[i] for i in ids if i != policy.eos_id)
    return GeneratedDescription(text=text, token_ids=tuple(ids), log_prob=log_prob, seed=seed)


def _sample_token(logits: np.ndarray, cfg: DecodeConfig, rng: np.random.Generator) -> int:
    if cfg.temperature == 0.0:
        return int(np.argmax(logits))  # ties resolve to the lowest id
    scaled = logits / cfg.temperature
    # Deterministic candidate order: descending logit, ties by ascending id.
    order = np.lexsort((np.arange(scaled.size), -scaled))
    if cfg.top_k is not None:
        order = order[: cfg.top_k]
    kept = scaled[order]
    kept = np.exp(kept - kept.max())
    kept /= kept.sum()
    if cfg.top_p < 1.0:
        cut = int(np.searchsorted(np.cumsum(kept), cfg.top_p, side="left")) + 1
        order = order[:cut]
        kept = kept[:cut] / kept[:cut].sum()
    pick = int(np.searchsorted(np.cumsum(kept), rng.random(), side="right"))
    return int(order[min(pick, order.size - 1)])


@dataclass
class PolicyGrad:
    """Gradients over the two trainable tables."""

    context_table: np.ndarray
    feature_table: np.ndarray


def _resolve_tokens(policy: GeneratorPolicy, description) -> list[tuple[str, int]]:
    """(token string, vocab id) pairs; id -1 marks an out-of-vocabulary token."""
    if isinstance(description, GeneratedDescription) and description.token_ids is not None:
        return [(policy.vocab[i], i) for i in description.token_ids]
    text = description.text if isinstance(description, GeneratedDescription) else str(description)
    return [(tok, policy.token_ids.get(tok, -1)) for tok in tokenize(text)]


def log_prob(policy: GeneratorPolicy, query: str, description) -> float:
    """Exact sequence log-probability under the policy, conditioned on the
    query's features.  Out-of-vocabulary tokens contribute the probability
    floor; plain strings are tokenized without an implicit terminator."""
    lp, _ = _walk_sequence(policy, query, description, want_grad=False)
    return lp


def log_prob_and_grad(policy: GeneratorPolicy, query: str, description) -> tuple[float, PolicyGrad]:
    return _walk_sequence(policy, query, description, want_grad=True)


def _walk_sequence(policy, query, description, want_grad):
    rows, coefs = policy.query_features(query)
    cond = policy._cond_vector(rows, coefs)
    alpha = policy._floor_alpha()
    floor_log = float(np.log(policy.config.prob_floor))

    grad = None
    if want_grad:
        grad = PolicyGrad(
            context_table=np.zeros_like(policy.context_table),
            feature_table=np.zeros_like(policy.feature_table),
        )

    log_p = 0.0
    context: list[str] = []
    for token, token_id in _resolve_tokens(policy, description):
        if token_id < 0:
            log_p += floor_log
            context.append(token)
            continue
        bucket = policy.context_bucket(context)
        logits = policy.context_table[bucket] + cond
        floored, soft = _floored_softmax(logits, alpha)
        log_p += float(np.log(floored[token_id]))
        if want_grad:
            d_logits = -soft * ((1.0 - alpha) * soft[token_id] / floored[token_id])
            d_logits[token_id] += (1.0 - alpha) * soft[token_id] / floored[token_id]
            grad.context_table[bucket] += d_logits
            if rows.size:
                grad.feature_table[rows] += coefs[:, None] * d_logits[None, :]
        if token_id != policy.eos_id:
            context.append(token)
    return log_p, grad


def catalog_log_likelihood(
    policy: GeneratorPolicy,
    catalog: ToolCatalog,
    renderings: Sequence[RenderingId] = ALL_RENDERINGS,
) -> float:
    """Mean per-token log-probability of catalog renderings, each rendering
    conditioned on its own text (the same pairing the warmup fit uses)."""
    total = 0.0
    count = 0
    for tool in catalog:
        for rendering in renderings:
            text = render(tool, rendering)
            tokens = tokenize(text)
            if not tokens:
                continue
            total += log_prob(policy, text, text)
            count += len(tokens)
    if count == 0:
        raise ValueError("catalog renderings contain no tokens")
    return total / count


def warmup_fit(
    policy: GeneratorPolicy,
    catalog: ToolCatalog,
    renderings: Sequence[RenderingId] = ALL_RENDERINGS,
) -> GeneratorPolicy:
    """Count-based maximum-likelihood fit on catalog renderings.

    The vocabulary is rebuilt from the catalog and the Markov transition
    table gets add-epsilon smoothed log counts, every rendering of a tool
    contributing at equal weight.  Each tool's feature rows are the hashed
    tokens appearing anywhere in its renderings; a row stores the log-odds
    of the tool-conditioned emission distribution against the catalog
    background (with ``backoff`` pseudo-counts of background mass), so a
    query token boosts exactly the vocabulary of the tools it co-occurs
    with, never-seen features contribute nothing, and globally common
    tokens stay neutral.
    """
    if len(catalog) == 0:
        raise ValueError("cannot fit a policy on an empty catalog")
    fitted = GeneratorPolicy.uniform(
        catalog, config=replace(policy.config), lexicon=list(policy.lexicon),
        prompt=policy.prompt, renderings=renderings,
    )
    v = fitted.vocab_size
    context_counts = np.zeros((fitted.config.context_buckets, v), dtype=np.float64)
    feature_counts = np.zeros((fitted.config.feature_buckets, v), dtype=np.float64)
    background = np.zeros(v, dtype=np.float64)

    for tool in catalog:
        token_lists = [tokenize(render(tool, r)) for r in renderings]
        emission = np.zeros(v, dtype=np.float64)
        for tokens in token_lists:
            context: list[str] = []
            for token in tokens + [EOS_TOKEN]:
                token_id = fitted.token_ids[token] if token != EOS_TOKEN else fitted.eos_id
                context_counts[fitted.context_bucket(context), token_id] += 1.0
                emission[token_id] += 1.0
                context.append(token)
        background += emission
        signature = sorted({fitted._feature_bucket(t) for tokens in token_lists for t in tokens})
        if signature:
            feature_counts[np.array(signature, dtype=np.int64)] += emission

    fitted.context_table = np.log(context_counts + fitted.config.smoothing)

    background_total = background.sum()
    if background_total > 0:
        lam = fitted.config.backoff
        prior = lam * background / background_total
        # Guard tokens absent from the fit corpus (possible only with a
        # restricted rendering set); they keep a tiny but finite prior.
        prior = np.maximum(prior, 1e-12)
        log_background = np.log(np.maximum(background, 1e-12) / background_total)
        row_totals = feature_counts.sum(axis=1, keepdims=True)
        fitted.feature_table = (
            np.log(feature_counts + prior[None, :])
            - np.log(row_totals + lam)
            - log_background[None, :]
        )
    return fitted


# ---------------------------------------------------------------------------
# Remote HTTP adapter
# ---------------------------------------------------------------------------


class RemoteGenerationError(RuntimeError):
    """Transport or server failure after exhausting retries."""

    def __init__(self, message: str, status: int | None = None, retriable: bool = False):
        super().__init__(message)
        self.status = status
        self.retriable = retriable


@dataclass
class RemoteEndpointConfig:
    """Chat-completions endpoint settings.

    The credential is read from the named environment variable at call time
    and is never persisted anywhere.
    """

    url: str
    model: str = "default"
    credential_env: str = "TOOLCOTRAIN_API_KEY"
    timeout_s: float = 30.0
    max_retries: int = 2
    retry_backoff_s: float = 0.2


def remote_generate(
    endpoint: RemoteEndpointConfig,
    query: str,
    cfg: DecodeConfig,
    n: int = 1,
    prompt: PromptTemplate = DEFAULT_HYDE_PROMPT,
) -> list[GeneratedDescription]:
    """Generate via an external chat-completions server.

    Outputs pass through :func:`clean` before being returned; sequence
    log-probabilities are unavailable for remote models, so these
    descriptions cannot feed preference training.
    """
    import os

    if n < 1:
        raise ValueError("n must be at least 1")
    body = {
        "model": endpoint.model,
        "messages": [
            {"role": "system", "content": prompt.system_text},
            {"role": "user", "content": prompt.user_text.replace(_PLACEHOLDER, query, 1)},
        ],
        "temperature": cfg.temperature,
        "top_p": cfg.top_p,
        "max_tokens": cfg.max_tokens,
        "n": n,
    }
    headers = {"Content-Type": "application/json"}
    credential = os.environ.get(endpoint.credential_env)
    if credential:
        headers["Authorization"] = f"Bearer {credential}"

    last_error: RemoteGenerationError | None = None
    for attempt in range(endpoint.max_retries + 1):
        try:
            response = requests.post(
                endpoint.url, json=body, headers=headers, timeout=endpoint.timeout_s
            )
        except requests.RequestException as exc:
            last_error = RemoteGenerationError(f"request failed: {exc}", retriable=True)
        else:
            if response.status_code == 200:
                payload = response.json()
                choices = payload.get("choices", [])
                if len(choices) < n:
                    raise RemoteGenerationError(
                        f"server returned {len(choices)} choices, expected {n}",
                        status=200,
                    )
                return [
                    GeneratedDescription(
                        text=clean(str(c.get("message", {}).get("content", "")), query),
                        token_ids=None,
                        log_prob=None,
                        seed=None,
                    )
                    for c in choices[:n]
                ]
            retriable = response.status_code >= 500 or response.status_code == 429
            last_error = RemoteGenerationError(
                f"server returned HTTP {response.status_code}",
                status=response.status_code,
                retriable=retriable,
            )
            if not retriable:
                raise last_error
        if attempt < endpoint.max_retries:
            time.sleep(endpoint.retry_backoff_s * (2**attempt))
    raise last_error
