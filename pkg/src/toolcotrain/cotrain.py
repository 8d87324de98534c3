"""End-to-end co-training pipeline.

Stage order: query-anchored encoder warmup (s1a), catalog fit of the
generator (s1b), bootstrap description generation (s2), then per round a
description-only encoder retrain (s3) followed by preference alignment of
the generator scored by the fresh encoder (s4) and a dataset regeneration.
Every stage checkpoint is persisted under a stage-indexed name, both query
splits are evaluated after every stage, and the whole run is a deterministic
function of (corpus, config, seed).
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .catalog import (
    ALL_RENDERINGS,
    QueryExample,
    RenderingId,
    Split,
    ToolCatalog,
    TrainingPair,
    flatten,
    load_lexicon,
    sample_rendering,
)
from .dpo import DpoConfig, build_pairs, dpo_train, write_pairs
from .encoder import (
    EncoderParams,
    EncoderTrainConfig,
    load_checkpoint,
    save_checkpoint,
    train_contrastive,
)
from .evaluation import DEFAULT_K_SET, MetricReport, emit_report, evaluate, write_perquery_scores
from .hashing import derive_seed, sha256_hex
from .rewriter import (
    CANDIDATE_DECODE,
    GREEDY_DECODE,
    DecodeConfig,
    GeneratorPolicy,
    PolicyConfig,
    clean,
    generate,
    invert_lexicon,
    warmup_fit,
)
from .vindex import build_index

log = logging.getLogger(__name__)


class PipelineError(RuntimeError):
    """A stage contract was violated; prior checkpoints stay intact."""


@dataclass
class PipelineConfig:
    rounds: int = 2
    seed: int = 0
    feature_space: int = 1 << 15
    dim: int = 48
    tau: float = 0.05
    ngram_sizes: tuple[int, ...] = (3, 4, 5)
    init_scale: float = 0.02
    s1a: EncoderTrainConfig = field(default_factory=lambda: EncoderTrainConfig(epochs=3))
    s3: EncoderTrainConfig = field(default_factory=lambda: EncoderTrainConfig(epochs=3))
    dpo: DpoConfig = field(default_factory=DpoConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    n_candidates: int = 4
    s2_decode: DecodeConfig = GREEDY_DECODE
    s4_decode: DecodeConfig = CANDIDATE_DECODE
    inference_decode: DecodeConfig = GREEDY_DECODE
    eval_k: tuple[int, ...] = DEFAULT_K_SET
    skip_s1b: bool = False
    freeze_encoder: bool = False
    freeze_rewriter: bool = False
    regenerate_final: bool = False
    lexicon_weight: float = 1.0

    def __post_init__(self) -> None:
        if self.rounds < 1:
            raise ValueError("rounds must be at least 1")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["ngram_sizes"] = list(self.ngram_sizes)
        out["eval_k"] = list(self.eval_k)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        data = dict(data)
        for key, sub in (
            ("s1a", EncoderTrainConfig),
            ("s3", EncoderTrainConfig),
            ("dpo", DpoConfig),
            ("policy", PolicyConfig),
            ("s2_decode", DecodeConfig),
            ("s4_decode", DecodeConfig),
            ("inference_decode", DecodeConfig),
        ):
            if key in data and isinstance(data[key], dict):
                data[key] = sub(**data[key])
        if "ngram_sizes" in data:
            data["ngram_sizes"] = tuple(data["ngram_sizes"])
        if "eval_k" in data:
            data["eval_k"] = tuple(data["eval_k"])
        return cls(**data)

    def config_hash(self) -> str:
        return sha256_hex(
            json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode("utf-8")
        )


@dataclass
class RunSpec:
    """Declarative run description, one file per run."""

    corpus_path: str
    pipeline: PipelineConfig
    lexicon_path: str | None = None

    @classmethod
    def from_file(cls, path: str | Path) -> "RunSpec":
        path = Path(path)
        data = json.loads(path.read_text(encoding="utf-8"))
        if "corpus_path" not in data:
            raise ValueError(f"{path}: run config must set corpus_path")
        pipeline = PipelineConfig.from_dict(data.get("pipeline", {}))
        base = path.parent

        def _resolve(p: str | None) -> str | None:
            if p is None:
                return None
            candidate = Path(p)
            return str(candidate if candidate.is_absolute() else base / candidate)

        return cls(
            corpus_path=_resolve(data["corpus_path"]),
            pipeline=pipeline,
            lexicon_path=_resolve(data.get("lexicon_path")),
        )


@dataclass
class RoundState:
    """State crossing round boundaries: r rounds completed so far."""

    round_index: int
    encoder: EncoderParams
    policy: GeneratorPolicy
    dataset: list[TrainingPair]
    last_report: MetricReport | None = None


@dataclass
class RunContext:
    cfg: PipelineConfig
    catalog: ToolCatalog
    train_queries: list[QueryExample]
    eval_queries: list[QueryExample]
    run_dir: Path | None = None
    resume: bool = False
    manifest: dict = field(default_factory=dict)
    prior_stages: dict = field(default_factory=dict)
    reports: dict[tuple[str, str], MetricReport] = field(default_factory=dict)
    stage_order: list[str] = field(default_factory=list)

    @property
    def checkpoints_dir(self) -> Path:
        return self.run_dir / "checkpoints"

    @property
    def datasets_dir(self) -> Path:
        return self.run_dir / "datasets"

    @property
    def reports_dir(self) -> Path:
        return self.run_dir / "reports"


def initial_components(
    catalog: ToolCatalog,
    cfg: PipelineConfig,
    lexicon: dict[str, str] | None = None,
) -> tuple[EncoderParams, GeneratorPolicy]:
    """Seed-derived starting encoder and a uniform generator policy whose
    vocabulary comes from the catalog renderings."""
    encoder = EncoderParams.init(
        feature_space=cfg.feature_space,
        dim=cfg.dim,
        tau=cfg.tau,
        ngram_sizes=cfg.ngram_sizes,
        seed=derive_seed(cfg.seed, "encoder_init"),
        scale=cfg.init_scale,
    )
    entries = invert_lexicon(lexicon, weight=cfg.lexicon_weight) if lexicon else []
    policy = GeneratorPolicy.uniform(catalog, config=replace(cfg.policy), lexicon=entries)
    return encoder, policy


# ---------------------------------------------------------------------------
# Stage operations
# ---------------------------------------------------------------------------


def s1a_warmup(
    params: EncoderParams,
    train_examples: Sequence[QueryExample],
    catalog: ToolCatalog,
    cfg: EncoderTrainConfig,
):
    """Query-anchored contrastive warmup against the full-record rendering."""
    if not train_examples:
        raise PipelineError("s1a needs a non-empty train split")
    pairs = flatten(train_examples, fixed_rendering=RenderingId.R5)
    return train_contrastive(params, pairs, catalog, cfg)


def s1b_warmup(
    policy: GeneratorPolicy,
    catalog: ToolCatalog,
    skip: bool = False,
    renderings=ALL_RENDERINGS,
) -> GeneratorPolicy:
    """Catalog fit of the generator; the skip flag is the warmup ablation."""
    if len(catalog) == 0:
        raise PipelineError("s1b needs a non-empty catalog")
    if skip:
        return policy.copy()
    return warmup_fit(policy, catalog, renderings)


def s2_bootstrap(
    policy: GeneratorPolicy,
    train_examples: Sequence[QueryExample],
    catalog: ToolCatalog,
    decode: DecodeConfig = GREEDY_DECODE,
    seed: int = 0,
) -> list[TrainingPair]:
    """Generate one cleaned greedy description per example and pair it with
    each gold tool under a freshly sampled rendering."""
    rng = np.random.default_rng(derive_seed(seed, "rendering"))
    pairs: list[TrainingPair] = []
    for example in train_examples:
        desc = generate(policy, example.text, decode, n=1, seed=derive_seed(seed, example.query_id))[0]
        text = clean(desc.text, example.text)
        for tool_id in sorted(example.gold_tool_ids):
            pairs.append(
                TrainingPair(
                    anchor_text=text,
                    tool_id=tool_id,
                    rendering=sample_rendering(rng),
                    anchor_kind="description",
                )
            )
    return pairs


def _assert_description_only(pairs: Sequence[TrainingPair], stage: str) -> None:
    bad = sum(1 for p in pairs if p.anchor_kind != "description")
    if bad:
        raise PipelineError(
            f"{stage}: {bad} of {len(pairs)} training pairs carry raw-query anchors; "
            "description-only retraining must never see real queries"
        )


def run_round(state: RoundState, ctx: RunContext) -> RoundState:
    """One co-training round.

    Retrains the encoder on the current description dataset, rebuilds the
    index, aligns the generator against the fresh encoder's retrieval
    scores, and regenerates the dataset for the next round (skipped after
    the final round unless configured otherwise).  Freeze flags turn either
    half into a no-op.
    """
    cfg = ctx.cfg
    r = state.round_index + 1
    if r > cfg.rounds:
        raise PipelineError(f"round {r} exceeds configured rounds {cfg.rounds}")

    # --- s3: encoder retrain on description anchors only
    label = f"r{r}_s3"
    if cfg.freeze_encoder:
        encoder = _stage_encoder(ctx, label, lambda: state.encoder.copy(), skipped=True)
    else:
        if not state.dataset:
            raise PipelineError(f"{label}: description dataset is empty")
        _assert_description_only(state.dataset, label)
        s3_cfg = replace(cfg.s3, seed=derive_seed(cfg.seed, label))
        encoder = _stage_encoder(
            ctx, label, lambda: train_contrastive(state.encoder, state.dataset, ctx.catalog, s3_cfg).params
        )
    _evaluate_stage(ctx, label, encoder, state.policy)

    # --- s4: preference alignment scored by the just-retrained encoder
    label = f"r{r}_s4"
    policy = state.policy
    dataset = state.dataset
    if cfg.freeze_rewriter:
        policy = _stage_policy(ctx, label, lambda: state.policy.copy(), skipped=True)
    else:

        def _align() -> GeneratorPolicy:
            index = build_index(encoder, ctx.catalog, RenderingId.R5)
            pairs = build_pairs(
                state.policy,
                encoder,
                index,
                ctx.train_queries,
                n_candidates=cfg.n_candidates,
                decode=cfg.s4_decode,
                seed=derive_seed(cfg.seed, label, "sample"),
            )
            if ctx.run_dir is not None:
                write_pairs(pairs, ctx.datasets_dir / f"{label}_pairs.jsonl")
            if not pairs:
                log.warning("%s: no preference pairs survived tie-dropping; policy unchanged", label)
                return state.policy.copy()
            dpo_cfg = replace(cfg.dpo, seed=derive_seed(cfg.seed, label, "train"))
            return dpo_train(state.policy, pairs, dpo_cfg).policy

        policy = _stage_policy(ctx, label, _align)
    _evaluate_stage(ctx, label, encoder, policy)

    # --- dataset regeneration for the next round
    if not cfg.freeze_rewriter and (r < cfg.rounds or cfg.regenerate_final):
        label = f"r{r}_regen"
        dataset = _stage_dataset(
            ctx,
            label,
            lambda: s2_bootstrap(
                policy, ctx.train_queries, ctx.catalog, cfg.s2_decode, seed=derive_seed(cfg.seed, label)
            ),
        )

    report = ctx.reports.get((f"r{r}_s4", "rw")) or ctx.reports.get((f"r{r}_s4", "enc"))
    return RoundState(
        round_index=r,
        encoder=encoder,
        policy=policy,
        dataset=dataset,
        last_report=report,
    )


@dataclass
class PipelineResult:
    encoder: EncoderParams
    policy: GeneratorPolicy
    reports: dict[tuple[str, str], MetricReport]
    stage_order: list[str]
    manifest: dict
    run_dir: Path | None

    def trajectory(self) -> list[tuple[str, str, float | None]]:
        """Canonical per-stage trajectory: the query-anchored warmup point
        (encoder-only), then the full system at the end of every round."""
        points: list[tuple[str, str, float | None]] = []
        s1a = self.reports.get(("s1a", "enc"))
        if s1a is not None:
            points.append(("s1a", "enc", s1a.tier_average("ndcg", Split.EVAL_STANDARD, 5)))
        round_ends = sorted(
            {
                label.split("_")[0]
                for label, _ in self.reports
                if label.startswith("r") and "_" in label
            },
            key=lambda s: int(s[1:]),
        )
        for rd in round_ends:
            for label, mode in ((f"{rd}_s4", "rw"), (f"{rd}_s4", "enc"), (f"{rd}_s3", "rw"), (f"{rd}_s3", "enc")):
                report = self.reports.get((label, mode))
                if report is not None:
                    points.append((label, mode, report.tier_average("ndcg", Split.EVAL_STANDARD, 5)))
                    break
        return points


def run_pipeline(
    encoder: EncoderParams,
    policy: GeneratorPolicy,
    catalog: ToolCatalog,
    queries: Sequence[QueryExample],
    cfg: PipelineConfig,
    run_dir: str | Path | None = None,
    resume: bool = False,
) -> PipelineResult:
    """Execute warmups, bootstrap, and all configured rounds.

    Both evaluation splits are scored after every stage; checkpoints,
    datasets, reports, and a manifest land under ``run_dir`` when given.
    On failure the manifest names the last good stage and everything
    already persisted stays put.
    """
    train = [q for q in queries if q.split is Split.TRAIN]
    evals = [q for q in queries if q.split is not Split.TRAIN]
    if not train:
        raise PipelineError("pipeline needs a non-empty train split")

    ctx = RunContext(
        cfg=cfg,
        catalog=catalog,
        train_queries=train,
        eval_queries=evals,
        run_dir=Path(run_dir) if run_dir is not None else None,
        resume=resume,
    )
    if ctx.run_dir is not None:
        for sub in (ctx.checkpoints_dir, ctx.datasets_dir, ctx.reports_dir, ctx.run_dir / "logs"):
            sub.mkdir(parents=True, exist_ok=True)
        manifest_path = ctx.run_dir / "manifest.json"
        if manifest_path.exists():
            prior = json.loads(manifest_path.read_text(encoding="utf-8"))
            if resume:
                if prior.get("config_hash") != cfg.config_hash():
                    raise PipelineError("resume config does not match the original run")
                ctx.prior_stages = {s["label"]: s for s in prior.get("stages", [])}
            else:
                raise PipelineError(
                    f"{ctx.run_dir} already holds a run; pass resume=True to continue it"
                )

    ctx.manifest = {
        "config_hash": cfg.config_hash(),
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "flags": {
            "skip_s1b": cfg.skip_s1b,
            "freeze_encoder": cfg.freeze_encoder,
            "freeze_rewriter": cfg.freeze_rewriter,
            "regenerate_final": cfg.regenerate_final,
        },
        "counts": {
            "tools": len(catalog),
            "train_queries": len(train),
            "eval_queries": len(evals),
        },
        "stages": [],
        "completed": False,
    }

    try:
        theta1 = _stage_encoder(
            ctx,
            "s1a",
            lambda: s1a_warmup(encoder, train, catalog, replace(cfg.s1a, seed=derive_seed(cfg.seed, "s1a"))).params,
        )
        _evaluate_stage(ctx, "s1a", theta1, None)

        psi1 = _stage_policy(
            ctx,
            "s1b",
            lambda: s1b_warmup(policy, catalog, skip=cfg.skip_s1b),
            skipped=cfg.skip_s1b,
        )
        _evaluate_stage(ctx, "s1b", theta1, psi1)

        dataset = _stage_dataset(
            ctx,
            "s2",
            lambda: s2_bootstrap(psi1, train, catalog, cfg.s2_decode, seed=derive_seed(cfg.seed, "s2")),
        )
        _evaluate_stage(ctx, "s2", theta1, psi1)

        state = RoundState(round_index=0, encoder=theta1, policy=psi1, dataset=dataset)
        for _ in range(cfg.rounds):
            state = run_round(state, ctx)
    except Exception as exc:
        ctx.manifest["failed_stage"] = getattr(exc, "stage_label", ctx.stage_order[-1] if ctx.stage_order else None)
        ctx.manifest["error"] = str(exc)
        _write_manifest(ctx)
        raise

    ctx.manifest["completed"] = True
    if ctx.run_dir is not None:
        final_round = f"r{cfg.rounds}"
        ctx.manifest["final"] = {
            "encoder": str(ctx.checkpoints_dir / f"{final_round}_s3.enc"),
            "policy": str(ctx.checkpoints_dir / f"{final_round}_s4.pol"),
        }
        _write_trajectory(ctx)
    _write_manifest(ctx)

    return PipelineResult(
        encoder=state.encoder,
        policy=state.policy,
        reports=ctx.reports,
        stage_order=ctx.stage_order,
        manifest=ctx.manifest,
        run_dir=ctx.run_dir,
    )


# ---------------------------------------------------------------------------
# Stage plumbing
# ---------------------------------------------------------------------------


def _resumable(ctx: RunContext, label: str, *paths: Path) -> bool:
    return (
        ctx.resume
        and label in ctx.prior_stages
        and all(p.exists() for p in paths)
    )


def _record_stage(ctx: RunContext, label: str, seconds: float, *, skipped: bool, resumed: bool,
                  encoder_fp: str | None = None, policy_fp: str | None = None,
                  artifacts: dict | None = None) -> None:
    ctx.stage_order.append(label)
    ctx.manifest["stages"].append(
        {
            "label": label,
            "seconds": round(seconds, 6),
            "skipped": skipped,
            "resumed": resumed,
            "seed": derive_seed(ctx.cfg.seed, label),
            "encoder_fingerprint": encoder_fp,
            "policy_fingerprint": policy_fp,
            "artifacts": artifacts or {},
        }
    )
    _write_manifest(ctx)
    log.info("stage %-10s %s (%.2fs)", label, "skipped" if skipped else "done", seconds)


def _stage_encoder(ctx: RunContext, label: str, compute: Callable[[], EncoderParams], skipped: bool = False) -> EncoderParams:
    path = ctx.checkpoints_dir / f"{label}.enc" if ctx.run_dir is not None else None
    resumed = path is not None and _resumable(ctx, label, path)
    start = time.perf_counter()
    try:
        encoder = load_checkpoint(path) if resumed else compute()
    except Exception as exc:
        exc.stage_label = label
        raise
    if path is not None and not resumed:
        save_checkpoint(encoder, path)
    _record_stage(
        ctx, label, time.perf_counter() - start, skipped=skipped, resumed=resumed,
        encoder_fp=encoder.fingerprint(),
        artifacts={"checkpoint": str(path)} if path else {},
    )
    return encoder


def _stage_policy(ctx: RunContext, label: str, compute: Callable[[], GeneratorPolicy], skipped: bool = False) -> GeneratorPolicy:
    path = ctx.checkpoints_dir / f"{label}.pol" if ctx.run_dir is not None else None
    resumed = path is not None and _resumable(ctx, label, path)
    start = time.perf_counter()
    try:
        policy = GeneratorPolicy.load(path) if resumed else compute()
    except Exception as exc:
        exc.stage_label = label
        raise
    if path is not None and not resumed:
        policy.save(path)
    _record_stage(
        ctx, label, time.perf_counter() - start, skipped=skipped, resumed=resumed,
        policy_fp=policy.fingerprint(),
        artifacts={"checkpoint": str(path)} if path else {},
    )
    return policy


def _stage_dataset(ctx: RunContext, label: str, compute: Callable[[], list[TrainingPair]]) -> list[TrainingPair]:
    path = ctx.datasets_dir / f"{label}.jsonl" if ctx.run_dir is not None else None
    resumed = path is not None and _resumable(ctx, label, path)
    start = time.perf_counter()
    try:
        dataset = _read_dataset(path) if resumed else compute()
    except Exception as exc:
        exc.stage_label = label
        raise
    if path is not None and not resumed:
        _write_dataset(dataset, path)
    _record_stage(
        ctx, label, time.perf_counter() - start, skipped=False, resumed=resumed,
        artifacts={"dataset": str(path), "pairs": len(dataset)} if path else {"pairs": len(dataset)},
    )
    return dataset


def _evaluate_stage(ctx: RunContext, label: str, encoder: EncoderParams, policy: GeneratorPolicy | None) -> None:
    if not ctx.eval_queries:
        return
    index = build_index(encoder, ctx.catalog, RenderingId.R5)
    modes: list[tuple[str, GeneratorPolicy | None, bool]] = [("enc", None, False)]
    if policy is not None:
        modes.append(("rw", policy, True))
    for mode, mode_policy, use_rw in modes:
        report, perquery = evaluate(
            encoder,
            mode_policy,
            index,
            ctx.eval_queries,
            k_set=ctx.cfg.eval_k,
            use_rewriter=use_rw,
            decode=ctx.cfg.inference_decode,
            seed=derive_seed(ctx.cfg.seed, label, "eval", mode),
            stage=label,
        )
        ctx.reports[(label, mode)] = report
        if ctx.run_dir is not None:
            emit_report(report, "csv", ctx.reports_dir / f"{label}.{mode}.csv")
            emit_report(report, "json", ctx.reports_dir / f"{label}.{mode}.json")
            write_perquery_scores(perquery, ctx.reports_dir / f"{label}.{mode}.perquery.jsonl")


def _write_manifest(ctx: RunContext) -> None:
    if ctx.run_dir is None:
        return
    path = ctx.run_dir / "manifest.json"
    tmp = path.with_suffix(".json.tmp")
    tmp.write_text(json.dumps(ctx.manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    tmp.replace(path)


def _write_trajectory(ctx: RunContext) -> None:
    path = ctx.reports_dir / "trajectory.csv"
    lines = ["stage,mode,split,tier,ndcg@5"]
    for (label, mode) in sorted(ctx.reports):
        report = ctx.reports[(label, mode)]
        if 5 not in report.k_set:
            continue
        for split in report.splits:
            for tier in ("G1", "G2", "G3"):
                mean = report.mean("ndcg", split, tier, 5)
                lines.append(
                    f"{label},{mode},{split},{tier},{'' if mean is None else repr(mean)}"
                )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _write_dataset(pairs: Sequence[TrainingPair], path: Path) -> None:
    with path.open("w", encoding="utf-8") as handle:
        for pair in pairs:
            handle.write(
                json.dumps(
                    {
                        "anchor_text": pair.anchor_text,
                        "tool_id": pair.tool_id,
                        "rendering": pair.rendering.value,
                        "anchor_kind": pair.anchor_kind,
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def _read_dataset(path: Path) -> list[TrainingPair]:
    pairs = []
    with path.open("r", encoding="utf-8") as handle:
        for line in handle:
            if not line.strip():
                continue
            record = json.loads(line)
            pairs.append(
                TrainingPair(
                    anchor_text=record["anchor_text"],
                    tool_id=record["tool_id"],
                    rendering=RenderingId(record["rendering"]),
                    anchor_kind=record["anchor_kind"],
                )
            )
    return pairs


def load_run_lexicon(spec: RunSpec) -> dict[str, str] | None:
    if spec.lexicon_path is None:
        return None
    return load_lexicon(spec.lexicon_path)
