"""Command-line surface: ingest, run, eval, ci, report.

Every command is deterministic given its inputs and seed, exits zero on
success, and prints a diagnostic to stderr otherwise.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .catalog import CorpusError, RenderingId, Split, Tier, flatten, load_corpus, write_corpus
from .cotrain import PipelineError, RunSpec, initial_components, load_run_lexicon, run_pipeline
from .encoder import CheckpointError, load_checkpoint
from .evaluation import (
    emit_report,
    evaluate,
    paired_bootstrap,
    parse_report_csv,
    read_perquery_scores,
    write_perquery_scores,
)
from .rewriter import GeneratorPolicy
from .vindex import build_index


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="toolcotrain",
        description="Co-training lab for dense tool retrieval.",
    )
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p_ingest = sub.add_parser("ingest", help="validate a corpus file and store a summary")
    p_ingest.add_argument("corpus", help="line-delimited corpus file")
    p_ingest.add_argument("--out-dir", required=True)

    p_run = sub.add_parser("run", help="execute the full co-training pipeline")
    p_run.add_argument("--config", required=True, help="run config (JSON)")
    p_run.add_argument("--out-dir", required=True)
    p_run.add_argument("--seed", type=int, default=None, help="override the config seed")
    p_run.add_argument("--rounds", type=int, default=None, help="override the round count")
    p_run.add_argument("--resume", action="store_true", help="continue an interrupted run")

    p_eval = sub.add_parser("eval", help="evaluate encoder (and optional rewriter) checkpoints")
    p_eval.add_argument("--encoder", required=True, help="encoder checkpoint path")
    p_eval.add_argument("--policy", default=None, help="generator checkpoint path")
    p_eval.add_argument("--corpus", required=True)
    p_eval.add_argument("--use-rewriter", action="store_true")
    p_eval.add_argument("--split", choices=["all", "standard", "vague"], default="all")
    p_eval.add_argument("--k", default="1,5,10,20", help="comma-separated cutoffs")
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.add_argument("--out-dir", required=True)

    p_ci = sub.add_parser("ci", help="paired-bootstrap CI between two per-query score files")
    p_ci.add_argument("--scores-a", required=True)
    p_ci.add_argument("--scores-b", default=None, help="omit for a single-system CI")
    p_ci.add_argument("--metric", default="ndcg")
    p_ci.add_argument("--k", type=int, default=5)
    p_ci.add_argument("--resamples", type=int, default=10_000)
    p_ci.add_argument("--seed", type=int, default=0)
    p_ci.add_argument("--out", required=True)

    p_report = sub.add_parser("report", help="combine a run directory's stage reports")
    p_report.add_argument("--run-dir", required=True)
    p_report.add_argument("--out", default=None, help="combined CSV path (default inside run dir)")
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return _dispatch(args)
    except (CorpusError, CheckpointError, PipelineError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _dispatch(args) -> int:
    if args.command == "ingest":
        return cmd_ingest(args.corpus, args.out_dir)
    if args.command == "run":
        return cmd_run(args.config, args.out_dir, seed=args.seed, rounds=args.rounds, resume=args.resume)
    if args.command == "eval":
        return cmd_eval(
            args.encoder,
            args.policy,
            args.corpus,
            use_rewriter=args.use_rewriter,
            split=args.split,
            k_set=tuple(int(k) for k in args.k.split(",")),
            seed=args.seed,
            out_dir=args.out_dir,
        )
    if args.command == "ci":
        return cmd_ci(
            args.scores_a,
            args.scores_b,
            metric=args.metric,
            k=args.k,
            resamples=args.resamples,
            seed=args.seed,
            out=args.out,
        )
    if args.command == "report":
        return cmd_report(args.run_dir, args.out)
    raise ValueError(f"unknown command {args.command!r}")


def cmd_ingest(corpus_path: str, out_dir: str) -> int:
    """Validate the corpus, write a normalized copy plus a count summary."""
    catalog, queries = load_corpus(corpus_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_corpus(out / "corpus.jsonl", catalog, queries)

    tools_per_tier = {tier.value: sum(1 for t in catalog if t.tier is tier) for tier in Tier}
    queries_per_split = {
        split.value: sum(1 for q in queries if q.split is split) for split in Split
    }
    train = [q for q in queries if q.split is Split.TRAIN]
    flattened = (
        len(flatten(train, fixed_rendering=RenderingId.R5)) if train else 0
    )
    summary = {
        "tools": len(catalog),
        "tools_per_tier": tools_per_tier,
        "queries": len(queries),
        "queries_per_split": queries_per_split,
        # Both counts are reported: examples carry whole gold sets, while
        # contrastive training sees one flattened pair per gold tool.
        "train_examples": len(train),
        "train_pairs_flattened": flattened,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def cmd_run(config_path: str, out_dir: str, seed: int | None = None, rounds: int | None = None, resume: bool = False) -> int:
    spec = RunSpec.from_file(config_path)
    cfg = spec.pipeline
    if seed is not None:
        cfg.seed = seed
    if rounds is not None:
        cfg.rounds = rounds
    catalog, queries = load_corpus(spec.corpus_path)
    lexicon = load_run_lexicon(spec)
    encoder, policy = initial_components(catalog, cfg, lexicon)
    result = run_pipeline(encoder, policy, catalog, queries, cfg, run_dir=out_dir, resume=resume)
    print(f"run complete: {len(result.stage_order)} stages in {result.run_dir}")
    return 0


def cmd_eval(
    encoder_path: str,
    policy_path: str | None,
    corpus_path: str,
    use_rewriter: bool = False,
    split: str = "all",
    k_set: tuple[int, ...] = (1, 5, 10, 20),
    seed: int = 0,
    out_dir: str = ".",
) -> int:
    encoder = load_checkpoint(encoder_path)
    policy = GeneratorPolicy.load(policy_path) if policy_path else None
    if use_rewriter and policy is None:
        raise ValueError("--use-rewriter needs --policy")
    catalog, queries = load_corpus(corpus_path)
    wanted = {
        "all": (Split.EVAL_STANDARD, Split.EVAL_VAGUE),
        "standard": (Split.EVAL_STANDARD,),
        "vague": (Split.EVAL_VAGUE,),
    }[split]
    chosen = [q for q in queries if q.split in wanted]
    if not chosen:
        raise ValueError(f"corpus has no queries in splits {[s.value for s in wanted]}")

    index = build_index(encoder, catalog, RenderingId.R5)
    report, perquery = evaluate(
        encoder, policy, index, chosen, k_set=k_set, use_rewriter=use_rewriter, seed=seed
    )
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    mode = "rw" if use_rewriter else "enc"
    emit_report(report, "csv", out / f"eval.{mode}.csv")
    emit_report(report, "json", out / f"eval.{mode}.json")
    write_perquery_scores(perquery, out / f"eval.{mode}.perquery.jsonl")
    print(f"wrote eval.{mode}.csv / .json / .perquery.jsonl to {out}")
    return 0


def cmd_ci(
    scores_a_path: str,
    scores_b_path: str | None,
    metric: str = "ndcg",
    k: int = 5,
    resamples: int = 10_000,
    seed: int = 0,
    out: str = "ci.json",
) -> int:
    x = read_perquery_scores(scores_a_path, metric=metric, k=k)
    if scores_b_path is None:
        y = {qid: 0.0 for qid in x}
    else:
        y = read_perquery_scores(scores_b_path, metric=metric, k=k)
    result = paired_bootstrap(x, y, b=resamples, seed=seed)
    payload = {
        "metric": metric,
        "k": k,
        "delta": result.delta,
        "ci_lo": result.lo,
        "ci_hi": result.hi,
        "b": result.b,
        "seed": result.seed,
        "n_queries": len(x),
    }
    Path(out).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    print(json.dumps(payload, indent=2, sort_keys=True))
    return 0


def cmd_report(run_dir: str, out: str | None = None) -> int:
    """Merge all stage report CSVs in a run directory into one table."""
    run = Path(run_dir)
    reports_dir = run / "reports"
    if not reports_dir.is_dir():
        raise ValueError(f"{run} has no reports directory")
    rows = []
    for path in sorted(reports_dir.glob("*.csv")):
        if path.name == "trajectory.csv" or path.name == "combined.csv":
            continue
        stage, mode = path.stem.rsplit(".", 1)
        for (metric, split, tier, k), (mean, n) in sorted(parse_report_csv(path).items()):
            rows.append((stage, mode, metric, split, tier, k, mean, n))
    out_path = Path(out) if out else reports_dir / "combined.csv"
    lines = ["stage,mode,metric,split,tier,k,mean,n"]
    for stage, mode, metric, split, tier, k, mean, n in rows:
        lines.append(
            f"{stage},{mode},{metric},{split},{tier},{k},{'' if mean is None else repr(mean)},{n}"
        )
    out_path.write_text("\n".join(lines) + "\n")
    print(f"wrote {out_path} ({len(rows)} rows)")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
