"""Command-line entry point.

Commands: train, rerank, score, eval, pairacc, gradcheck, synth.
Exit codes: 0 success, 1 usage/config error, 2 data error, 3 gradient-check
failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import evaluation, synth
from .config import RunConfig, load_run_config, write_run_config
from .corpus import (compute_idf, load_corpus, load_embeddings, load_qrels,
                     load_queries, load_run, save_run)
from .errors import ConfigError, DataError
from .model import Scorer, gradcheck_report, load_params
from .training import train

logger = logging.getLogger(__name__)

GRADCHECK_THRESHOLD = 1e-4


def _read_qid_list(path) -> list[str]:
    return [line.strip() for line in Path(path).read_text().splitlines() if line.strip()]


def _load_scoring_inputs(cfg: RunConfig):
    cfg.require_paths("corpus", "queries", "embeddings")
    docs = load_corpus(cfg.corpus)
    queries = load_queries(cfg.queries, max_len=cfg.l_q)
    embeddings = load_embeddings(cfg.embeddings)
    idf = compute_idf(docs)
    return docs, queries, embeddings, idf


def _build_scorer(cfg: RunConfig, checkpoint):
    params, model_config = load_params(checkpoint)
    docs, queries, embeddings, idf = _load_scoring_inputs(cfg)
    return Scorer(model_config, params, queries, docs, embeddings, idf)


def cmd_train(cfg: RunConfig, args) -> int:
    cfg.require_paths("corpus", "queries", "qrels", "embeddings", "run",
                      "train_qids", "val_qids")
    docs, queries, embeddings, idf = _load_scoring_inputs(cfg)
    qrels = load_qrels(cfg.qrels, cfg.parsed_grade_map())
    runs = load_run(cfg.run)
    train_qids = _read_qid_list(cfg.train_qids)
    val_qids = _read_qid_list(cfg.val_qids)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    params, state = train(
        cfg.pacrr_config(), docs, queries, qrels, train_qids, val_qids, runs,
        embeddings, idf, iterations=cfg.iterations,
        batches_per_iteration=cfg.batches_per_iteration, out_dir=out_dir,
        k=cfg.k, g_max=cfg.g_max,
    )
    best = out_dir / "best.pacrr"
    best.write_bytes((out_dir / state.best_checkpoint_path).read_bytes())
    print(f"best iteration {state.best_iteration} "
          f"(validation ERR@{cfg.k} {state.best_err:.4f}); checkpoint: {best}")
    return 0


def cmd_score(cfg: RunConfig, args) -> int:
    cfg.require_paths("run")
    scorer = _build_scorer(cfg, args.checkpoint)
    runs = load_run(cfg.run)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    out_path = out_dir / "scores.jsonl"
    skipped = 0
    with out_path.open("w", encoding="utf-8") as f:
        for qid in sorted(runs):
            if qid not in scorer.queries:
                logger.warning("query %s not in the query file; skipping", qid)
                continue
            scores, missing = scorer.score_docs(qid, runs[qid].doc_ids())
            skipped += len(missing)
            for did, _, _ in runs[qid].entries:
                if did in scores:
                    f.write(json.dumps(
                        {"query_id": qid, "doc_id": did, "score": scores[did]}) + "\n")
    if skipped:
        logger.warning("skipped %d documents missing from the corpus", skipped)
    print(f"wrote {out_path}")
    return 0


def cmd_rerank(cfg: RunConfig, args) -> int:
    cfg.require_paths("run", "qrels")
    scorer = _build_scorer(cfg, args.checkpoint)
    qrels = load_qrels(cfg.qrels, cfg.parsed_grade_map())
    runs = load_run(cfg.run)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    before = {}
    after = {}
    skipped = 0
    for qid in sorted(runs):
        if qid not in scorer.queries:
            logger.warning("query %s not in the query file; skipping", qid)
            continue
        run = runs[qid]
        scores, missing = scorer.score_docs(qid, run.doc_ids())
        skipped += len(missing)
        # Both metric passes cover the same judged-and-scored documents, so
        # a constant scorer reproduces the original metrics exactly.
        identity = {did: -rank for did, rank, _ in run.entries if did in scores}
        before[qid] = evaluation.rerank_run(run, identity, qrels)
        after[qid] = evaluation.rerank_run(run, scores, qrels)
    if skipped:
        logger.warning("skipped %d documents missing from the corpus", skipped)

    run_path = out_dir / "reranked_run.txt"
    save_run(after, run_path, tag=cfg.run_tag)
    report_before = evaluation.report_for_runs(before, qrels, cfg.k, cfg.g_max)
    report_after = evaluation.report_for_runs(after, qrels, cfg.k, cfg.g_max)
    metrics_path = out_dir / "rerank_metrics.jsonl"
    with metrics_path.open("w", encoding="utf-8") as f:
        for stage, report in (("before", report_before), ("after", report_after)):
            for record in report.to_json_records():
                record["stage"] = stage
                f.write(json.dumps(record, sort_keys=True) + "\n")
    print(f"ERR@{cfg.k}: {report_before.mean_err:.4f} -> {report_after.mean_err:.4f}   "
          f"nDCG@{cfg.k}: {report_before.mean_ndcg:.4f} -> {report_after.mean_ndcg:.4f}")
    print(f"wrote {run_path} and {metrics_path}")
    return 0


def cmd_eval(cfg: RunConfig, args) -> int:
    cfg.require_paths("run", "qrels")
    qrels = load_qrels(cfg.qrels, cfg.parsed_grade_map())
    runs = load_run(cfg.run)
    report = evaluation.report_for_runs(runs, qrels, cfg.k, cfg.g_max)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    out_path = out_dir / "metrics.jsonl"
    with out_path.open("w", encoding="utf-8") as f:
        for record in report.to_json_records():
            f.write(json.dumps(record, sort_keys=True) + "\n")
    print(f"mean ERR@{cfg.k} {report.mean_err:.4f}, mean nDCG@{cfg.k} "
          f"{report.mean_ndcg:.4f} over {len(report.per_query)} queries")
    print(f"wrote {out_path}")
    return 0


def cmd_pairacc(cfg: RunConfig, args) -> int:
    cfg.require_paths("qrels")
    scorer = _build_scorer(cfg, args.checkpoint)
    qrels = load_qrels(cfg.qrels, cfg.parsed_grade_map())
    scores: dict[str, dict[str, float]] = {}
    skipped = 0
    for qid in sorted(scorer.queries):
        judged = qrels.for_query(qid)
        if not judged:
            continue
        per_query, missing = scorer.score_docs(qid, sorted(judged))
        skipped += len(missing)
        scores[qid] = per_query
    if skipped:
        logger.warning("skipped %d judged documents missing from the corpus", skipped)
    report = evaluation.pair_accuracy(scores, qrels)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    out_path = out_dir / "pair_accuracy.json"
    out_path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    for stats in report.stats.values():
        print(f"{stats.higher}-{stats.lower}: accuracy {stats.accuracy:.3f} "
              f"volume {stats.volume:.3f} queries {stats.n_queries}")
    print(f"weighted average {report.weighted_average:.3f}")
    print(f"wrote {out_path}")
    return 0


def cmd_gradcheck(cfg: RunConfig, args) -> int:
    results = gradcheck_report(seed=cfg.seed)
    failed = False
    for name, result in results.items():
        status = "ok" if result.max_rel_error < GRADCHECK_THRESHOLD else "FAIL"
        failed = failed or status == "FAIL"
        print(f"{name}: max_rel_error={result.max_rel_error:.3e} "
              f"checked={result.checked} excluded={result.excluded} [{status}]")
    return 3 if failed else 0


def cmd_synth(cfg: RunConfig, args) -> int:
    spec = synth.SynthSpec(
        n_docs=args.docs,
        n_train_queries=args.train_queries,
        n_val_queries=args.val_queries,
        vocab_size=args.vocab,
        emb_dim=args.dim,
        doc_len_min=args.doc_len_min,
        doc_len_max=args.doc_len_max,
        p_bigram=args.p_bigram,
        p_scatter=args.p_scatter,
        run_depth=args.run_depth,
        seed=cfg.seed,
    )
    data = synth.generate(spec)
    out_dir = Path(cfg.out_dir)
    paths = synth.write(data, out_dir)
    # A ready-to-train config pointing at the generated files.
    run_cfg = RunConfig(
        corpus=str(paths["corpus"]),
        queries=str(paths["queries"]),
        qrels=str(paths["qrels"]),
        embeddings=str(paths["embeddings"]),
        run=str(paths["run"]),
        train_qids=str(paths["train_qids"]),
        val_qids=str(paths["val_qids"]),
        out_dir=str(out_dir / "train_out"),
        l_q=spec.query_len_max,
        l_d=12,
        l_g=3,
        n_f=4,
        n_s=2,
        mode="kwindow",
        learning_rate=0.05,
        seed=cfg.seed,
        iterations=20,
        batches_per_iteration=64,
    )
    config_path = out_dir / "config.txt"
    write_run_config(run_cfg, config_path)
    print(f"wrote synthetic dataset under {out_dir} (config: {config_path})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pacrr",
        description="Train, apply, and evaluate a position-aware convolutional-"
                    "recurrent re-ranker.",
    )
    parser.add_argument("--config", help="run-config file (key = value lines)")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--out", help="override the config output directory")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("train", help="train and select the best checkpoint")

    p = sub.add_parser("score", help="score the documents of a run file")
    p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("rerank", help="re-rank a run file with a checkpoint")
    p.add_argument("--checkpoint", required=True)

    sub.add_parser("eval", help="ERR/nDCG of a run file against qrels")

    p = sub.add_parser("pairacc", help="pairwise label accuracy of a checkpoint")
    p.add_argument("--checkpoint", required=True)

    sub.add_parser("gradcheck", help="finite-difference check of all gradients")

    p = sub.add_parser("synth", help="generate a synthetic benchmark")
    p.add_argument("--docs", type=int, default=500)
    p.add_argument("--train-queries", type=int, default=30)
    p.add_argument("--val-queries", type=int, default=10)
    p.add_argument("--vocab", type=int, default=200)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--doc-len-min", type=int, default=20)
    p.add_argument("--doc-len-max", type=int, default=40)
    p.add_argument("--p-bigram", type=float, default=0.3)
    p.add_argument("--p-scatter", type=float, default=0.3)
    p.add_argument("--run-depth", type=int, default=100)
    return parser


COMMANDS = {
    "train": cmd_train,
    "score": cmd_score,
    "rerank": cmd_rerank,
    "eval": cmd_eval,
    "pairacc": cmd_pairacc,
    "gradcheck": cmd_gradcheck,
    "synth": cmd_synth,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        overrides = {"seed": args.seed, "out_dir": args.out}
        cfg = load_run_config(args.config, overrides)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
