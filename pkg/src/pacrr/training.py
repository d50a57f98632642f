"""Pairwise max-margin training with validation-driven model selection."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import evaluation, neural
from .corpus import JudgmentSet, RunRanking
from .errors import DataError
from .model import (PacrrConfig, PacrrParams, Scorer, init_params, load_params,
                    param_count, save_params, score_gradients)

logger = logging.getLogger(__name__)

BATCH_SIZE = 32
MAX_SAMPLE_ATTEMPTS = 1000


@dataclass(frozen=True)
class Triple:
    query_id: str
    pos_doc_id: str
    neg_doc_id: str


@dataclass
class RelevanceGroups:
    """Per-query grade buckets plus flattened (query, doc) candidate lists.

    highly: grade > 1 (HRel/Key/Nav); relevant: grade == 1; non_relevant:
    grade <= 0 (NRel and Junk).
    """

    highly: dict[str, list[str]]
    relevant: dict[str, list[str]]
    non_relevant: dict[str, list[str]]
    highly_pairs: list[tuple[str, str]]
    relevant_pairs: list[tuple[str, str]]


def build_groups(qrels: JudgmentSet, train_query_ids) -> RelevanceGroups:
    """Bucket the judged documents of the training queries by grade."""
    train_ids = set(train_query_ids)
    highly: dict[str, list[str]] = {}
    relevant: dict[str, list[str]] = {}
    non_relevant: dict[str, list[str]] = {}
    for (qid, did), grade in sorted(qrels.entries.items()):
        if qid not in train_ids:
            continue
        if grade > 1:
            highly.setdefault(qid, []).append(did)
        elif grade == 1:
            relevant.setdefault(qid, []).append(did)
        else:
            non_relevant.setdefault(qid, []).append(did)
    highly_pairs = [(q, d) for q in sorted(highly) for d in highly[q]]
    relevant_pairs = [(q, d) for q in sorted(relevant) for d in relevant[q]]
    return RelevanceGroups(highly, relevant, non_relevant, highly_pairs, relevant_pairs)


def sample_triple(rng: np.random.Generator, groups: RelevanceGroups,
                  max_attempts: int = MAX_SAMPLE_ATTEMPTS) -> Triple:
    """Draw one (query, d+, d-) training triple.

    The positive's group is chosen with probability proportional to the
    global group sizes; d+ is uniform within the group and carries its query;
    the negative comes from the next grade bucket of that query. Positives
    whose query has no eligible negative are rejected and redrawn.
    """
    n_high = len(groups.highly_pairs)
    n_rel = len(groups.relevant_pairs)
    if n_high + n_rel == 0:
        raise DataError("no positive documents available for sampling")
    use_highly = rng.random() < n_high / (n_high + n_rel)
    pos_pairs = groups.highly_pairs if use_highly else groups.relevant_pairs
    neg_lists = groups.relevant if use_highly else groups.non_relevant
    for _ in range(max_attempts):
        qid, pos = pos_pairs[rng.integers(len(pos_pairs))]
        negatives = neg_lists.get(qid)
        if negatives:
            neg = negatives[rng.integers(len(negatives))]
            return Triple(qid, pos, neg)
    raise DataError(
        f"degenerate training set: {max_attempts} consecutive rejections while "
        "sampling a negative document"
    )


@dataclass
class IterationLog:
    iteration: int
    mean_loss: float
    val_err: float
    val_ndcg: float
    checkpoint_path: str

    def to_record(self) -> dict:
        return {
            "iteration": self.iteration,
            "mean_loss": self.mean_loss,
            "val_err20": self.val_err,
            "val_ndcg20": self.val_ndcg,
            "checkpoint_path": self.checkpoint_path,
        }


@dataclass
class TrainState:
    logs: list[IterationLog] = field(default_factory=list)
    best_iteration: int = 0
    best_err: float = -1.0
    best_checkpoint_path: str = ""
    rng_state: dict | None = None  # sampler state at the end of training


def _validation_metrics(scorer: Scorer, val_runs: dict[str, RunRanking],
                        qrels: JudgmentSet, k: int, g_max: int):
    reranked = {}
    for qid in sorted(val_runs):
        run = val_runs[qid]
        scores, missing = scorer.score_docs(qid, run.doc_ids())
        if missing:
            logger.warning("query %s: %d run documents missing from the corpus",
                           qid, len(missing))
        reranked[qid] = evaluation.rerank_run(run, scores, qrels)
    report = evaluation.report_for_runs(reranked, qrels, k, g_max)
    return report.mean_err, report.mean_ndcg


def train(config: PacrrConfig, docs, queries, qrels: JudgmentSet,
          train_query_ids, val_query_ids, val_runs: dict[str, RunRanking],
          embeddings, idf, *, iterations: int = 150,
          batches_per_iteration: int = 64, out_dir, k: int = 20, g_max: int = 4,
          log_name: str = "training_log.jsonl") -> tuple[PacrrParams, TrainState]:
    """Mini-batch max-margin training with per-iteration validation.

    Each iteration runs `batches_per_iteration` batches of BATCH_SIZE sampled
    triples, saves a checkpoint, and re-ranks the validation runs; the
    checkpoint with the highest validation ERR@k is returned. Checkpoint
    paths in the log are relative to `out_dir`.
    """
    out_dir = Path(out_dir)
    ckpt_dir = out_dir / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    missing_runs = [qid for qid in val_query_ids if qid not in val_runs]
    if missing_runs:
        raise DataError(f"validation run missing queries: {missing_runs}")
    val_runs = {qid: val_runs[qid] for qid in val_query_ids}

    params = init_params(config)
    scorer = Scorer(config, params, queries, docs, embeddings, idf)
    groups = build_groups(qrels, train_query_ids)
    rng = np.random.default_rng([config.seed, 1])
    state = TrainState()
    grad_scale = 1.0 / BATCH_SIZE

    with (out_dir / log_name).open("w", encoding="utf-8") as log_file:
        for iteration in range(1, iterations + 1):
            batch_losses = []
            for _ in range(batches_per_iteration):
                total_loss = 0.0
                for _ in range(BATCH_SIZE):
                    triple = sample_triple(rng, groups)
                    rel_pos, cache_pos = scorer.score_with_cache(triple.query_id,
                                                                 triple.pos_doc_id)
                    rel_neg, cache_neg = scorer.score_with_cache(triple.query_id,
                                                                 triple.neg_doc_id)
                    total_loss += neural.hinge_loss(rel_pos, rel_neg)
                    d_pos, d_neg = neural.hinge_gradients(rel_pos, rel_neg)
                    if d_pos != 0.0:
                        params.accumulate(
                            score_gradients(params, config, cache_pos, d_pos * grad_scale))
                        params.accumulate(
                            score_gradients(params, config, cache_neg, d_neg * grad_scale))
                neural.sgd_step(params, config.learning_rate)
                batch_losses.append(total_loss / BATCH_SIZE)

            ckpt_rel = f"checkpoints/iter_{iteration:04d}.pacrr"
            save_params(params, config, out_dir / ckpt_rel)
            val_err, val_ndcg = _validation_metrics(scorer, val_runs, qrels, k, g_max)
            entry = IterationLog(
                iteration=iteration,
                mean_loss=sum(batch_losses) / len(batch_losses),
                val_err=val_err,
                val_ndcg=val_ndcg,
                checkpoint_path=ckpt_rel,
            )
            state.logs.append(entry)
            log_file.write(json.dumps(entry.to_record(), sort_keys=True) + "\n")
            log_file.flush()
            if val_err > state.best_err:
                state.best_err = val_err
                state.best_iteration = iteration
                state.best_checkpoint_path = ckpt_rel
            logger.info("iteration %d: loss %.4f, val ERR@%d %.4f",
                        iteration, entry.mean_loss, k, val_err)

    state.rng_state = rng.bit_generator.state
    best_params, _ = load_params(out_dir / state.best_checkpoint_path)
    return best_params, state


@dataclass
class SweepResult:
    best_config: PacrrConfig
    best_params: PacrrParams
    best_state: TrainState
    results: list[tuple[PacrrConfig, float]]


def sweep(configs, docs, queries, qrels, train_query_ids, val_query_ids,
          val_runs, embeddings, idf, *, iterations: int,
          batches_per_iteration: int = 64, out_dir, k: int = 20,
          g_max: int = 4) -> SweepResult:
    """Train every config; select by validation ERR@k, breaking ties toward
    fewer parameters, then earlier grid order."""
    if not configs:
        raise ValueError("sweep needs at least one config")
    out_dir = Path(out_dir)
    trained = []
    for index, config in enumerate(configs):
        sub_dir = out_dir / f"config_{index:03d}"
        sub_dir.mkdir(parents=True, exist_ok=True)
        params, state = train(
            config, docs, queries, qrels, train_query_ids, val_query_ids,
            val_runs, embeddings, idf, iterations=iterations,
            batches_per_iteration=batches_per_iteration, out_dir=sub_dir,
            k=k, g_max=g_max,
        )
        trained.append((config, params, state, index))
    best = min(trained, key=lambda t: (-t[2].best_err, param_count(t[0]), t[3]))
    return SweepResult(
        best_config=best[0],
        best_params=best[1],
        best_state=best[2],
        results=[(t[0], t[2].best_err) for t in trained],
    )
