"""Graded retrieval metrics, run re-ranking, and pairwise label accuracy."""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

from .corpus import JudgmentSet, RunRanking
from .errors import DataError

# Canonical grades collapse into four merged labels, strongest first.
MERGED_LABELS = ("Nav", "HRel", "Rel", "NRel")
_MERGED_RANK = {label: i for i, label in enumerate(reversed(MERGED_LABELS))}
PAIR_TYPES = (
    ("Nav", "HRel"),
    ("Nav", "Rel"),
    ("Nav", "NRel"),
    ("HRel", "Rel"),
    ("HRel", "NRel"),
    ("Rel", "NRel"),
)


def merge_grades(grade: int) -> str:
    """Collapse the canonical scale to {Nav, HRel, Rel, NRel}.

    Nav(4) stays Nav; Key(3) and HRel(2) merge to HRel; Rel(1) stays Rel;
    NRel(0) and Junk(-2) merge to NRel.
    """
    if grade == 4:
        return "Nav"
    if grade in (2, 3):
        return "HRel"
    if grade == 1:
        return "Rel"
    if grade in (0, -2):
        return "NRel"
    raise DataError(f"grade {grade} is not on the canonical scale")


def _gain(grade: int, g_max: int) -> float:
    # Grades below 0 carry no gain.
    return (2.0 ** max(grade, 0) - 1.0) / 2.0 ** g_max


def err_at_k(grades, k: int = 20, g_max: int = 4) -> float:
    """Expected Reciprocal Rank truncated at k.

    ERR@k = sum_{r<=k} (1/r) R_r prod_{i<r} (1 - R_i) with
    R_r = (2^g_r - 1) / 2^g_max, grades clipped below at 0.
    """
    if g_max < 1:
        raise ValueError("g_max must be >= 1")
    err = 0.0
    not_stopped = 1.0
    for rank, grade in enumerate(grades[:k], start=1):
        r = _gain(grade, g_max)
        err += not_stopped * r / rank
        not_stopped *= 1.0 - r
    return err


def ndcg_at_k(ranked_grades, judged_grades, k: int = 20) -> float:
    """Normalized DCG at k; the ideal ranking uses every judged grade for the
    query. Returns 0 when the ideal DCG is 0."""

    def dcg(grades):
        return sum(
            (2.0 ** max(g, 0) - 1.0) / math.log2(rank + 1)
            for rank, g in enumerate(grades[:k], start=1)
        )

    ideal = dcg(sorted(judged_grades, reverse=True))
    if ideal == 0.0:
        return 0.0
    return dcg(ranked_grades) / ideal


def rerank_run(run: RunRanking, scores: dict[str, float], qrels: JudgmentSet) -> RunRanking:
    """Re-rank the judged-and-scored documents of a run by descending score;
    score ties keep the original order."""
    judged = qrels.for_query(run.query_id)
    kept = [e for e in run.entries if e[0] in judged and e[0] in scores]
    kept.sort(key=lambda e: (-scores[e[0]], e[1]))
    return RunRanking(
        run.query_id,
        [(doc_id, i, float(scores[doc_id])) for i, (doc_id, _, _) in enumerate(kept, start=1)],
    )


@dataclass
class QueryMetrics:
    query_id: str
    err: float
    ndcg: float


@dataclass
class MetricReport:
    k: int
    per_query: list[QueryMetrics]
    mean_err: float
    mean_ndcg: float

    def to_json_records(self) -> list[dict]:
        key_err, key_ndcg = f"err{self.k}", f"ndcg{self.k}"
        records = [
            {"query_id": m.query_id, key_err: m.err, key_ndcg: m.ndcg}
            for m in self.per_query
        ]
        records.append({"query_id": "all", key_err: self.mean_err, key_ndcg: self.mean_ndcg})
        return records


def run_metrics(run: RunRanking, qrels: JudgmentSet, k: int = 20, g_max: int = 4,
                unjudged_grade: int = 0) -> QueryMetrics:
    """ERR@k and nDCG@k of one ranked list; unjudged documents score as
    `unjudged_grade`."""
    judged = qrels.for_query(run.query_id)
    grades = [judged.get(doc_id, unjudged_grade) for doc_id in run.doc_ids()]
    return QueryMetrics(
        query_id=run.query_id,
        err=err_at_k(grades, k, g_max),
        ndcg=ndcg_at_k(grades, list(judged.values()), k),
    )


def report_for_runs(runs: dict[str, RunRanking], qrels: JudgmentSet, k: int = 20,
                    g_max: int = 4) -> MetricReport:
    per_query = [run_metrics(runs[qid], qrels, k, g_max) for qid in sorted(runs)]
    n = len(per_query)
    return MetricReport(
        k=k,
        per_query=per_query,
        mean_err=sum(m.err for m in per_query) / n if n else 0.0,
        mean_ndcg=sum(m.ndcg for m in per_query) / n if n else 0.0,
    )


@dataclass
class PairTypeStats:
    higher: str
    lower: str
    n_pairs: int
    n_correct: int
    n_queries: int
    accuracy: float
    volume: float


@dataclass
class PairAccuracyReport:
    stats: dict[tuple[str, str], PairTypeStats]
    total_pairs: int
    weighted_average: float

    def to_dict(self) -> dict:
        return {
            "pairs": [
                {
                    "label_pair": f"{s.higher}-{s.lower}",
                    "accuracy": s.accuracy,
                    "volume": s.volume,
                    "n_pairs": s.n_pairs,
                    "n_queries": s.n_queries,
                }
                for s in self.stats.values()
            ],
            "total_pairs": self.total_pairs,
            "weighted_average": self.weighted_average,
        }


def pair_accuracy(scores: dict[str, dict[str, float]], qrels: JudgmentSet) -> PairAccuracyReport:
    """Accuracy of pairwise orderings between documents with different merged
    labels, per label pair.

    For each query, every pair of judged-and-scored documents whose merged
    labels differ counts once; the pair is correct iff the higher-labeled
    document's score is strictly greater (ties are incorrect). The weighted
    average weights each label pair's accuracy by its share of all pairs.
    """
    counts = {pt: [0, 0] for pt in PAIR_TYPES}  # [pairs, correct]
    queries_with = {pt: set() for pt in PAIR_TYPES}
    for qid in sorted(scores):
        judged = qrels.for_query(qid)
        docs = sorted(d for d in scores[qid] if d in judged)
        labels = {d: merge_grades(judged[d]) for d in docs}
        for d1, d2 in combinations(docs, 2):
            l1, l2 = labels[d1], labels[d2]
            if l1 == l2:
                continue
            if _MERGED_RANK[l1] > _MERGED_RANK[l2]:
                hi_doc, hi, lo = d1, l1, l2
            else:
                hi_doc, hi, lo = d2, l2, l1
            lo_doc = d2 if hi_doc == d1 else d1
            key = (hi, lo)
            counts[key][0] += 1
            queries_with[key].add(qid)
            if scores[qid][hi_doc] > scores[qid][lo_doc]:
                counts[key][1] += 1
    total = sum(c[0] for c in counts.values())
    stats: dict[tuple[str, str], PairTypeStats] = {}
    weighted = 0.0
    for pt in PAIR_TYPES:
        n_pairs, n_correct = counts[pt]
        accuracy = n_correct / n_pairs if n_pairs else 0.0
        volume = n_pairs / total if total else 0.0
        weighted += accuracy * volume
        stats[pt] = PairTypeStats(
            higher=pt[0],
            lower=pt[1],
            n_pairs=n_pairs,
            n_correct=n_correct,
            n_queries=len(queries_with[pt]),
            accuracy=accuracy,
            volume=volume,
        )
    return PairAccuracyReport(stats=stats, total_pairs=total, weighted_average=weighted)
