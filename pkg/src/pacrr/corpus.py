"""Ingestion of corpora, queries, judgments, run files, and word embeddings.

All loaders are pure functions over their input files; the returned
structures are treated as immutable once built.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError

logger = logging.getLogger(__name__)

# Canonical graded-judgment scale (TREC Web Track naming).
CANONICAL_GRADES = {-2: "Junk", 0: "NRel", 1: "Rel", 2: "HRel", 3: "Key", 4: "Nav"}


@dataclass(frozen=True)
class TokenizedDocument:
    doc_id: str
    tokens: tuple[str, ...]


@dataclass(frozen=True)
class Query:
    query_id: str
    tokens: tuple[str, ...]


@dataclass
class JudgmentSet:
    """Graded judgments keyed by (query_id, doc_id)."""

    entries: dict[tuple[str, str], int]
    _by_query: dict[str, dict[str, int]] = field(
        init=False, repr=False, compare=False, default_factory=dict
    )

    def __post_init__(self):
        for (qid, did), grade in self.entries.items():
            if grade not in CANONICAL_GRADES:
                raise DataError(f"grade {grade} for ({qid}, {did}) is not on the canonical scale")
            self._by_query.setdefault(qid, {})[did] = grade

    def grade(self, query_id: str, doc_id: str, default=None):
        return self.entries.get((query_id, doc_id), default)

    def for_query(self, query_id: str) -> dict[str, int]:
        return self._by_query.get(query_id, {})

    def query_ids(self) -> list[str]:
        return sorted(self._by_query)

    def __len__(self):
        return len(self.entries)


@dataclass
class RunRanking:
    """One query's ranked result list: (doc_id, original_rank, original_score)."""

    query_id: str
    entries: list[tuple[str, int, float]]

    def __post_init__(self):
        seen = set()
        prev_rank = 0
        for doc_id, rank, _ in self.entries:
            if rank <= prev_rank:
                raise DataError(
                    f"run for query {self.query_id}: rank {rank} not strictly increasing"
                )
            if doc_id in seen:
                raise DataError(f"run for query {self.query_id}: duplicate doc_id {doc_id}")
            seen.add(doc_id)
            prev_rank = rank

    def doc_ids(self) -> list[str]:
        return [doc_id for doc_id, _, _ in self.entries]


@dataclass(eq=False)
class EmbeddingTable:
    """Token -> dense vector lookup; all vectors share one dimensionality."""

    dim: int
    vectors: dict[str, np.ndarray]

    def get(self, token: str):
        return self.vectors.get(token)

    def __len__(self):
        return len(self.vectors)


@dataclass
class IdfTable:
    """Smoothed inverse document frequencies: idf(t) = ln((N+1)/(df(t)+1))."""

    doc_count: int
    df: dict[str, int]
    values: dict[str, float]

    def idf(self, token: str) -> float:
        # Tokens never seen in the corpus have df 0 under the same smoothing.
        return self.values.get(token, math.log(self.doc_count + 1))


def _read_jsonl(path, id_field):
    path = Path(path)
    records = []
    with path.open("r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(rec, dict) or id_field not in rec or "tokens" not in rec:
                raise DataError(f"{path}:{lineno}: record must have '{id_field}' and 'tokens'")
            rid = rec[id_field]
            tokens = rec["tokens"]
            if not isinstance(rid, str) or not rid:
                raise DataError(f"{path}:{lineno}: '{id_field}' must be a non-empty string")
            if not isinstance(tokens, list) or not all(isinstance(t, str) for t in tokens):
                raise DataError(f"{path}:{lineno}: 'tokens' must be a list of strings")
            records.append((lineno, rid, tuple(tokens)))
    return records


def load_corpus(path) -> list[TokenizedDocument]:
    """Load line-delimited JSON documents ({"doc_id": ..., "tokens": [...]})."""
    docs = []
    seen = set()
    for lineno, doc_id, tokens in _read_jsonl(path, "doc_id"):
        if doc_id in seen:
            raise DataError(f"{path}:{lineno}: duplicate doc_id {doc_id!r}")
        seen.add(doc_id)
        docs.append(TokenizedDocument(doc_id, tokens))
    return docs


def load_queries(path, max_len: int | None = None) -> list[Query]:
    """Load queries; ones longer than max_len are truncated with a warning."""
    queries = []
    seen = set()
    for lineno, query_id, tokens in _read_jsonl(path, "query_id"):
        if query_id in seen:
            raise DataError(f"{path}:{lineno}: duplicate query_id {query_id!r}")
        if not tokens:
            raise DataError(f"{path}:{lineno}: query {query_id!r} has no tokens")
        seen.add(query_id)
        if max_len is not None and len(tokens) > max_len:
            logger.warning(
                "query %s has %d tokens; truncating to the first %d",
                query_id, len(tokens), max_len,
            )
            tokens = tokens[:max_len]
        queries.append(Query(query_id, tokens))
    return queries


def load_qrels(path, grade_map: dict[int, int] | None = None) -> JudgmentSet:
    """Load TREC qrels (`query_id 0 doc_id grade`), mapping raw grades to the
    canonical scale. The default map is the identity on canonical grades."""
    path = Path(path)
    mapping = {g: g for g in CANONICAL_GRADES}
    if grade_map:
        mapping.update(grade_map)
    entries: dict[tuple[str, str], int] = {}
    with path.open("r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 4:
                raise DataError(f"{path}:{lineno}: expected 4 fields, got {len(parts)}")
            qid, _, did, raw = parts
            try:
                raw_grade = int(raw)
            except ValueError:
                raise DataError(f"{path}:{lineno}: grade {raw!r} is not an integer") from None
            if raw_grade not in mapping:
                raise DataError(f"{path}:{lineno}: raw grade {raw_grade} has no mapping")
            if (qid, did) in entries:
                raise DataError(f"{path}:{lineno}: duplicate judgment for ({qid}, {did})")
            entries[(qid, did)] = mapping[raw_grade]
    return JudgmentSet(entries)


def load_run(path) -> dict[str, RunRanking]:
    """Load a TREC run file (`query_id Q0 doc_id rank score tag`), grouped by query."""
    path = Path(path)
    grouped: dict[str, list[tuple[str, int, float]]] = {}
    with path.open("r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 6:
                raise DataError(f"{path}:{lineno}: expected 6 fields, got {len(parts)}")
            qid, _, did, rank, score, _ = parts
            try:
                grouped.setdefault(qid, []).append((did, int(rank), float(score)))
            except ValueError:
                raise DataError(f"{path}:{lineno}: bad rank/score field") from None
    return {qid: RunRanking(qid, entries) for qid, entries in grouped.items()}


def load_embeddings(path) -> EmbeddingTable:
    """Load whitespace-delimited word vectors; an optional first line may hold
    the `count dim` header."""
    path = Path(path)
    vectors: dict[str, np.ndarray] = {}
    dim = None
    with path.open("r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            parts = line.split()
            if not parts:
                continue
            if lineno == 1 and len(parts) == 2:
                try:
                    int(parts[0]), int(parts[1])
                    continue  # header line
                except ValueError:
                    pass
            token, values = parts[0], parts[1:]
            if not values:
                raise DataError(f"{path}:{lineno}: no vector components for {token!r}")
            try:
                vec = np.array([float(v) for v in values], dtype=np.float64)
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric vector component") from None
            if dim is None:
                dim = len(vec)
            elif len(vec) != dim:
                raise DataError(
                    f"{path}:{lineno}: vector length {len(vec)} != expected dim {dim}"
                )
            vectors[token] = vec
    if dim is None:
        raise DataError(f"{path}: no vectors found")
    return EmbeddingTable(dim=dim, vectors=vectors)


def compute_idf(corpus: list[TokenizedDocument]) -> IdfTable:
    """Document frequencies and smoothed IDF over a corpus."""
    if not corpus:
        raise DataError("cannot compute IDF over an empty corpus")
    n = len(corpus)
    df: dict[str, int] = {}
    for doc in corpus:
        for token in set(doc.tokens):
            df[token] = df.get(token, 0) + 1
    values = {t: math.log((n + 1) / (c + 1)) for t, c in df.items()}
    return IdfTable(doc_count=n, df=df, values=values)


# ---------------------------------------------------------------------------
# Writers (round-trip counterparts of the loaders; also used by `synth`).

def save_corpus(docs: list[TokenizedDocument], path) -> None:
    with Path(path).open("w", encoding="utf-8") as f:
        for doc in docs:
            f.write(json.dumps({"doc_id": doc.doc_id, "tokens": list(doc.tokens)}) + "\n")


def save_queries(queries: list[Query], path) -> None:
    with Path(path).open("w", encoding="utf-8") as f:
        for q in queries:
            f.write(json.dumps({"query_id": q.query_id, "tokens": list(q.tokens)}) + "\n")


def save_qrels(qrels: JudgmentSet, path) -> None:
    with Path(path).open("w", encoding="utf-8") as f:
        for (qid, did), grade in sorted(qrels.entries.items()):
            f.write(f"{qid} 0 {did} {grade}\n")


def save_run(runs: dict[str, RunRanking], path, tag: str = "pacrr") -> None:
    with Path(path).open("w", encoding="utf-8") as f:
        for qid in sorted(runs):
            for did, rank, score in runs[qid].entries:
                f.write(f"{qid} Q0 {did} {rank} {score!r} {tag}\n")


def save_embeddings(table: EmbeddingTable, path, header: bool = True) -> None:
    with Path(path).open("w", encoding="utf-8") as f:
        if header:
            f.write(f"{len(table.vectors)} {table.dim}\n")
        for token in sorted(table.vectors):
            comps = " ".join(repr(float(v)) for v in table.vectors[token])
            f.write(f"{token} {comps}\n")
