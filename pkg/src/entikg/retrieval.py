"""Span-weighted context retrieval, baseline cosine retrieval, and precision@1.

The span-weighted retriever compares the top-2 contexts for a query. When
their scores are close (within the schedule's entry threshold), each context
score is blended with its best entity-span score using a weight looked up
from the score difference; the final context score never drops below its
original value. Otherwise the plain argmax wins.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import RetrievalError
from .providers import UNIT_NORM_TOLERANCE, EmbedClient, EmbeddingVector

TABLE_BUCKETS = ((0.01, 0.10), (0.02, 0.15), (0.03, 0.20), (0.04, 0.25), (0.05, 0.30))

STORE_SCHEMA_VERSION = 1


def _unit_row(values: object, path: Path, lineno: int) -> np.ndarray:
    row = np.asarray(values, dtype=np.float64)
    if row.ndim != 1 or abs(float(np.linalg.norm(row)) - 1.0) > UNIT_NORM_TOLERANCE:
        raise RetrievalError(f"{path}: line {lineno}: stored vector is not unit-norm")
    return row


@dataclass(frozen=True)
class SpanWeightSchedule:
    """Ordered (upper_bound, weight) buckets; the last bound is the entry
    threshold below which span reweighting kicks in."""

    buckets: tuple[tuple[float, float], ...]

    def __post_init__(self) -> None:
        if not self.buckets:
            raise RetrievalError("schedule needs at least one bucket")
        bounds = [bound for bound, _ in self.buckets]
        if any(b2 <= b1 for b1, b2 in zip(bounds, bounds[1:])):
            raise RetrievalError("schedule bounds must be strictly increasing")

    @property
    def entry_threshold(self) -> float:
        return self.buckets[-1][0]

    @classmethod
    def default(cls) -> "SpanWeightSchedule":
        return cls(buckets=TABLE_BUCKETS)

    @classmethod
    def constant(cls, weight: float, threshold: float = 0.05) -> "SpanWeightSchedule":
        """Single-bucket schedule: every in-threshold diff gets one weight."""
        return cls(buckets=((threshold, weight),))

    def truncate(self, bound: float) -> "SpanWeightSchedule":
        """Keep only buckets with upper bound <= the given value."""
        kept = tuple(b for b in self.buckets if b[0] <= bound)
        if not kept:
            raise RetrievalError(f"no schedule bucket has bound <= {bound}")
        return SpanWeightSchedule(buckets=kept)


def get_span_weight(schedule: SpanWeightSchedule, score_diff: float) -> float:
    """Weight of the smallest bucket whose bound covers the score difference."""
    if score_diff < 0:
        raise RetrievalError("score_diff must be non-negative")
    for bound, weight in schedule.buckets:
        if score_diff <= bound:
            return weight
    raise RetrievalError(
        f"score_diff {score_diff} exceeds the schedule entry threshold "
        f"{schedule.entry_threshold}"
    )


@dataclass(frozen=True)
class ContextSpan:
    entity_id: str
    text: str
    vector: EmbeddingVector


@dataclass
class ContextStore:
    """Contexts with unit-norm embeddings plus their entity-specific spans."""

    ids: list[str]
    texts: list[str]
    matrix: np.ndarray
    spans: list[list[ContextSpan]]

    def __post_init__(self) -> None:
        if not (len(self.ids) == len(self.texts) == len(self.spans) == self.matrix.shape[0]):
            raise RetrievalError("context store columns disagree in length")
        if len(set(self.ids)) != len(self.ids):
            raise RetrievalError("context ids must be unique")

    def __len__(self) -> int:
        return len(self.ids)

    @classmethod
    def build(
        cls,
        contexts: Sequence[tuple[str, str]],
        spans_by_context: Mapping[str, Sequence[tuple[str, str]]],
        embed_client: EmbedClient,
    ) -> "ContextStore":
        """Embed contexts and their (entity_id, span text) lists in one pass."""
        ids = [cid for cid, _ in contexts]
        texts = [text for _, text in contexts]
        vectors = embed_client.embed(texts) if texts else []
        matrix = (
            np.vstack([v.as_array() for v in vectors]) if vectors else np.zeros((0, 0))
        )
        spans: list[list[ContextSpan]] = []
        for cid in ids:
            entries = list(spans_by_context.get(cid, ()))
            if entries:
                span_vectors = embed_client.embed([text for _, text in entries])
                spans.append(
                    [
                        ContextSpan(entity_id=eid, text=text, vector=vec)
                        for (eid, text), vec in zip(entries, span_vectors)
                    ]
                )
            else:
                spans.append([])
        return cls(ids=ids, texts=texts, matrix=matrix, spans=spans)

    def span_matrix(self, index: int) -> np.ndarray | None:
        entries = self.spans[index]
        if not entries:
            return None
        return np.vstack([span.vector.as_array() for span in entries])

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8") as fh:
            fh.write(json.dumps({"kind": "header", "version": STORE_SCHEMA_VERSION}) + "\n")
            for pos, cid in enumerate(self.ids):
                fh.write(
                    json.dumps(
                        {
                            "kind": "context",
                            "context_id": cid,
                            "text": self.texts[pos],
                            "vector": [float(x) for x in self.matrix[pos]],
                        },
                        ensure_ascii=False,
                    )
                    + "\n"
                )
                for span in self.spans[pos]:
                    fh.write(
                        json.dumps(
                            {
                                "kind": "span",
                                "context_id": cid,
                                "entity_id": span.entity_id,
                                "text": span.text,
                                "vector": [float(x) for x in span.vector.values],
                            },
                            ensure_ascii=False,
                        )
                        + "\n"
                    )

    @classmethod
    def load(cls, path: str | Path) -> "ContextStore":
        path = Path(path)
        if not path.exists():
            raise RetrievalError(f"context store not found: {path}")
        ids: list[str] = []
        texts: list[str] = []
        rows: list[np.ndarray] = []
        spans: list[list[ContextSpan]] = []
        position: dict[str, int] = {}
        with path.open(encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    record = json.loads(line)
                    kind = record["kind"]
                except (json.JSONDecodeError, TypeError, KeyError) as exc:
                    raise RetrievalError(f"{path}: line {lineno}: bad store record ({exc})") from None
                if kind == "header":
                    if record.get("version") != STORE_SCHEMA_VERSION:
                        raise RetrievalError(
                            f"{path}: unsupported store version {record.get('version')!r}"
                        )
                elif kind == "context":
                    position[record["context_id"]] = len(ids)
                    ids.append(record["context_id"])
                    texts.append(record["text"])
                    rows.append(_unit_row(record["vector"], path, lineno))
                    spans.append([])
                elif kind == "span":
                    pos = position.get(record["context_id"])
                    if pos is None:
                        raise RetrievalError(
                            f"{path}: line {lineno}: span before its context record"
                        )
                    row = _unit_row(record["vector"], path, lineno)
                    spans[pos].append(
                        ContextSpan(
                            entity_id=record["entity_id"],
                            text=record["text"],
                            vector=EmbeddingVector(
                                values=tuple(float(x) for x in row), dim=len(row)
                            ),
                        )
                    )
                else:
                    raise RetrievalError(f"{path}: line {lineno}: unknown record kind {kind!r}")
        matrix = np.vstack(rows) if rows else np.zeros((0, 0))
        return cls(ids=ids, texts=texts, matrix=matrix, spans=spans)


@dataclass(frozen=True)
class RetrievalTrace:
    """Everything retrieve_context computed: scores before and after blending."""

    chosen_id: str
    first_id: str
    second_id: str
    s1: float
    s2: float
    reweighted: bool
    weight: float | None
    es1: float | None
    es2: float | None
    final_s1: float
    final_s2: float


def rescore_with_spans(
    s1: float, s2: float, es1: float, es2: float, weight: float
) -> tuple[float, float]:
    """Blend context and span scores; final scores never drop below originals."""
    blended1 = s1 * (1.0 - weight) + es1 * weight
    blended2 = s2 * (1.0 - weight) + es2 * weight
    return max(s1, blended1), max(s2, blended2)


def retrieve_context_trace(
    store: ContextStore,
    schedule: SpanWeightSchedule,
    v_q: EmbeddingVector,
) -> RetrievalTrace:
    if len(store) < 2:
        raise RetrievalError("span-weighted retrieval needs at least 2 contexts")
    norm = float(np.linalg.norm(v_q.as_array()))
    if abs(norm - 1.0) > UNIT_NORM_TOLERANCE:
        raise RetrievalError(f"query vector must be unit-norm, got {norm}")
    ranked = baseline_topk(store, v_q, 2)
    first_pos = store.ids.index(ranked[0])
    second_pos = store.ids.index(ranked[1])
    query = v_q.as_array()
    s1 = float(store.matrix[first_pos] @ query)
    s2 = float(store.matrix[second_pos] @ query)
    score_diff = s1 - s2

    if score_diff >= schedule.entry_threshold:
        return RetrievalTrace(
            chosen_id=ranked[0],
            first_id=ranked[0],
            second_id=ranked[1],
            s1=s1,
            s2=s2,
            reweighted=False,
            weight=None,
            es1=None,
            es2=None,
            final_s1=s1,
            final_s2=s2,
        )

    spans1 = store.span_matrix(first_pos)
    spans2 = store.span_matrix(second_pos)
    if spans1 is None or spans2 is None:
        # Max over an empty span set is undefined; fall back to the argmax.
        return RetrievalTrace(
            chosen_id=ranked[0],
            first_id=ranked[0],
            second_id=ranked[1],
            s1=s1,
            s2=s2,
            reweighted=False,
            weight=None,
            es1=None,
            es2=None,
            final_s1=s1,
            final_s2=s2,
        )

    es1 = float(np.max(spans1 @ query))
    es2 = float(np.max(spans2 @ query))
    weight = get_span_weight(schedule, score_diff)
    final_s1, final_s2 = rescore_with_spans(s1, s2, es1, es2, weight)
    chosen = ranked[0] if final_s1 > final_s2 else ranked[1]
    return RetrievalTrace(
        chosen_id=chosen,
        first_id=ranked[0],
        second_id=ranked[1],
        s1=s1,
        s2=s2,
        reweighted=True,
        weight=weight,
        es1=es1,
        es2=es2,
        final_s1=final_s1,
        final_s2=final_s2,
    )


def retrieve_context(
    store: ContextStore,
    schedule: SpanWeightSchedule,
    v_q: EmbeddingVector,
) -> str:
    """Context id chosen by span-weighted retrieval for the query vector."""
    return retrieve_context_trace(store, schedule, v_q).chosen_id


def baseline_topk(store: ContextStore, v_q: EmbeddingVector, k: int) -> list[str]:
    """Top-k context ids by dot product, ties broken by context id."""
    if k < 1:
        raise RetrievalError("k must be >= 1")
    if len(store) == 0:
        return []
    scores = store.matrix @ v_q.as_array()
    order = sorted(range(len(store)), key=lambda pos: (-scores[pos], store.ids[pos]))
    return [store.ids[pos] for pos in order[:k]]


def precision_at_1(
    predictions: Sequence[tuple[str, str]],
    gold: Mapping[str, str],
) -> float:
    """Fraction of queries whose chosen context matches the gold context."""
    if not predictions:
        raise RetrievalError("precision@1 is undefined on an empty prediction set")
    correct = 0
    for query, chosen in predictions:
        if query not in gold:
            raise RetrievalError(f"no gold context recorded for query {query!r}")
        if gold[query] == chosen:
            correct += 1
    return correct / len(predictions)
