"""Dictionary entity linking over n-gram candidates.

A paragraph is tokenized, all n-grams up to a configurable length are
generated, each n-gram is scored against the vocabulary with either fuzzy
(Levenshtein-ratio) or embedding-cosine similarity, candidates at or above
the threshold keep their best-scoring entity, and the final mentions are the
longest non-overlapping spans.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .corpus import Paragraph, TokenSpan, tokenize
from .errors import LinkerError
from .providers import EmbedClient, EmbeddingVector
from .vocabulary import Vocabulary

SIM_FUNCTIONS = ("fuzzy", "embed")

DEFAULT_MAX_N = 6
DEFAULT_ALPHA = {"fuzzy": 0.90, "embed": 0.95}


@dataclass(frozen=True)
class LinkerConfig:
    max_n: int = DEFAULT_MAX_N
    alpha: float | None = None
    simfn: str = "fuzzy"

    def __post_init__(self) -> None:
        if self.max_n < 1:
            raise LinkerError("max_n must be >= 1")
        if self.simfn not in SIM_FUNCTIONS:
            raise LinkerError(f"unknown similarity function {self.simfn!r}")
        if self.alpha is not None and not 0.0 <= self.alpha <= 1.0:
            raise LinkerError("alpha must lie in [0, 1]")

    @property
    def effective_alpha(self) -> float:
        return DEFAULT_ALPHA[self.simfn] if self.alpha is None else self.alpha


@dataclass(frozen=True)
class NGram:
    token_range: tuple[int, int]
    text: str

    @property
    def length(self) -> int:
        return self.token_range[1] - self.token_range[0]


@dataclass(frozen=True)
class Candidate:
    ngram: NGram
    entity_id: str
    score: float


@dataclass(frozen=True)
class EntityMention:
    paragraph_path: str
    token_range: tuple[int, int] | None
    surface: str
    entity_id: str
    score: float
    method: str


def generate_ngrams(tokens: Sequence[TokenSpan], max_n: int) -> list[NGram]:
    """All n-grams up to max_n tokens, in (start, length) order."""
    if max_n < 1:
        raise LinkerError("max_n must be >= 1")
    normalized = [token.normalized for token in tokens]
    ngrams: list[NGram] = []
    count = len(normalized)
    for start in range(count):
        for length in range(1, min(max_n, count - start) + 1):
            ngrams.append(
                NGram(
                    token_range=(start, start + length),
                    text=" ".join(normalized[start : start + length]),
                )
            )
    return ngrams


def levenshtein(a: str, b: str) -> int:
    """Edit distance (insert/delete/substitute, unit costs), two-row DP."""
    if a == b:
        return 0
    if not a:
        return len(b)
    if not b:
        return len(a)
    if len(a) < len(b):
        a, b = b, a
    previous = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        current = [i]
        for j, cb in enumerate(b, 1):
            cost = 0 if ca == cb else 1
            current.append(min(current[-1] + 1, previous[j] + 1, previous[j - 1] + cost))
        previous = current
    return previous[-1]


def entsim_fuzzy(a: str, b: str) -> float:
    """1 - distance/max(len); both strings are expected pre-normalized."""
    longest = max(len(a), len(b))
    if longest == 0:
        return 1.0
    return 1.0 - levenshtein(a, b) / longest


def entsim_embed(v_a: EmbeddingVector, v_b: EmbeddingVector) -> float:
    """Dot product of unit vectors, clamped into [-1, 1]."""
    if v_a.dim != v_b.dim:
        raise LinkerError(f"embedding dimension mismatch: {v_a.dim} vs {v_b.dim}")
    score = float(np.dot(v_a.as_array(), v_b.as_array()))
    return max(-1.0, min(1.0, score))


class FuzzyIndex:
    """Vocabulary surfaces grouped by character length.

    Fuzzy scoring only needs surfaces whose length can still reach the
    threshold: sim >= alpha forces dist <= (1-alpha)*max(len), and dist is at
    least the length difference. One extra character of slack keeps the
    cutoff safe against float rounding at the boundary.
    """

    def __init__(self, vocab: Vocabulary):
        self.by_length: dict[int, list[tuple[str, str]]] = {}
        for surface, entity_id in sorted(vocab.surface_index.items()):
            self.by_length.setdefault(len(surface), []).append((surface, entity_id))

    def candidates_for(self, text_len: int, alpha: float) -> list[tuple[str, str]]:
        out: list[tuple[str, str]] = []
        for length, pairs in self.by_length.items():
            if abs(text_len - length) - 1 > (1.0 - alpha) * max(text_len, length):
                continue
            out.extend(pairs)
        return out


@dataclass
class SurfaceEmbeddings:
    """Unit-norm embedding matrix over the vocabulary's sorted surfaces."""

    surfaces: list[str]
    entity_ids: list[str]
    matrix: np.ndarray

    @classmethod
    def build(
        cls,
        vocab: Vocabulary,
        embed_client: EmbedClient,
        batch_size: int = 256,
    ) -> "SurfaceEmbeddings":
        surfaces = sorted(vocab.surface_index)
        entity_ids = [vocab.surface_index[s] for s in surfaces]
        vectors: list[np.ndarray] = []
        for start in range(0, len(surfaces), batch_size):
            batch = surfaces[start : start + batch_size]
            vectors.extend(v.as_array() for v in embed_client.embed(batch))
        matrix = np.vstack(vectors) if vectors else np.zeros((0, 0))
        return cls(surfaces=surfaces, entity_ids=entity_ids, matrix=matrix)

    def best_entity(self, vector: EmbeddingVector) -> tuple[str, str, float] | None:
        """(surface, entity_id, score) of the best match; ties favor the
        lexicographically smallest entity_id. None on an empty vocabulary."""
        if not self.surfaces:
            return None
        if self.matrix.shape[1] != vector.dim:
            raise LinkerError(
                f"embedding dimension mismatch: vocabulary {self.matrix.shape[1]}, "
                f"query {vector.dim}"
            )
        scores = self.matrix @ vector.as_array()
        top = np.flatnonzero(scores == scores.max())
        best_pos = min(top, key=lambda pos: self.entity_ids[pos])
        return self.surfaces[best_pos], self.entity_ids[best_pos], float(scores[best_pos])


def match_candidates(
    ngrams: Sequence[NGram],
    vocab: Vocabulary,
    config: LinkerConfig,
    fuzzy_index: FuzzyIndex | None = None,
    surface_embeddings: SurfaceEmbeddings | None = None,
    ngram_vectors: dict[str, EmbeddingVector] | None = None,
) -> list[Candidate]:
    """Candidates at or above the threshold, one best entity per n-gram.

    Ties on score go to the lexicographically smallest entity_id.
    """
    alpha = config.effective_alpha
    if config.simfn == "fuzzy":
        if fuzzy_index is None:
            fuzzy_index = FuzzyIndex(vocab)
        return _match_fuzzy(ngrams, vocab, alpha, fuzzy_index)
    if surface_embeddings is None or ngram_vectors is None:
        raise LinkerError("embed mode requires precomputed surface and n-gram embeddings")
    return _match_embed(ngrams, alpha, surface_embeddings, ngram_vectors)


def _match_fuzzy(
    ngrams: Sequence[NGram],
    vocab: Vocabulary,
    alpha: float,
    index: FuzzyIndex,
) -> list[Candidate]:
    candidates: list[Candidate] = []
    for ngram in ngrams:
        exact_owner = vocab.surface_index.get(ngram.text)
        if exact_owner is not None:
            # Score 1.0 needs string equality, and the index owns each
            # surface uniquely, so no other entity can tie here.
            candidates.append(Candidate(ngram=ngram, entity_id=exact_owner, score=1.0))
            continue
        best_id: str | None = None
        best_score = 0.0
        for surface, entity_id in index.candidates_for(len(ngram.text), alpha):
            score = entsim_fuzzy(ngram.text, surface)
            if score < alpha:
                continue
            if best_id is None or score > best_score or (
                score == best_score and entity_id < best_id
            ):
                best_id = entity_id
                best_score = score
        if best_id is not None:
            candidates.append(Candidate(ngram=ngram, entity_id=best_id, score=best_score))
    return candidates


def _match_embed(
    ngrams: Sequence[NGram],
    alpha: float,
    surface_embeddings: SurfaceEmbeddings,
    ngram_vectors: dict[str, EmbeddingVector],
) -> list[Candidate]:
    candidates: list[Candidate] = []
    entity_ids = surface_embeddings.entity_ids
    for ngram in ngrams:
        if not entity_ids:
            break
        vector = ngram_vectors.get(ngram.text)
        if vector is None:
            raise LinkerError(f"missing embedding for n-gram {ngram.text!r}")
        scores = surface_embeddings.matrix @ vector.as_array()
        best = scores.max()
        if best >= alpha:
            top = np.flatnonzero(scores == best)
            best_pos = min(top, key=lambda pos: entity_ids[pos])
            candidates.append(
                Candidate(ngram=ngram, entity_id=entity_ids[best_pos], score=float(best))
            )
    return candidates


def select_mentions(
    candidates: Sequence[Candidate],
    paragraph: Paragraph,
    tokens: Sequence[TokenSpan],
    method: str,
) -> list[EntityMention]:
    """Greedy longest-non-overlapping selection over one paragraph's candidates.

    Candidates are visited by (token length desc, score desc, start asc) and
    kept when they overlap nothing already kept. Output is ordered by start.
    """
    ordered = sorted(
        candidates,
        key=lambda c: (-c.ngram.length, -c.score, c.ngram.token_range[0]),
    )
    kept: list[Candidate] = []
    for candidate in ordered:
        start, end = candidate.ngram.token_range
        if any(start < k.ngram.token_range[1] and k.ngram.token_range[0] < end for k in kept):
            continue
        kept.append(candidate)
    kept.sort(key=lambda c: c.ngram.token_range[0])
    mentions: list[EntityMention] = []
    for candidate in kept:
        start, end = candidate.ngram.token_range
        surface = paragraph.text[tokens[start].start_char : tokens[end - 1].end_char]
        mentions.append(
            EntityMention(
                paragraph_path=paragraph.path,
                token_range=(start, end),
                surface=surface,
                entity_id=candidate.entity_id,
                score=candidate.score,
                method=method,
            )
        )
    return mentions


def link_entities(
    paragraph: Paragraph,
    vocab: Vocabulary,
    config: LinkerConfig,
    embed_client: EmbedClient | None = None,
    fuzzy_index: FuzzyIndex | None = None,
    surface_embeddings: SurfaceEmbeddings | None = None,
) -> list[EntityMention]:
    """Full linking pass: tokenize, n-grams, threshold matching, selection."""
    tokens = tokenize(paragraph.text)
    if not tokens:
        return []
    ngrams = generate_ngrams(tokens, config.max_n)
    ngram_vectors: dict[str, EmbeddingVector] | None = None
    if config.simfn == "embed":
        if embed_client is None:
            raise LinkerError("embed mode requires an embedding client")
        if surface_embeddings is None:
            raise LinkerError("embed mode requires precomputed vocabulary embeddings")
        unique_texts = list(dict.fromkeys(ngram.text for ngram in ngrams))
        vectors = embed_client.embed(unique_texts)
        ngram_vectors = dict(zip(unique_texts, vectors))
    candidates = match_candidates(
        ngrams,
        vocab,
        config,
        fuzzy_index=fuzzy_index,
        surface_embeddings=surface_embeddings,
        ngram_vectors=ngram_vectors,
    )
    return select_mentions(candidates, paragraph, tokens, config.simfn)
