"""Evaluation harnesses: synthetic questions, pairwise judging, metrics,
and reference-fabrication checking.

The pairwise judge sees each question twice with the candidate sets' order
swapped, and only ever sees paragraph texts, never which set came from the
graph. Reference checks classify each claimed citation independently on a
DOI axis and a closest-title axis.
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Collection, Mapping, Sequence

from .corpus import normalize_text
from .errors import EvalError, LlmParseError, TransportError
from .kg import Graph, degree
from .linker import entsim_fuzzy
from .prompts import render_prompt
from .providers import BiblioClient, ChatClient, ChatRequest

TITLE_MATCH_THRESHOLD = 0.9

DEGREE_STRATA = 4

VERIFIED = "verified"
TITLE_MISMATCH = "title_mismatch"
NOT_FOUND = "not_found"

_DOI_RE = re.compile(r"\bdoi:\s*(\S+)", re.IGNORECASE)
_VERDICT_RE = re.compile(r"^\s*\(?([12])\b")
_REFS_MARKER_RE = re.compile(r"^\s*references\s*:?\s*$", re.IGNORECASE)


@dataclass(frozen=True)
class GeneratedQuestion:
    question: str
    seed_entities: tuple[str, ...]


def _stratified_pool(graph: Graph, n_entities: int, rng: random.Random) -> list[str]:
    """Sample entity ids across degree quantiles so the pool spans both the
    heavily discussed and the barely mentioned."""
    ranked = sorted(
        graph.entity_nodes,
        key=lambda eid: (degree(graph, eid), graph.entity_nodes[eid].entity_name),
    )
    if len(ranked) < n_entities:
        raise EvalError(
            f"graph has {len(ranked)} entities, need at least {n_entities} for the pool"
        )
    strata_count = min(DEGREE_STRATA, len(ranked))
    chunk = -(-len(ranked) // strata_count)
    strata = [ranked[i * chunk : (i + 1) * chunk] for i in range(strata_count)]
    for stratum in strata:
        rng.shuffle(stratum)
    pool: list[str] = []
    cursor = 0
    while len(pool) < n_entities:
        stratum = strata[cursor % strata_count]
        if stratum:
            pool.append(stratum.pop())
        cursor += 1
    return pool


def gen_questions(
    graph: Graph,
    n_entities: int,
    chat_client: ChatClient,
    count: int,
    rng: random.Random | None = None,
    prompt_dir: str | Path | None = None,
    max_attempts: int = 200,
) -> list[GeneratedQuestion]:
    """Generate questions seeded by 2-3 pool entities with no direct edge
    between any seed pair."""
    rng = rng or random.Random(0)
    pool = _stratified_pool(graph, n_entities, rng)
    questions: list[GeneratedQuestion] = []
    for _ in range(count):
        seeds: list[str] | None = None
        for _attempt in range(max_attempts):
            size = rng.choice((2, 3))
            if size > len(pool):
                continue
            picked = rng.sample(pool, size)
            connected = any(
                graph.edges_between(a, b)
                for i, a in enumerate(picked)
                for b in picked[i + 1 :]
            )
            if not connected:
                seeds = picked
                break
        if seeds is None:
            raise EvalError(
                f"no disconnected 2-3 entity tuple found in the pool after "
                f"{max_attempts} attempts"
            )
        names = [graph.entity_nodes[eid].entity_name for eid in seeds]
        prompt = render_prompt("generate_question", prompt_dir, entities=", ".join(names))
        question = chat_client.chat(ChatRequest.single("", prompt)).strip()
        if not question:
            raise LlmParseError("question generator returned empty text")
        questions.append(GeneratedQuestion(question=question, seed_entities=tuple(seeds)))
    return questions


@dataclass(frozen=True)
class JudgeVerdict:
    question_id: str
    winner: str  # "A" or "B"
    a_position: str  # "first" or "second"


def _parse_verdict(raw: str) -> int:
    match = _VERDICT_RE.match(raw.strip())
    if not match:
        raise LlmParseError("judge answer must start with 1 or 2", raw)
    return int(match.group(1))


def judge_pair(
    question_id: str,
    question: str,
    set_a: Sequence[str],
    set_b: Sequence[str],
    chat_client: ChatClient,
    prompt_dir: str | Path | None = None,
) -> tuple[JudgeVerdict, JudgeVerdict]:
    """Judge both arrangements of the two paragraph sets.

    Sets are truncated to equal size first; the judge prompt carries only
    paragraph texts.
    """
    size = min(len(set_a), len(set_b))
    if size == 0:
        raise EvalError("judging needs at least one paragraph in each set")
    set_a = list(set_a)[:size]
    set_b = list(set_b)[:size]

    def ask(first: Sequence[str], second: Sequence[str]) -> int:
        prompt = render_prompt(
            "judge_pair",
            prompt_dir,
            question=question,
            set_one="\n\n".join(first),
            set_two="\n\n".join(second),
        )
        return _parse_verdict(chat_client.chat(ChatRequest.single("", prompt)))

    first_pick = ask(set_a, set_b)
    verdict_first = JudgeVerdict(
        question_id=question_id,
        winner="A" if first_pick == 1 else "B",
        a_position="first",
    )
    second_pick = ask(set_b, set_a)
    verdict_second = JudgeVerdict(
        question_id=question_id,
        winner="B" if second_pick == 1 else "A",
        a_position="second",
    )
    return verdict_first, verdict_second


@dataclass(frozen=True)
class Tally:
    total: int
    best_when_first: int
    best_when_second: int
    common: int

    @property
    def pct_first(self) -> float:
        return 100.0 * self.best_when_first / self.total if self.total else 0.0

    @property
    def pct_second(self) -> float:
        return 100.0 * self.best_when_second / self.total if self.total else 0.0

    def render(self) -> str:
        return "\n".join(
            (
                f"Total evaluated:             {self.total}",
                f"Set A best when first:       {self.best_when_first} ({self.pct_first:.2f}%)",
                f"Set A best when second:      {self.best_when_second} ({self.pct_second:.2f}%)",
                f"Best in both positions:      {self.common}",
            )
        )


def tally(verdicts: Sequence[JudgeVerdict]) -> Tally:
    """Count set-A wins per arrangement and their overlap across questions."""
    by_question: dict[str, dict[str, JudgeVerdict]] = {}
    for verdict in verdicts:
        slots = by_question.setdefault(verdict.question_id, {})
        if verdict.a_position in slots:
            raise EvalError(
                f"duplicate {verdict.a_position}-arrangement verdict for "
                f"question {verdict.question_id!r}"
            )
        slots[verdict.a_position] = verdict
    best_first = 0
    best_second = 0
    common = 0
    for question_id, slots in by_question.items():
        if set(slots) != {"first", "second"}:
            raise EvalError(f"unpaired verdict for question {question_id!r}")
        won_first = slots["first"].winner == "A"
        won_second = slots["second"].winner == "A"
        best_first += won_first
        best_second += won_second
        common += won_first and won_second
    return Tally(
        total=len(by_question),
        best_when_first=best_first,
        best_when_second=best_second,
        common=common,
    )


@dataclass(frozen=True)
class MetricSummary:
    precision: float
    recall: float
    f1: float


def _prf(pred: set, gold: set) -> tuple[float, float, float]:
    if not pred and not gold:
        return 1.0, 1.0, 1.0
    hits = len(pred & gold)
    precision = hits / len(pred) if pred else 0.0
    recall = hits / len(gold) if gold else 0.0
    if precision + recall == 0.0:
        return precision, recall, 0.0
    return precision, recall, 2 * precision * recall / (precision + recall)


def f1_metrics(
    predictions: Mapping[str, Collection[str]],
    gold: Mapping[str, Collection[str]],
) -> MetricSummary:
    """Per-document precision/recall/F1, macro-averaged over the gold docs.

    A document with no predictions against nonempty gold contributes zeros;
    a document where both sides are empty contributes a perfect score.
    """
    if not gold:
        raise EvalError("f1_metrics needs at least one gold document")
    p_total = r_total = f_total = 0.0
    for doc_id, gold_items in gold.items():
        precision, recall, f1 = _prf(
            set(predictions.get(doc_id, ())), set(gold_items)
        )
        p_total += precision
        r_total += recall
        f_total += f1
    n = len(gold)
    return MetricSummary(precision=p_total / n, recall=r_total / n, f1=f_total / n)


def extract_references(answer: str) -> tuple[list[tuple[str, str]], int]:
    """(title, doi) pairs from an answer's references section.

    Lines after a bare "References:" marker are treated as citation items;
    items without a parseable DOI (or with an empty title) are counted as
    malformed rather than dropped silently. Without the marker, any line
    carrying a DOI is harvested and nothing counts as malformed prose.
    """
    lines = answer.splitlines()
    marker_at = next(
        (idx for idx, line in enumerate(lines) if _REFS_MARKER_RE.match(line)), None
    )
    if marker_at is not None:
        items = [line for line in lines[marker_at + 1 :] if line.strip()]
        strict = True
    else:
        items = [line for line in lines if _DOI_RE.search(line)]
        strict = False

    refs: list[tuple[str, str]] = []
    malformed = 0
    for item in items:
        cleaned = re.sub(r"^\s*(?:[-*•]+|\(?\d+[.)])\s*", "", item).strip()
        match = _DOI_RE.search(cleaned)
        if not match:
            if strict:
                malformed += 1
            continue
        doi = match.group(1).rstrip(".,;)")
        title = cleaned[: match.start()].strip().rstrip(".,;(").strip()
        if not title or not doi:
            malformed += 1
            continue
        refs.append((title, doi))
    return refs, malformed


@dataclass(frozen=True)
class ReferenceRecord:
    claimed_title: str
    claimed_doi: str
    doi_status: str | None
    title_status: str | None
    error: str | None = None


@dataclass(frozen=True)
class ReferenceSummary:
    total: int
    doi_not_found: int
    doi_title_mismatch: int
    title_not_found: int
    title_title_mismatch: int
    errors: int

    @property
    def doi_incorrect(self) -> int:
        return self.doi_not_found + self.doi_title_mismatch

    @property
    def title_incorrect(self) -> int:
        return self.title_not_found + self.title_title_mismatch

    def _pct(self, count: int) -> str:
        pct = 100.0 * count / self.total if self.total else 0.0
        return f"{count} ({pct:.2f}%)"

    def render_table(self) -> str:
        rows = [
            ("--", "Total Cited References", str(self.total)),
            ("DOI", "Not Found", str(self.doi_not_found)),
            ("", "Title Mismatch", str(self.doi_title_mismatch)),
            ("", "Incorrect DOIs (%)", self._pct(self.doi_incorrect)),
            ("Title (Closest Match)", "Not Found", str(self.title_not_found)),
            ("", "Title Mismatch", str(self.title_title_mismatch)),
            ("", "Incorrect Titles (%)", self._pct(self.title_incorrect)),
        ]
        if self.errors:
            rows.append(("--", "Lookup Errors", str(self.errors)))
        widths = [max(len(row[i]) for row in rows) + 2 for i in range(2)]
        header = f"{'Search By':<{widths[0]}}{'Reference Type':<{widths[1]}}Count"
        body = [f"{a:<{widths[0]}}{b:<{widths[1]}}{c}" for a, b, c in rows]
        return "\n".join([header, *body])


def check_references(
    refs: Sequence[tuple[str, str]],
    biblio_client: BiblioClient,
) -> tuple[list[ReferenceRecord], ReferenceSummary]:
    """Classify each claimed (title, doi) pair on both lookup axes.

    DOI axis: the DOI must resolve and its record's title must equal the
    claimed title after normalization. Title axis: the closest title match
    must reach the similarity threshold. Transport failures mark the record
    with an error instead of aborting the batch.
    """
    records: list[ReferenceRecord] = []
    for claimed_title, claimed_doi in refs:
        error: str | None = None
        doi_status: str | None = None
        title_status: str | None = None
        try:
            found = biblio_client.lookup_doi(claimed_doi)
            if found is None:
                doi_status = NOT_FOUND
            elif normalize_text(found.get("title", "")) != normalize_text(claimed_title):
                doi_status = TITLE_MISMATCH
            else:
                doi_status = VERIFIED
        except TransportError as exc:
            error = f"doi lookup failed: {exc}"
        try:
            closest = biblio_client.search_title(claimed_title)
            if closest is None:
                title_status = NOT_FOUND
            else:
                similarity = entsim_fuzzy(
                    normalize_text(claimed_title),
                    normalize_text(closest.get("title", "")),
                )
                title_status = VERIFIED if similarity >= TITLE_MATCH_THRESHOLD else TITLE_MISMATCH
        except TransportError as exc:
            suffix = f"title search failed: {exc}"
            error = f"{error}; {suffix}" if error else suffix
        records.append(
            ReferenceRecord(
                claimed_title=claimed_title,
                claimed_doi=claimed_doi,
                doi_status=doi_status,
                title_status=title_status,
                error=error,
            )
        )
    summary = ReferenceSummary(
        total=len(records),
        doi_not_found=sum(r.doi_status == NOT_FOUND for r in records),
        doi_title_mismatch=sum(r.doi_status == TITLE_MISMATCH for r in records),
        title_not_found=sum(r.title_status == NOT_FOUND for r in records),
        title_title_mismatch=sum(r.title_status == TITLE_MISMATCH for r in records),
        errors=sum(r.error is not None for r in records),
    )
    return records, summary
