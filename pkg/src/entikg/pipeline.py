"""Stage orchestration: run extraction over a corpus and persist products.

Each stage reads and writes plain JSONL files so expensive LLM stages can be
re-run independently. Model calls for independent paragraphs run in a thread
pool bounded by the provider's max_in_flight; anything that mutates the
vocabulary happens afterwards in paragraph order, keeping synthetic entity
ids deterministic.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .corpus import Paragraph
from .errors import PipelineError
from .extraction import (
    CombinedExtraction,
    EntityCentricSpan,
    EntityDescription,
    LlmSpan,
    RelationSpan,
    combine_and_filter,
    extract_entity_spans,
    extract_relations,
    llm_extract_entities,
)
from .linker import (
    EntityMention,
    FuzzyIndex,
    LinkerConfig,
    SurfaceEmbeddings,
    link_entities,
)
from .providers import ChatClient, EmbedClient
from .retrieval import ContextStore
from .vocabulary import Vocabulary


def map_in_order(fn: Callable, items: Sequence, max_workers: int):
    """Apply fn to items concurrently, yielding results in input order."""
    if max_workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(fn, items))


@dataclass(frozen=True)
class ParagraphReport:
    """Per-paragraph extraction accounting for the report file."""

    paragraph_path: str
    mentions: int = 0
    llm_spans_dropped: int = 0
    filter_rejected: int = 0
    filter_invented: int = 0
    relations: int = 0
    descriptions: int = 0
    relation_lines_dropped: int = 0


@dataclass
class ExtractionOutputs:
    mentions: list[EntityMention]
    drop_counters: dict[str, int]
    reports: list[ParagraphReport]


def link_and_extract(
    paragraphs: Sequence[Paragraph],
    vocab: Vocabulary,
    linker_config: LinkerConfig,
    chat_client: ChatClient,
    embed_client: EmbedClient,
    theta: float,
    surface_embeddings: SurfaceEmbeddings | None = None,
    prompt_dir: str | Path | None = None,
) -> ExtractionOutputs:
    """Per paragraph: dictionary linking plus LLM extraction, then the
    combine-and-filter pass.

    The linking/extraction phase is read-only and runs concurrently; the
    mapping/filter phase can mint new vocabulary entities, so it runs
    sequentially in paragraph order.
    """
    fuzzy_index = FuzzyIndex(vocab) if linker_config.simfn == "fuzzy" else None
    if linker_config.simfn == "embed" and surface_embeddings is None:
        surface_embeddings = SurfaceEmbeddings.build(vocab, embed_client)

    def first_phase(paragraph: Paragraph) -> tuple[list[EntityMention], list[LlmSpan], int]:
        el = link_entities(
            paragraph,
            vocab,
            linker_config,
            embed_client=embed_client,
            fuzzy_index=fuzzy_index,
            surface_embeddings=surface_embeddings,
        )
        spans, dropped = llm_extract_entities(paragraph, chat_client, prompt_dir)
        return el, spans, dropped

    phase_one = map_in_order(first_phase, paragraphs, chat_client.cfg.max_in_flight)

    mapping_embeddings = surface_embeddings
    if mapping_embeddings is None:
        mapping_embeddings = SurfaceEmbeddings.build(vocab, embed_client)

    mentions: list[EntityMention] = []
    reports: list[ParagraphReport] = []
    counters = {"llm_spans_outside_text": 0, "filter_rejected": 0, "filter_invented": 0}
    for paragraph, (el, spans, dropped) in zip(paragraphs, phase_one):
        counters["llm_spans_outside_text"] += dropped
        combined: CombinedExtraction = combine_and_filter(
            paragraph,
            el,
            spans,
            vocab,
            chat_client,
            embed_client,
            theta,
            mapping_embeddings,
            prompt_dir,
        )
        counters["filter_rejected"] += len(combined.rejected)
        counters["filter_invented"] += combined.invented
        mentions.extend(combined.mentions)
        reports.append(
            ParagraphReport(
                paragraph_path=paragraph.path,
                mentions=len(combined.mentions),
                llm_spans_dropped=dropped,
                filter_rejected=len(combined.rejected),
                filter_invented=combined.invented,
            )
        )
    return ExtractionOutputs(mentions=mentions, drop_counters=counters, reports=reports)


def paragraph_entities(mentions: Iterable[EntityMention]) -> dict[str, list[str]]:
    """Ordered distinct entity ids per paragraph path."""
    per_paragraph: dict[str, list[str]] = {}
    for mention in mentions:
        bucket = per_paragraph.setdefault(mention.paragraph_path, [])
        if mention.entity_id not in bucket:
            bucket.append(mention.entity_id)
    return per_paragraph


def relations_stage(
    paragraphs: Sequence[Paragraph],
    mentions: Sequence[EntityMention],
    vocab: Vocabulary,
    chat_client: ChatClient,
    prompt_dir: str | Path | None = None,
) -> tuple[list[RelationSpan], list[EntityDescription], dict[str, int], list[ParagraphReport]]:
    """Relation extraction over every paragraph that carries entities."""
    per_paragraph = paragraph_entities(mentions)
    relations: list[RelationSpan] = []
    descriptions: list[EntityDescription] = []
    reports: list[ParagraphReport] = []
    dropped = 0
    targets = [p for p in paragraphs if per_paragraph.get(p.path)]

    def worker(paragraph: Paragraph):
        return extract_relations(
            paragraph, per_paragraph[paragraph.path], vocab, chat_client, prompt_dir
        )

    for paragraph, result in zip(targets, map_in_order(worker, targets, chat_client.cfg.max_in_flight)):
        relations.extend(result.relations)
        descriptions.extend(result.descriptions)
        dropped += result.dropped
        reports.append(
            ParagraphReport(
                paragraph_path=paragraph.path,
                relations=len(result.relations),
                descriptions=len(result.descriptions),
                relation_lines_dropped=result.dropped,
            )
        )
    return relations, descriptions, {"relation_lines_dropped": dropped}, reports


def spans_stage(
    paragraphs: Sequence[Paragraph],
    mentions: Sequence[EntityMention],
    vocab: Vocabulary,
    chat_client: ChatClient,
    prompt_dir: str | Path | None = None,
) -> tuple[list[EntityCentricSpan], dict[str, int]]:
    """Entity-centric span extraction for every entity-bearing paragraph."""
    per_paragraph = paragraph_entities(mentions)
    spans: list[EntityCentricSpan] = []
    dropped = 0
    targets = [p for p in paragraphs if per_paragraph.get(p.path)]

    def worker(paragraph: Paragraph):
        return extract_entity_spans(
            paragraph.path,
            paragraph.text,
            per_paragraph[paragraph.path],
            vocab,
            chat_client,
            prompt_dir,
        )

    for result, count in map_in_order(worker, targets, chat_client.cfg.max_in_flight):
        spans.extend(result)
        dropped += count
    return spans, {"entity_span_lines_dropped": dropped}


def build_store(
    paragraphs: Sequence[Paragraph],
    spans: Sequence[EntityCentricSpan],
    embed_client: EmbedClient,
) -> ContextStore:
    """Context store over the whole corpus: one context per paragraph."""
    spans_by_context: dict[str, list[tuple[str, str]]] = {}
    for span in spans:
        spans_by_context.setdefault(span.context_id, []).append((span.entity_id, span.text))
    return ContextStore.build(
        [(p.path, p.text) for p in paragraphs], spans_by_context, embed_client
    )


def question_entity_extractor(
    vocab: Vocabulary,
    linker_config: LinkerConfig,
    embed_client: EmbedClient | None = None,
    fuzzy_index: FuzzyIndex | None = None,
    surface_embeddings: SurfaceEmbeddings | None = None,
) -> Callable[[str], list[str]]:
    """Entity-name extractor for questions, backed by the dictionary linker."""

    def extract(question: str) -> list[str]:
        paragraph = Paragraph(
            para_id="question/q/0",
            doc_id="question",
            section_label="q",
            text=question,
            path="question/q/0",
        )
        found = link_entities(
            paragraph,
            vocab,
            linker_config,
            embed_client=embed_client,
            fuzzy_index=fuzzy_index,
            surface_embeddings=surface_embeddings,
        )
        names: list[str] = []
        for mention in found:
            name = vocab.standard_names[mention.entity_id]
            if name not in names:
                names.append(name)
        return names

    return extract


# --- JSONL persistence for stage products ---------------------------------


def merge_extraction_report(
    reports: Sequence[ParagraphReport], path: str | Path, fresh: bool = False
) -> None:
    """Write or update the per-paragraph extraction report.

    A stage contributes only the fields it owns (nonzero in its reports);
    counts for paragraphs already on file are preserved for the other
    stage's fields, so entities and relations passes compose. The entities
    stage passes fresh=True to restart the report for a new run.
    """
    path = Path(path)
    existing: dict[str, dict] = {}
    if path.exists() and not fresh:
        for record in _read_jsonl(path):
            existing[record["paragraph_path"]] = record
    for report in reports:
        record = existing.setdefault(
            report.paragraph_path, {"paragraph_path": report.paragraph_path}
        )
        for field_name in (
            "mentions",
            "llm_spans_dropped",
            "filter_rejected",
            "filter_invented",
            "relations",
            "descriptions",
            "relation_lines_dropped",
        ):
            value = getattr(report, field_name)
            if value or field_name not in record:
                record[field_name] = value
    _write_jsonl(path, (existing[key] for key in sorted(existing)))


def save_mentions(mentions: Iterable[EntityMention], path: str | Path) -> None:
    _write_jsonl(
        path,
        (
            {
                "paragraph_path": m.paragraph_path,
                "token_range": list(m.token_range) if m.token_range else None,
                "surface": m.surface,
                "entity_id": m.entity_id,
                "score": m.score,
                "method": m.method,
            }
            for m in mentions
        ),
    )


def load_mentions(path: str | Path) -> list[EntityMention]:
    return [
        EntityMention(
            paragraph_path=rec["paragraph_path"],
            token_range=tuple(rec["token_range"]) if rec["token_range"] else None,
            surface=rec["surface"],
            entity_id=rec["entity_id"],
            score=rec["score"],
            method=rec["method"],
        )
        for rec in _read_jsonl(path)
    ]


def save_relations(
    relations: Iterable[RelationSpan],
    descriptions: Iterable[EntityDescription],
    path: str | Path,
) -> None:
    records: list[dict] = [
        {
            "kind": "relation",
            "entity_a": r.entity_a,
            "entity_b": r.entity_b,
            "relation_text": r.relation_text,
            "paragraph_path": r.paragraph_path,
        }
        for r in relations
    ]
    records.extend(
        {
            "kind": "description",
            "entity_id": d.entity_id,
            "paragraph_path": d.paragraph_path,
            "text": d.text,
        }
        for d in descriptions
    )
    _write_jsonl(path, records)


def load_relations(path: str | Path) -> tuple[list[RelationSpan], list[EntityDescription]]:
    relations: list[RelationSpan] = []
    descriptions: list[EntityDescription] = []
    for rec in _read_jsonl(path):
        if rec["kind"] == "relation":
            relations.append(
                RelationSpan(
                    entity_a=rec["entity_a"],
                    entity_b=rec["entity_b"],
                    relation_text=rec["relation_text"],
                    paragraph_path=rec["paragraph_path"],
                )
            )
        elif rec["kind"] == "description":
            descriptions.append(
                EntityDescription(
                    entity_id=rec["entity_id"],
                    paragraph_path=rec["paragraph_path"],
                    text=rec["text"],
                )
            )
        else:
            raise PipelineError(f"unknown relation record kind {rec['kind']!r}")
    return relations, descriptions


def save_entity_spans(spans: Iterable[EntityCentricSpan], path: str | Path) -> None:
    _write_jsonl(
        path,
        (
            {"entity_id": s.entity_id, "context_id": s.context_id, "text": s.text}
            for s in spans
        ),
    )


def load_entity_spans(path: str | Path) -> list[EntityCentricSpan]:
    return [
        EntityCentricSpan(
            entity_id=rec["entity_id"], context_id=rec["context_id"], text=rec["text"]
        )
        for rec in _read_jsonl(path)
    ]


def save_paragraphs(paragraphs: Iterable[Paragraph], path: str | Path) -> None:
    _write_jsonl(
        path,
        (
            {
                "para_id": p.para_id,
                "doc_id": p.doc_id,
                "section_label": p.section_label,
                "text": p.text,
                "path": p.path,
            }
            for p in paragraphs
        ),
    )


def load_paragraphs(path: str | Path) -> list[Paragraph]:
    return [
        Paragraph(
            para_id=rec["para_id"],
            doc_id=rec["doc_id"],
            section_label=rec["section_label"],
            text=rec["text"],
            path=rec["path"],
        )
        for rec in _read_jsonl(path)
    ]


def _write_jsonl(path: str | Path, records: Iterable[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def _read_jsonl(path: str | Path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise PipelineError(f"file not found: {path}")
    records: list[dict] = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise PipelineError(f"{path}: line {lineno}: corrupted record ({exc})") from None
    return records
