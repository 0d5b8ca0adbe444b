"""LLM-backed extraction: entity spans, relation spans, and domain filtering.

All model output flows through tolerant line parsers (bullets and numbering
stripped, a literal NONE means empty). Entity and relation items that violate
their contracts are never silently lost: every operation reports a drop
count next to its parsed items.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .corpus import Paragraph, normalize_text
from .errors import LlmParseError
from .linker import EntityMention, SurfaceEmbeddings
from .prompts import render_prompt
from .providers import ChatClient, ChatRequest, EmbedClient
from .vocabulary import Vocabulary

DEFAULT_THETA = 0.95

EMPTY_MARKER = "NONE"

_BULLET_RE = re.compile(r"^\s*(?:[-*•]+|\(?\d+[.)])\s*")
_YES_NO_RE = re.compile(r"^(yes|no)\b", re.IGNORECASE)


@dataclass(frozen=True)
class LlmSpan:
    surface: str
    paragraph_path: str


@dataclass(frozen=True)
class RelationSpan:
    entity_a: str
    entity_b: str
    relation_text: str
    paragraph_path: str


@dataclass(frozen=True)
class EntityDescription:
    entity_id: str
    paragraph_path: str
    text: str


@dataclass(frozen=True)
class EntityCentricSpan:
    entity_id: str
    context_id: str
    text: str


@dataclass(frozen=True)
class RelationExtraction:
    relations: list[RelationSpan]
    descriptions: list[EntityDescription]
    dropped: int


@dataclass(frozen=True)
class CombinedExtraction:
    mentions: list[EntityMention]
    rejected: list[str]
    invented: int


def parse_item_lines(raw: str) -> list[str]:
    """Newline-delimited items with bullets/numbering stripped.

    A bare NONE (or an empty first line marker) parses to the empty list;
    fully blank output is a parse error.
    """
    if not raw.strip():
        raise LlmParseError("model returned empty output", raw)
    items: list[str] = []
    for line in raw.splitlines():
        line = _BULLET_RE.sub("", line).strip()
        if not line:
            continue
        if line.upper() == EMPTY_MARKER and not items:
            return []
        items.append(line)
    return items


def parse_yes_no(raw: str) -> bool:
    match = _YES_NO_RE.match(_BULLET_RE.sub("", raw.strip()))
    if not match:
        raise LlmParseError("expected a YES/NO answer", raw)
    return match.group(1).lower() == "yes"


def llm_extract_entities(
    paragraph: Paragraph,
    chat_client: ChatClient,
    prompt_dir: str | Path | None = None,
) -> tuple[list[LlmSpan], int]:
    """Model-proposed entity spans; spans not found in the paragraph are
    dropped and counted."""
    prompt = render_prompt("extract_entities", prompt_dir, text=paragraph.text)
    raw = chat_client.chat(ChatRequest.single("", prompt))
    haystack = paragraph.text.lower()
    spans: list[LlmSpan] = []
    dropped = 0
    for item in parse_item_lines(raw):
        if item.lower() in haystack:
            spans.append(LlmSpan(surface=item, paragraph_path=paragraph.path))
        else:
            dropped += 1
    return spans, dropped


def map_to_standard(
    span: LlmSpan,
    vocab: Vocabulary,
    embed_client: EmbedClient,
    theta: float,
    surface_embeddings: SurfaceEmbeddings,
) -> str:
    """Resolve a model span to a vocabulary entity, minting one if needed.

    Exact surface lookup wins without an embedding call. Otherwise the
    nearest vocabulary surface by cosine decides: at or above theta the span
    joins that entity, below it the span becomes a new synthetic entity.
    Freshly minted entities are only reachable by exact lookup until the
    surface embeddings are rebuilt.
    """
    exact = vocab.lookup(span.surface)
    if exact is not None:
        return exact
    normalized = normalize_text(span.surface)
    best = surface_embeddings.best_entity(embed_client.embed_one(normalized)) if normalized else None
    if best is not None and best[2] >= theta:
        return best[1]
    return vocab.add_entity(span.surface)


def combine_and_filter(
    paragraph: Paragraph,
    el_mentions: Sequence[EntityMention],
    llm_spans: Sequence[LlmSpan],
    vocab: Vocabulary,
    chat_client: ChatClient,
    embed_client: EmbedClient,
    theta: float,
    surface_embeddings: SurfaceEmbeddings,
    prompt_dir: str | Path | None = None,
) -> CombinedExtraction:
    """Union the linker and model entity sets, then keep what the filter
    prompt confirms.

    EL-sourced mentions keep their token ranges; entities only the model
    found get one offset-free mention each. Filter answers naming entities
    outside the union are counted as invented and ignored.
    """
    union_order: list[str] = []
    el_by_entity: dict[str, list[EntityMention]] = {}
    for mention in el_mentions:
        if mention.entity_id not in el_by_entity:
            union_order.append(mention.entity_id)
        el_by_entity.setdefault(mention.entity_id, []).append(mention)

    llm_first_span: dict[str, LlmSpan] = {}
    for span in llm_spans:
        entity_id = map_to_standard(span, vocab, embed_client, theta, surface_embeddings)
        if entity_id not in el_by_entity and entity_id not in llm_first_span:
            union_order.append(entity_id)
            llm_first_span[entity_id] = span

    if not union_order:
        return CombinedExtraction(mentions=[], rejected=[], invented=0)

    names = [vocab.standard_names[entity_id] for entity_id in union_order]
    prompt = render_prompt(
        "filter_entities",
        prompt_dir,
        text=paragraph.text,
        candidates="\n".join(names),
    )
    raw = chat_client.chat(ChatRequest.single("", prompt))
    by_normalized = {normalize_text(name): entity_id for name, entity_id in zip(names, union_order)}
    confirmed: set[str] = set()
    invented = 0
    for item in parse_item_lines(raw):
        entity_id = by_normalized.get(normalize_text(item))
        if entity_id is None:
            invented += 1
        else:
            confirmed.add(entity_id)

    mentions: list[EntityMention] = []
    rejected: list[str] = []
    for entity_id in union_order:
        if entity_id not in confirmed:
            rejected.append(entity_id)
            continue
        if entity_id in el_by_entity:
            mentions.extend(el_by_entity[entity_id])
        else:
            span = llm_first_span[entity_id]
            mentions.append(
                EntityMention(
                    paragraph_path=paragraph.path,
                    token_range=None,
                    surface=span.surface,
                    entity_id=entity_id,
                    score=1.0,
                    method="llm",
                )
            )
    return CombinedExtraction(mentions=mentions, rejected=rejected, invented=invented)


def extract_relations(
    paragraph: Paragraph,
    entities: Sequence[str],
    vocab: Vocabulary,
    chat_client: ChatClient,
    prompt_dir: str | Path | None = None,
) -> RelationExtraction:
    """Entity-entity relation spans plus per-entity paragraph descriptions.

    Three tab-separated fields make a relation, two make a description.
    Lines naming entities outside the supplied set, self-relations, and
    repeat descriptions are dropped and counted.
    """
    if not entities:
        raise LlmParseError("extract_relations needs at least one entity")
    names = [vocab.standard_names[entity_id] for entity_id in entities]
    by_normalized = {normalize_text(name): eid for name, eid in zip(names, entities)}
    prompt = render_prompt(
        "extract_relations",
        prompt_dir,
        entities=", ".join(names),
        text=paragraph.text,
    )
    raw = chat_client.chat(ChatRequest.single("", prompt))

    relations: list[RelationSpan] = []
    descriptions: list[EntityDescription] = []
    described: set[str] = set()
    dropped = 0
    for item in parse_item_lines(raw):
        fields = item.split("\t")
        if len(fields) >= 3:
            entity_a = by_normalized.get(normalize_text(fields[0]))
            entity_b = by_normalized.get(normalize_text(fields[1]))
            relation_text = "\t".join(fields[2:]).strip()
            if entity_a is None or entity_b is None or entity_a == entity_b or not relation_text:
                dropped += 1
                continue
            relations.append(
                RelationSpan(
                    entity_a=entity_a,
                    entity_b=entity_b,
                    relation_text=relation_text,
                    paragraph_path=paragraph.path,
                )
            )
        elif len(fields) == 2:
            entity_id = by_normalized.get(normalize_text(fields[0]))
            text = fields[1].strip()
            if entity_id is None or not text or entity_id in described:
                dropped += 1
                continue
            described.add(entity_id)
            descriptions.append(
                EntityDescription(
                    entity_id=entity_id,
                    paragraph_path=paragraph.path,
                    text=text,
                )
            )
        else:
            raise LlmParseError(f"unparseable relation line: {item!r}", raw)
    return RelationExtraction(relations=relations, descriptions=descriptions, dropped=dropped)


def extract_entity_spans(
    context_id: str,
    context_text: str,
    entities: Sequence[str],
    vocab: Vocabulary,
    chat_client: ChatClient,
    prompt_dir: str | Path | None = None,
) -> tuple[list[EntityCentricSpan], int]:
    """At most one entity-specific text span per supplied entity."""
    if not entities:
        return [], 0
    names = [vocab.standard_names[entity_id] for entity_id in entities]
    by_normalized = {normalize_text(name): eid for name, eid in zip(names, entities)}
    prompt = render_prompt(
        "extract_entity_spans",
        prompt_dir,
        entities=", ".join(names),
        text=context_text,
    )
    raw = chat_client.chat(ChatRequest.single("", prompt))
    spans: list[EntityCentricSpan] = []
    seen: set[str] = set()
    dropped = 0
    for item in parse_item_lines(raw):
        fields = item.split("\t")
        if len(fields) < 2:
            raise LlmParseError(f"unparseable entity span line: {item!r}", raw)
        entity_id = by_normalized.get(normalize_text(fields[0]))
        text = "\t".join(fields[1:]).strip()
        if entity_id is None or not text or entity_id in seen:
            dropped += 1
            continue
        seen.add(entity_id)
        spans.append(EntityCentricSpan(entity_id=entity_id, context_id=context_id, text=text))
    return spans, dropped


def filter_domain(
    contexts: Sequence[tuple[str, str]],
    chat_client: ChatClient,
    prompt_dir: str | Path | None = None,
) -> list[tuple[str, str]]:
    """Contexts the model marks as in-domain, one YES/NO call per context."""
    kept: list[tuple[str, str]] = []
    for context_id, text in contexts:
        prompt = render_prompt("filter_domain", prompt_dir, text=text)
        if parse_yes_no(chat_client.chat(ChatRequest.single("", prompt))):
            kept.append((context_id, text))
    return kept


def select_domain_contexts(
    contexts: Sequence[tuple[str, str]],
    chat_client: ChatClient,
    entity_counter,
    prompt_dir: str | Path | None = None,
) -> list[tuple[str, str]]:
    """Domain filter composed with the nonempty-entity requirement.

    entity_counter maps (context_id, text) to the number of entities found
    in the context; contexts scoring zero are excluded.
    """
    in_domain = filter_domain(contexts, chat_client, prompt_dir)
    return [(cid, text) for cid, text in in_domain if entity_counter(cid, text) > 0]
