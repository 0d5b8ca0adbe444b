"""Shared fixtures: deterministic fake provider backends and tiny builders.

The scripted chat backend recognizes each prompt template by its trailing
cue line and answers from simple rules, so whole-pipeline runs are
reproducible without a model. The embedding backend derives a vector from
the sha256 of the text, so identical text always embeds identically.
"""

from __future__ import annotations

import hashlib
import re
from functools import lru_cache

import numpy as np
import pytest

from entikg.corpus import Paragraph
from entikg.providers import (
    BiblioClient,
    ChatClient,
    EmbedClient,
    FixtureStore,
    ProviderConfig,
)
from entikg.vocabulary import VocabEntry, Vocabulary

EMBED_DIM = 16

_EXTRACT_RE = re.compile(r"\nText: (.*)\nEntities:\s*$", re.DOTALL)
_FILTER_RE = re.compile(r"\nText: (.*)\nCandidates:\n(.*)\nConfirmed:\s*$", re.DOTALL)
_RELATIONS_RE = re.compile(r"\nEntities: (.*)\nText: (.*)\nOutput:\s*$", re.DOTALL)
_SPANS_RE = re.compile(r"\nEntities: (.*)\nContext: (.*)\nOutput:\s*$", re.DOTALL)
_DOMAIN_RE = re.compile(r"\nContext: (.*)\nAnswer:\s*$", re.DOTALL)
_QUESTION_RE = re.compile(r"\nConcepts: (.*)\nQuestion:\s*$", re.DOTALL)
_IMPORTANT_RE = re.compile(r"\nQuestion: (.*)\nEntities: (.*)\nAnswer:\s*$", re.DOTALL)
_JUDGE_RE = re.compile(r"Better set:\s*$")


@lru_cache(maxsize=None)
def _embedding_cached(text: str, dim: int) -> tuple[float, ...]:
    seed = int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:4], "big")
    rng = np.random.RandomState(seed)
    return tuple(float(x) for x in rng.normal(size=dim))


def embedding_for(text: str, dim: int = EMBED_DIM) -> list[float]:
    """Raw (unnormalized) deterministic vector for a text."""
    return list(_embedding_cached(text, dim))


def embed_backend(payload: dict) -> list[list[float]]:
    return [embedding_for(text) for text in payload["texts"]]


# Integer patterns with sum(p^2) == 64: components p/8 give exactly unit-norm
# vectors whose dot products are exact multiples of 1/64. Every sum is exactly
# representable, so batch and per-pair scoring agree bit for bit.
_DYADIC_PATTERNS = (
    (8,),
    (4, 4, 4, 4),
    (7, 3, 2, 1, 1),
    (5, 5, 3, 2, 1),
    (6, 5, 1, 1, 1),
    (6, 4, 2, 2, 2),
)


@lru_cache(maxsize=None)
def _dyadic_cached(text: str, dim: int) -> tuple[float, ...]:
    seed = int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[4:8], "big")
    rng = np.random.RandomState(seed)
    pattern = _DYADIC_PATTERNS[rng.randint(len(_DYADIC_PATTERNS))]
    positions = rng.choice(dim, size=len(pattern), replace=False)
    values = [0.0] * dim
    for part, pos in zip(pattern, positions):
        sign = 1.0 if rng.randint(2) else -1.0
        values[pos] = sign * (part / 8.0)
    return tuple(values)


def dyadic_embedding_for(text: str, dim: int = EMBED_DIM) -> list[float]:
    """Exactly unit-norm vector on a 1/8 grid; dots are order-independent."""
    return list(_dyadic_cached(text, dim))


def dyadic_embed_backend(payload: dict) -> list[list[float]]:
    return [dyadic_embedding_for(text) for text in payload["texts"]]


class ScriptedChat:
    """Rule-based stand-in for the generative model.

    terms: surfaces the "model" can spot in extraction prompts, in priority
    order. reject: entity names the filter prompt refuses to confirm.
    """

    def __init__(
        self,
        terms: list[str] | None = None,
        reject: set[str] | None = None,
        judge_answer: str = "1",
        offtopic_marker: str = "offtopic",
    ):
        self.terms = terms or []
        self.reject = reject or set()
        self.judge_answer = judge_answer
        self.offtopic_marker = offtopic_marker
        self.requests: list[dict] = []

    def __call__(self, payload: dict) -> str:
        self.requests.append(payload)
        prompt = payload["messages"][0][1]

        match = _FILTER_RE.search(prompt)
        if match:
            candidates = [c.strip() for c in match.group(2).splitlines() if c.strip()]
            kept = [c for c in candidates if c not in self.reject]
            return "\n".join(kept) if kept else "NONE"

        match = _EXTRACT_RE.search(prompt)
        if match:
            text = match.group(1).lower()
            found = [term for term in self.terms if term.lower() in text]
            return "\n".join(found) if found else "NONE"

        match = _RELATIONS_RE.search(prompt)
        if match:
            names = [n.strip() for n in match.group(1).split(",") if n.strip()]
            lines = []
            if len(names) >= 2:
                lines.append(f"{names[0]}\t{names[1]}\t{names[0]} interacts with {names[1]} here")
            lines.extend(f"{name}\tpassage discusses {name}" for name in names)
            return "\n".join(lines) if lines else "NONE"

        match = _SPANS_RE.search(prompt)
        if match:
            names = [n.strip() for n in match.group(1).split(",") if n.strip()]
            context = match.group(2)
            return "\n".join(f"{name}\t{name}: {context[:25]}" for name in names) or "NONE"

        match = _DOMAIN_RE.search(prompt)
        if match:
            return "NO" if self.offtopic_marker in match.group(1).lower() else "YES"

        match = _QUESTION_RE.search(prompt)
        if match:
            return f"How do {match.group(1)} interact?"

        match = _IMPORTANT_RE.search(prompt)
        if match:
            names = [n.strip() for n in match.group(2).split(",") if n.strip()]
            return "\n".join(names[:2])

        if _JUDGE_RE.search(prompt):
            return self.judge_answer

        raise AssertionError(f"scripted chat got an unrecognized prompt:\n{prompt}")


class BiblioBackend:
    """In-memory bibliographic database keyed by DOI."""

    def __init__(self, papers: dict[str, str]):
        # doi -> title
        self.papers = papers
        self.requests: list[dict] = []

    def __call__(self, payload: dict):
        self.requests.append(payload)
        if payload["op"] == "doi":
            title = self.papers.get(payload["doi"])
            return None if title is None else {"title": title}
        query_words = set(payload["query"].lower().split())
        best = None
        best_overlap = 0
        for title in self.papers.values():
            overlap = len(query_words & set(title.lower().split()))
            if overlap > best_overlap:
                best_overlap = overlap
                best = title
        return None if best is None else {"title": best}


def live_chat(backend, model_id: str = "chat-model", **cfg_kwargs) -> ChatClient:
    cfg = ProviderConfig(model_id=model_id, retry_backoff=0.0, **cfg_kwargs)
    return ChatClient(cfg, mode="live", transport=backend)


def live_embed(backend=embed_backend, model_id: str = "embed-model", **cfg_kwargs) -> EmbedClient:
    cfg = ProviderConfig(model_id=model_id, retry_backoff=0.0, **cfg_kwargs)
    return EmbedClient(cfg, mode="live", transport=backend)


def live_biblio(backend, model_id: str = "biblio") -> BiblioClient:
    cfg = ProviderConfig(model_id=model_id, retry_backoff=0.0)
    return BiblioClient(cfg, mode="live", transport=backend)


def make_paragraph(text: str, path: str = "doc1/body/0") -> Paragraph:
    doc_id, section_label, _ = path.split("/")
    return Paragraph(
        para_id=path, doc_id=doc_id, section_label=section_label, text=text, path=path
    )


def vocab_of(*entities: tuple[str, str, list[str]]) -> Vocabulary:
    """Vocabulary from (entity_id, preferred_name, extra_surfaces) triples."""
    vocab = Vocabulary()
    for entity_id, preferred, extras in entities:
        vocab.add_entry(
            VocabEntry(
                entity_id=entity_id,
                surface_form=preferred,
                standard_name=preferred,
                is_preferred=True,
                source="test",
            )
        )
        for surface in extras:
            vocab.add_entry(
                VocabEntry(
                    entity_id=entity_id,
                    surface_form=surface,
                    standard_name=preferred,
                    is_preferred=False,
                    source="test",
                )
            )
    vocab.validate()
    return vocab


@pytest.fixture
def simple_vocab() -> Vocabulary:
    return vocab_of(
        ("nb:1", "hippocampus", ["ammon's horn"]),
        ("nb:2", "amygdala", []),
        ("nb:3", "peripheral neuron", ["peripheral neurons"]),
    )


@pytest.fixture
def recorded_pair(tmp_path):
    """(record-mode clients, replay factory) sharing one fixture file each."""

    def build(chat_backend, embed_backend_fn=embed_backend):
        chat_path = tmp_path / "chat_fixture.jsonl"
        embed_path = tmp_path / "embed_fixture.jsonl"
        chat_cfg = ProviderConfig(model_id="chat-model", retry_backoff=0.0)
        embed_cfg = ProviderConfig(model_id="embed-model", retry_backoff=0.0)
        chat = ChatClient(
            chat_cfg, mode="record", fixtures=FixtureStore(chat_path), transport=chat_backend
        )
        embed = EmbedClient(
            embed_cfg, mode="record", fixtures=FixtureStore(embed_path), transport=embed_backend_fn
        )

        def replay() -> tuple[ChatClient, EmbedClient]:
            chat.fixtures.save()
            embed.fixtures.save()
            return (
                ChatClient(chat_cfg, mode="replay", fixtures=FixtureStore.load(chat_path)),
                EmbedClient(embed_cfg, mode="replay", fixtures=FixtureStore.load(embed_path)),
            )

        return chat, embed, replay

    return build
