"""Corpus ingestion, paragraph splitting, and tokenization.

Documents arrive as JSON-lines (one object per line) and are split into
section-tagged paragraphs with stable ``doc_id/section_label/index`` paths.
Those paths are the provenance keys used by every downstream stage, so both
identifier components are validated slash-free at construction time.
"""

from __future__ import annotations

import json
import re
import unicodedata
from dataclasses import dataclass
from pathlib import Path

from .errors import CorpusError

DOC_KINDS = ("fulltext", "abstract")

_WORD_RE = re.compile(r"\S+")
_BLOCK_SPLIT_RE = re.compile(r"\n[ \t]*\n+")


@dataclass(frozen=True)
class Document:
    """One corpus article: ordered (section_label, text) pairs under a stable id."""

    doc_id: str
    title: str
    kind: str
    sections: tuple[tuple[str, str], ...]

    def __post_init__(self) -> None:
        if not self.doc_id:
            raise CorpusError("document has empty doc_id")
        if "/" in self.doc_id:
            raise CorpusError(f"doc_id {self.doc_id!r} must not contain '/'")
        if self.kind not in DOC_KINDS:
            raise CorpusError(f"document {self.doc_id}: unknown kind {self.kind!r}")
        if self.kind == "abstract" and len(self.sections) != 1:
            raise CorpusError(
                f"document {self.doc_id}: abstract documents must have exactly one "
                f"section, got {len(self.sections)}"
            )
        for label, _ in self.sections:
            if "/" in label:
                raise CorpusError(
                    f"document {self.doc_id}: section label {label!r} must not contain '/'"
                )


@dataclass(frozen=True)
class Paragraph:
    para_id: str
    doc_id: str
    section_label: str
    text: str
    path: str


@dataclass(frozen=True)
class TokenSpan:
    """A whitespace token: original slice plus its normalized form."""

    start_char: int
    end_char: int
    surface: str
    normalized: str


def ingest_corpus(path: str | Path) -> list[Document]:
    """Read a JSONL corpus file into Documents, order preserved.

    Raises CorpusError naming the offending line on malformed records, and
    citing both lines on a duplicate doc_id.
    """
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"corpus file not found: {path}")
    documents: list[Document] = []
    seen: dict[str, int] = {}
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                doc = _document_from_record(record)
            except CorpusError as exc:
                raise CorpusError(f"line {lineno}: {exc}") from None
            except (json.JSONDecodeError, TypeError, KeyError, AttributeError) as exc:
                raise CorpusError(f"line {lineno}: malformed corpus record ({exc})") from None
            if doc.doc_id in seen:
                raise CorpusError(
                    f"duplicate doc_id {doc.doc_id!r} on lines {seen[doc.doc_id]} and {lineno}"
                )
            seen[doc.doc_id] = lineno
            documents.append(doc)
    return documents


def _document_from_record(record: dict) -> Document:
    sections = tuple(
        (section["label"], section["text"]) for section in record["sections"]
    )
    return Document(
        doc_id=record["doc_id"],
        title=record["title"],
        kind=record["kind"],
        sections=sections,
    )


def split_paragraphs(doc: Document) -> list[Paragraph]:
    """Split each section into blank-line-separated blocks, indexed from 0."""
    paragraphs: list[Paragraph] = []
    for label, text in doc.sections:
        index = 0
        for block in _BLOCK_SPLIT_RE.split(text):
            block = block.strip()
            if not block:
                continue
            path = f"{doc.doc_id}/{label}/{index}"
            paragraphs.append(
                Paragraph(
                    para_id=path,
                    doc_id=doc.doc_id,
                    section_label=label,
                    text=block,
                    path=path,
                )
            )
            index += 1
    return paragraphs


def parse_paragraph_path(path: str) -> tuple[str, str, int]:
    """Recover (doc_id, section_label, index) from a paragraph path."""
    parts = path.split("/")
    if len(parts) != 3:
        raise CorpusError(f"malformed paragraph path: {path!r}")
    doc_id, label, index_str = parts
    try:
        index = int(index_str)
    except ValueError:
        raise CorpusError(f"malformed paragraph path index: {path!r}") from None
    return doc_id, label, index


def _is_punctuation(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def normalize_token(token: str) -> str:
    """Lowercase and strip leading/trailing punctuation, keeping internal marks."""
    start = 0
    end = len(token)
    while start < end and _is_punctuation(token[start]):
        start += 1
    while end > start and _is_punctuation(token[end - 1]):
        end -= 1
    return token[start:end].lower()


def tokenize(text: str) -> list[TokenSpan]:
    """Split on Unicode whitespace; tokens empty after normalization are dropped."""
    spans: list[TokenSpan] = []
    for match in _WORD_RE.finditer(text):
        normalized = normalize_token(match.group())
        if not normalized:
            continue
        spans.append(
            TokenSpan(
                start_char=match.start(),
                end_char=match.end(),
                surface=match.group(),
                normalized=normalized,
            )
        )
    return spans


def normalize_text(text: str) -> str:
    """Normalized token sequence joined by single spaces.

    This is the shared normal form for vocabulary surfaces and n-gram text,
    so dictionary lookups and linker candidates agree on spelling.
    """
    return " ".join(token.normalized for token in tokenize(text))
