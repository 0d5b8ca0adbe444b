"""Entity vocabulary: surface forms, standard names, and the surface index.

Every surface form is stored in the shared normal form from
:mod:`entikg.corpus` and maps to exactly one entity. The standard name of an
entity is its single preferred label (ontology preferred label when present,
plain label otherwise). Entities discovered at extraction time get synthetic
ids with a ``new:`` prefix so their provenance stays auditable.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .corpus import normalize_text
from .errors import VocabularyError

SYNTHETIC_PREFIX = "new:"

LABEL_KINDS = ("pref_label", "label", "alt_label", "synonym", "abbreviation")

_SYNTHETIC_ID_RE = re.compile(r"^new:(\d+)$")


@dataclass(frozen=True)
class VocabEntry:
    entity_id: str
    surface_form: str
    standard_name: str
    is_preferred: bool
    source: str = ""


@dataclass
class Vocabulary:
    """Indexed collection of VocabEntry rows.

    ``surface_index`` maps each normalized surface to its single owning
    entity; ``standard_names`` maps entity ids to their preferred label.
    """

    entries: list[VocabEntry] = field(default_factory=list)
    surface_index: dict[str, str] = field(default_factory=dict)
    standard_names: dict[str, str] = field(default_factory=dict)
    _next_synthetic: int = 0

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def surfaces(self) -> list[str]:
        return list(self.surface_index)

    def entity_ids(self) -> list[str]:
        return list(self.standard_names)

    def lookup(self, surface: str) -> str | None:
        """Entity id owning this surface, after normalization; None if absent."""
        return self.surface_index.get(normalize_text(surface))

    def standard_name_of(self, surface: str) -> str | None:
        """Preferred label of the entity owning this surface; None if unknown."""
        entity_id = self.lookup(surface)
        if entity_id is None:
            return None
        return self.standard_names[entity_id]

    def add_entry(self, entry: VocabEntry) -> None:
        surface = normalize_text(entry.surface_form)
        if not surface:
            raise VocabularyError(
                f"entity {entry.entity_id}: surface {entry.surface_form!r} is empty "
                "after normalization"
            )
        owner = self.surface_index.get(surface)
        if owner is not None and owner != entry.entity_id:
            raise VocabularyError(
                f"surface {surface!r} maps to two entities: {owner} and {entry.entity_id}"
            )
        if entry.is_preferred:
            if entry.entity_id in self.standard_names:
                raise VocabularyError(
                    f"entity {entry.entity_id} has more than one preferred label"
                )
            self.standard_names[entry.entity_id] = entry.standard_name
        if owner is None:
            self.surface_index[surface] = entry.entity_id
        normalized_entry = VocabEntry(
            entity_id=entry.entity_id,
            surface_form=surface,
            standard_name=entry.standard_name,
            is_preferred=entry.is_preferred,
            source=entry.source,
        )
        self.entries.append(normalized_entry)
        match = _SYNTHETIC_ID_RE.match(entry.entity_id)
        if match:
            self._next_synthetic = max(self._next_synthetic, int(match.group(1)) + 1)

    def add_entity(self, name: str, source: str = "llm") -> str:
        """Register a newly discovered entity; its name becomes the preferred label.

        Raises VocabularyError if the name is already a known surface (the
        caller should have looked it up first).
        """
        if not name:
            raise VocabularyError("cannot add an entity with an empty name")
        surface = normalize_text(name)
        if not surface:
            raise VocabularyError(f"name {name!r} is empty after normalization")
        if surface in self.surface_index:
            raise VocabularyError(
                f"name {name!r} already present as a surface of "
                f"{self.surface_index[surface]}"
            )
        entity_id = f"{SYNTHETIC_PREFIX}{self._next_synthetic}"
        self._next_synthetic += 1
        self.add_entry(
            VocabEntry(
                entity_id=entity_id,
                surface_form=name,
                standard_name=name,
                is_preferred=True,
                source=source,
            )
        )
        return entity_id

    def validate(self) -> None:
        """Check that every entity carries exactly one preferred label."""
        for entry in self.entries:
            if entry.entity_id not in self.standard_names:
                raise VocabularyError(
                    f"entity {entry.entity_id} has no preferred label"
                )


def load_vocabulary(path: str | Path) -> Vocabulary:
    """Load vocabulary JSONL, building the surface index.

    Rejects surfaces mapped to two entities and entities with zero (or more
    than one) preferred labels.
    """
    path = Path(path)
    if not path.exists():
        raise VocabularyError(f"vocabulary file not found: {path}")
    vocab = Vocabulary()
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                entry = VocabEntry(
                    entity_id=record["entity_id"],
                    surface_form=record["surface_form"],
                    standard_name=record["standard_name"],
                    is_preferred=bool(record["is_preferred"]),
                    source=record.get("source", ""),
                )
            except (json.JSONDecodeError, TypeError, KeyError) as exc:
                raise VocabularyError(f"line {lineno}: malformed vocabulary record ({exc})") from None
            try:
                vocab.add_entry(entry)
            except VocabularyError as exc:
                raise VocabularyError(f"line {lineno}: {exc}") from None
    vocab.validate()
    return vocab


def save_vocabulary(vocab: Vocabulary, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for entry in vocab.entries:
            fh.write(
                json.dumps(
                    {
                        "entity_id": entry.entity_id,
                        "surface_form": entry.surface_form,
                        "standard_name": entry.standard_name,
                        "is_preferred": entry.is_preferred,
                        "source": entry.source,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def build_from_ontology(term_export: str | Path, source: str = "ontology") -> list[VocabEntry]:
    """Turn a flat term export (class_id TAB label_kind TAB text) into entries.

    The preferred label of each class is its first pref_label row, falling
    back to its first label row. Classes with neither are rejected.
    """
    term_export = Path(term_export)
    if not term_export.exists():
        raise VocabularyError(f"term export not found: {term_export}")
    rows: list[tuple[str, str, str]] = []
    with term_export.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise VocabularyError(
                    f"line {lineno}: expected class_id<TAB>label_kind<TAB>text, got {line!r}"
                )
            class_id, label_kind, text = parts
            if label_kind not in LABEL_KINDS:
                raise VocabularyError(f"line {lineno}: unknown label kind {label_kind!r}")
            if not text.strip():
                raise VocabularyError(f"line {lineno}: empty label text for {class_id}")
            rows.append((class_id, label_kind, text))

    preferred: dict[str, str] = {}
    fallback: dict[str, str] = {}
    class_order: list[str] = []
    for class_id, label_kind, text in rows:
        if class_id not in fallback and class_id not in preferred:
            class_order.append(class_id)
        if label_kind == "pref_label" and class_id not in preferred:
            preferred[class_id] = text
        elif label_kind == "label" and class_id not in fallback:
            fallback[class_id] = text

    standard: dict[str, str] = {}
    for class_id in class_order:
        if class_id in preferred:
            standard[class_id] = preferred[class_id]
        elif class_id in fallback:
            standard[class_id] = fallback[class_id]
        else:
            raise VocabularyError(
                f"class {class_id} has neither a pref_label nor a label"
            )

    entries: list[VocabEntry] = []
    seen: set[tuple[str, str]] = set()
    emitted_preferred: set[str] = set()
    for class_id, label_kind, text in rows:
        key = (class_id, text)
        if key in seen:
            continue
        seen.add(key)
        is_preferred = text == standard[class_id] and class_id not in emitted_preferred
        if is_preferred:
            emitted_preferred.add(class_id)
        entries.append(
            VocabEntry(
                entity_id=class_id,
                surface_form=text,
                standard_name=standard[class_id],
                is_preferred=is_preferred,
                source=source,
            )
        )
    return entries


def vocabulary_from_entries(entries: Iterable[VocabEntry]) -> Vocabulary:
    vocab = Vocabulary()
    for entry in entries:
        vocab.add_entry(entry)
    vocab.validate()
    return vocab


@dataclass(frozen=True)
class CleanReport:
    dropped_entries: int
    removed_entities: int
    kept: int


def clean_vocabulary(
    vocab: Vocabulary,
    stopwords: Iterable[str],
    dry_run: bool = False,
) -> tuple[Vocabulary, CleanReport]:
    """Drop entries whose entire normalized surface is a stopword.

    Multiword surfaces are never removed. If an entity loses its preferred
    label this way, the whole entity goes (keeping the one-preferred-label
    invariant); its other surfaces count toward dropped_entries too. With
    dry_run the input vocabulary is returned untouched alongside the
    would-be counts.
    """
    stopset = {normalize_text(word) for word in stopwords}
    stopset.discard("")

    stopword_hits: set[int] = set()
    doomed_entities: set[str] = set()
    for pos, entry in enumerate(vocab.entries):
        if " " in entry.surface_form:
            continue
        if entry.surface_form in stopset:
            stopword_hits.add(pos)
            if entry.is_preferred:
                doomed_entities.add(entry.entity_id)

    dropped_entries = 0
    survivors: list[VocabEntry] = []
    for pos, entry in enumerate(vocab.entries):
        if pos in stopword_hits or entry.entity_id in doomed_entities:
            dropped_entries += 1
            continue
        survivors.append(entry)

    report = CleanReport(
        dropped_entries=dropped_entries,
        removed_entities=len(doomed_entities),
        kept=len(survivors),
    )
    if dry_run:
        return vocab, report
    return vocabulary_from_entries(survivors), report


def load_stopwords(path: str | Path) -> list[str]:
    """Plain-text stopword list, one word per line; blank lines ignored."""
    path = Path(path)
    if not path.exists():
        raise VocabularyError(f"stopword file not found: {path}")
    return [line.strip() for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]
