"""Prompt templates, shipped as replaceable text assets.

Templates are plain text with named ``{slot}`` placeholders. A run config can
point at an override directory; any file there with a matching name shadows
the packaged asset, keeping prompt iterations auditable without code changes.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path

from ..errors import ConfigError

PROMPT_NAMES = (
    "extract_entities",
    "filter_entities",
    "extract_relations",
    "extract_entity_spans",
    "filter_domain",
    "judge_pair",
    "generate_question",
    "important_entities",
    "answer_with_references",
)


def load_prompt(name: str, override_dir: str | Path | None = None) -> str:
    if name not in PROMPT_NAMES:
        raise ConfigError(f"unknown prompt asset {name!r}")
    if override_dir is not None:
        candidate = Path(override_dir) / f"{name}.txt"
        if candidate.exists():
            return candidate.read_text(encoding="utf-8")
    return resources.files(__package__).joinpath(f"{name}.txt").read_text(encoding="utf-8")


def render_prompt(name: str, override_dir: str | Path | None = None, **slots: str) -> str:
    template = load_prompt(name, override_dir)
    try:
        return template.format(**slots)
    except (KeyError, IndexError) as exc:
        raise ConfigError(f"prompt {name!r} has an unfilled slot: {exc}") from None
