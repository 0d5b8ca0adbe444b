"""Run configuration: one TOML file drives the whole pipeline.

Secrets stay out of the file: string values may interpolate environment
variables with ``${VAR}``, and provider auth is always a named variable.
Every parameter that falls back to its built-in default is remembered so run
metadata can name it.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .errors import ConfigError
from .extraction import DEFAULT_THETA
from .linker import LinkerConfig
from .providers import MODES, BiblioClient, ChatClient, EmbedClient, FixtureStore, ProviderConfig
from .retrieval import SpanWeightSchedule

DEFAULT_K = 5

_ENV_RE = re.compile(r"\$\{(\w+)\}")


def _interpolate(value: Any) -> Any:
    if isinstance(value, str):
        def substitute(match: re.Match) -> str:
            name = match.group(1)
            resolved = os.environ.get(name)
            if resolved is None:
                raise ConfigError(f"config references unset environment variable {name}")
            return resolved

        return _ENV_RE.sub(substitute, value)
    if isinstance(value, dict):
        return {key: _interpolate(item) for key, item in value.items()}
    if isinstance(value, list):
        return [_interpolate(item) for item in value]
    return value


@dataclass(frozen=True)
class ProviderSettings:
    config: ProviderConfig
    fixtures: Path | None


@dataclass
class RunConfig:
    mode: str
    output_dir: Path
    corpus_path: Path | None
    vocabulary_path: Path | None
    chat: ProviderSettings
    embed: ProviderSettings
    biblio: ProviderSettings
    linker: LinkerConfig
    theta: float
    k: int
    schedule: SpanWeightSchedule
    prompt_dir: Path | None
    defaults_used: list[str] = field(default_factory=list)
    raw: dict = field(default_factory=dict)

    def config_hash(self) -> str:
        canonical = json.dumps(self.raw, sort_keys=True, ensure_ascii=False, default=str)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _provider_settings(section: dict, name: str, defaults_used: list[str]) -> ProviderSettings:
    table = section.get(name, {})
    if not isinstance(table, dict):
        raise ConfigError(f"providers.{name} must be a table")
    try:
        config = ProviderConfig(
            endpoint=table.get("endpoint", ""),
            model_id=table.get("model_id", ""),
            auth_env=table.get("auth_env", ""),
            timeout=float(table.get("timeout", 60.0)),
            max_in_flight=int(table.get("max_in_flight", 4)),
            retry_count=int(table.get("retry_count", 2)),
            retry_backoff=float(table.get("retry_backoff", 0.5)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"providers.{name}: {exc}") from None
    if "max_in_flight" not in table:
        defaults_used.append(f"providers.{name}.max_in_flight")
    fixtures = table.get("fixtures")
    return ProviderSettings(
        config=config,
        fixtures=Path(fixtures) if fixtures else None,
    )


def load_run_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        with path.open("rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: invalid TOML ({exc})") from None
    raw = _interpolate(raw)

    def table(name: str) -> dict:
        value = raw.get(name, {})
        if not isinstance(value, dict):
            raise ConfigError(f"{name} must be a table")
        return value

    defaults_used: list[str] = []
    mode = raw.get("mode", "replay")
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}; expected one of {MODES}")
    if "mode" not in raw:
        defaults_used.append("mode")

    output_dir = Path(raw.get("output_dir", "out"))
    if "output_dir" not in raw:
        defaults_used.append("output_dir")

    corpus_table = table("corpus")
    corpus_path = Path(corpus_table["path"]) if corpus_table.get("path") else None
    vocab_table = table("vocabulary")
    vocabulary_path = Path(vocab_table["path"]) if vocab_table.get("path") else None

    providers = table("providers")
    chat = _provider_settings(providers, "chat", defaults_used)
    embed = _provider_settings(providers, "embed", defaults_used)
    biblio = _provider_settings(providers, "biblio", defaults_used)

    linker_table = table("linker")
    try:
        linker = LinkerConfig(
            max_n=int(linker_table.get("max_n", 6)),
            alpha=float(linker_table["alpha"]) if "alpha" in linker_table else None,
            simfn=linker_table.get("simfn", "fuzzy"),
        )
    except Exception as exc:
        raise ConfigError(f"linker: {exc}") from None
    for key in ("max_n", "alpha", "simfn"):
        if key not in linker_table:
            defaults_used.append(f"linker.{key}")

    extraction_table = table("extraction")
    theta = float(extraction_table.get("theta", DEFAULT_THETA))
    if "theta" not in extraction_table:
        defaults_used.append("extraction.theta")

    retrieval_table = table("retrieval")
    k = int(retrieval_table.get("k", DEFAULT_K))
    if "k" not in retrieval_table:
        defaults_used.append("retrieval.k")
    if "schedule" in retrieval_table:
        rows = retrieval_table["schedule"]
        try:
            schedule = SpanWeightSchedule(
                buckets=tuple((float(bound), float(weight)) for bound, weight in rows)
            )
        except Exception as exc:
            raise ConfigError(f"retrieval.schedule: {exc}") from None
    else:
        schedule = SpanWeightSchedule.default()
        defaults_used.append("retrieval.schedule")

    prompts_table = table("prompts")
    prompt_dir = Path(prompts_table["dir"]) if prompts_table.get("dir") else None

    config = RunConfig(
        mode=mode,
        output_dir=output_dir,
        corpus_path=corpus_path,
        vocabulary_path=vocabulary_path,
        chat=chat,
        embed=embed,
        biblio=biblio,
        linker=linker,
        theta=theta,
        k=k,
        schedule=schedule,
        prompt_dir=prompt_dir,
        defaults_used=defaults_used,
        raw=raw,
    )
    _validate_paths(config)
    return config


def _validate_paths(config: RunConfig) -> None:
    for label, file_path in (
        ("corpus.path", config.corpus_path),
        ("vocabulary.path", config.vocabulary_path),
        ("prompts.dir", config.prompt_dir),
    ):
        if file_path is not None and not file_path.exists():
            raise ConfigError(f"{label} does not exist: {file_path}")
    if config.mode == "replay":
        for name, settings in (
            ("chat", config.chat),
            ("embed", config.embed),
            ("biblio", config.biblio),
        ):
            if settings.fixtures is not None and not settings.fixtures.exists():
                raise ConfigError(
                    f"replay mode: providers.{name}.fixtures does not exist: "
                    f"{settings.fixtures}"
                )


def _make_store(settings: ProviderSettings, mode: str, used_for: str) -> FixtureStore | None:
    if mode == "live":
        return None
    if settings.fixtures is None:
        raise ConfigError(f"{mode} mode requires providers.{used_for}.fixtures")
    if mode == "replay":
        return FixtureStore.load(settings.fixtures)
    if settings.fixtures.exists():
        return FixtureStore.load(settings.fixtures)
    return FixtureStore(settings.fixtures)


def make_chat_client(config: RunConfig) -> ChatClient:
    return ChatClient(
        config.chat.config,
        mode=config.mode,
        fixtures=_make_store(config.chat, config.mode, "chat"),
    )


def make_embed_client(config: RunConfig) -> EmbedClient:
    return EmbedClient(
        config.embed.config,
        mode=config.mode,
        fixtures=_make_store(config.embed, config.mode, "embed"),
    )


def make_biblio_client(config: RunConfig) -> BiblioClient:
    return BiblioClient(
        config.biblio.config,
        mode=config.mode,
        fixtures=_make_store(config.biblio, config.mode, "biblio"),
    )


def save_recorded_fixtures(config: RunConfig, *clients) -> None:
    """Persist fixture stores after a successful record-mode command."""
    if config.mode != "record":
        return
    for client in clients:
        if client is not None and client.fixtures is not None:
            client.fixtures.save()


def write_run_metadata(
    config: RunConfig,
    drop_counters: dict[str, int] | None = None,
    extra: dict[str, Any] | None = None,
) -> Path:
    """Persist the run's reproducibility record (no timestamps: identical
    configurations must produce identical bytes).

    Stages of one run share the metadata file; drop counters merge across
    stage invocations under the same config hash.
    """
    config.output_dir.mkdir(parents=True, exist_ok=True)
    target = config.output_dir / "run_meta.json"
    counters = dict(drop_counters or {})
    if target.exists():
        try:
            previous = json.loads(target.read_text(encoding="utf-8"))
        except json.JSONDecodeError:
            previous = {}
        if previous.get("config_hash") == config.config_hash():
            merged = previous.get("drop_counters", {})
            merged.update(counters)
            counters = merged
    payload: dict[str, Any] = {
        "config_hash": config.config_hash(),
        "mode": config.mode,
        "defaults_used": sorted(config.defaults_used),
        "parameters": {
            "alpha": config.linker.effective_alpha,
            "max_n": config.linker.max_n,
            "simfn": config.linker.simfn,
            "theta": config.theta,
            "k": config.k,
            "schedule": [list(bucket) for bucket in config.schedule.buckets],
        },
        "drop_counters": dict(sorted(counters.items())),
    }
    if extra:
        payload.update(extra)
    target.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return target
