"""Clients for the generative-model, embedding, and bibliographic services.

Every client runs in one of three modes:

* ``live``: real HTTP calls (or an injected transport callable);
* ``record``: live calls whose responses are persisted to a fixture file;
* ``replay``: responses served from the fixture file, zero network.

Fixture entries are keyed by a stable hash of the canonicalized request, so
identical requests share one entry and replayed runs are byte-deterministic.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from .errors import ConfigError, ProviderError, ReplayMissError, TransportError

MODES = ("live", "record", "replay")

UNIT_NORM_TOLERANCE = 1e-6


@dataclass(frozen=True)
class ChatRequest:
    system: str
    messages: tuple[tuple[str, str], ...]
    temperature: float = 0.0
    max_tokens: int = 1024

    def __post_init__(self) -> None:
        if not self.messages:
            raise ProviderError("chat request needs at least one message")
        if self.temperature < 0:
            raise ProviderError("temperature must be >= 0")

    @classmethod
    def single(cls, system: str, user: str, **kwargs: Any) -> "ChatRequest":
        return cls(system=system, messages=(("user", user),), **kwargs)


@dataclass(frozen=True)
class EmbeddingVector:
    values: tuple[float, ...]
    dim: int

    def __post_init__(self) -> None:
        if len(self.values) != self.dim:
            raise ProviderError("embedding length does not match its dim")

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)


def normalize_vector(values: Sequence[float]) -> EmbeddingVector:
    arr = np.asarray(values, dtype=np.float64)
    norm = float(np.linalg.norm(arr))
    if norm == 0.0 or not np.isfinite(norm):
        raise ProviderError("cannot normalize a zero or non-finite vector")
    arr = arr / norm
    return EmbeddingVector(values=tuple(float(x) for x in arr), dim=len(arr))


@dataclass(frozen=True)
class ProviderConfig:
    endpoint: str = ""
    model_id: str = ""
    auth_env: str = ""
    timeout: float = 60.0
    max_in_flight: int = 4
    retry_count: int = 2
    retry_backoff: float = 0.5

    def __post_init__(self) -> None:
        if self.max_in_flight < 1:
            raise ConfigError("max_in_flight must be >= 1")


def request_hash(kind: str, model_id: str, payload: Any) -> str:
    """Stable key for a request: sha256 of its canonical JSON form."""
    canonical = json.dumps(
        {"kind": kind, "model": model_id, "payload": payload},
        sort_keys=True,
        ensure_ascii=False,
        separators=(",", ":"),
    )
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def chat_payload(req: ChatRequest) -> dict:
    return {
        "system": req.system,
        "messages": [list(m) for m in req.messages],
        "temperature": req.temperature,
        "max_tokens": req.max_tokens,
    }


class FixtureStore:
    """Hash-keyed request/response entries, persisted as JSONL."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self._entries: dict[str, Any] = {}
        self.hits: dict[str, int] = {}
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._entries)

    @classmethod
    def load(cls, path: str | Path) -> "FixtureStore":
        store = cls(path)
        path = Path(path)
        if not path.exists():
            raise ProviderError(f"fixture file not found: {path}")
        with path.open(encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    record = json.loads(line)
                    key = record["hash"]
                except (json.JSONDecodeError, TypeError, KeyError) as exc:
                    raise ProviderError(f"{path}: line {lineno}: bad fixture entry ({exc})") from None
                if "response" in record:
                    store._entries[key] = record["response"]
                elif "vectors" in record:
                    store._entries[key] = record["vectors"]
                elif "result" in record:
                    store._entries[key] = record["result"]
                else:
                    raise ProviderError(f"{path}: line {lineno}: fixture entry has no payload")
        return store

    def save(self, path: str | Path | None = None) -> Path:
        target = Path(path) if path is not None else self.path
        if target is None:
            raise ProviderError("fixture store has no path to save to")
        target.parent.mkdir(parents=True, exist_ok=True)
        with target.open("w", encoding="utf-8") as fh:
            for key, value in sorted(self._entries.items()):
                if isinstance(value, str):
                    record: dict[str, Any] = {"hash": key, "response": value}
                elif isinstance(value, list):
                    record = {"hash": key, "vectors": value}
                else:
                    record = {"hash": key, "result": value}
                fh.write(json.dumps(record, ensure_ascii=False) + "\n")
        return target

    def get(self, key: str) -> Any:
        with self._lock:
            if key not in self._entries:
                raise ReplayMissError(key)
            self.hits[key] = self.hits.get(key, 0) + 1
            return self._entries[key]

    def put(self, key: str, value: Any) -> None:
        with self._lock:
            self._entries[key] = value


class _BaseClient:
    """Mode handling, retries, and call accounting shared by all clients."""

    kind = "base"

    def __init__(
        self,
        cfg: ProviderConfig,
        mode: str = "replay",
        fixtures: FixtureStore | None = None,
        transport: Callable[[dict], Any] | None = None,
    ):
        if mode not in MODES:
            raise ConfigError(f"unknown provider mode {mode!r}")
        if mode in ("replay", "record") and fixtures is None:
            raise ConfigError(f"{mode} mode requires a fixture store")
        self.cfg = cfg
        self.mode = mode
        self.fixtures = fixtures
        self._transport = transport
        self.live_calls = 0
        self._lock = threading.Lock()
        self._in_flight = threading.Semaphore(cfg.max_in_flight)

    def _check_auth(self) -> None:
        if self.cfg.auth_env and os.environ.get(self.cfg.auth_env) is None:
            raise ConfigError(
                f"auth environment variable {self.cfg.auth_env} is not set"
            )

    def _call_live(self, payload: dict) -> Any:
        self._check_auth()
        last_error: Exception | None = None
        for attempt in range(self.cfg.retry_count + 1):
            if attempt:
                time.sleep(self.cfg.retry_backoff * (2 ** (attempt - 1)))
            try:
                with self._lock:
                    self.live_calls += 1
                with self._in_flight:
                    if self._transport is not None:
                        return self._transport(payload)
                    return self._http_call(payload)
            except TransportError as exc:
                last_error = exc
        raise TransportError(
            f"{self.kind} request failed after {self.cfg.retry_count + 1} attempts: {last_error}"
        )

    def _http_call(self, payload: dict) -> Any:
        import httpx

        headers = {}
        if self.cfg.auth_env:
            headers["Authorization"] = f"Bearer {os.environ[self.cfg.auth_env]}"
        try:
            response = httpx.post(
                self.cfg.endpoint,
                json=payload,
                headers=headers,
                timeout=self.cfg.timeout,
            )
            response.raise_for_status()
            return self._parse_http(response.json())
        except httpx.HTTPError as exc:
            raise TransportError(str(exc)) from exc

    def _parse_http(self, body: Any) -> Any:
        raise NotImplementedError

    def _resolve(self, key: str, payload: dict) -> Any:
        if self.mode == "replay":
            assert self.fixtures is not None
            return self.fixtures.get(key)
        if self.mode == "record":
            assert self.fixtures is not None
            try:
                return self.fixtures.get(key)  # hash dedup: repeat requests stay offline
            except ReplayMissError:
                pass
            value = self._call_live(payload)
            self.fixtures.put(key, value)
            return value
        return self._call_live(payload)


class ChatClient(_BaseClient):
    kind = "chat"

    def chat(self, req: ChatRequest) -> str:
        payload = chat_payload(req)
        key = request_hash(self.kind, self.cfg.model_id, payload)
        value = self._resolve(key, {"model": self.cfg.model_id, **payload})
        if not isinstance(value, str):
            raise ProviderError(f"chat backend returned non-text payload: {type(value).__name__}")
        return value

    def _parse_http(self, body: Any) -> str:
        # OpenAI-style chat completion shape; swap this adapter for other wire
        # schemas without touching callers.
        try:
            return body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"unexpected chat response shape: {exc}") from exc


class EmbedClient(_BaseClient):
    kind = "embed"

    def embed(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        """One unit-norm vector per input text, order preserved."""
        if not texts:
            raise ProviderError("embed called with no texts")
        payload = {"texts": list(texts)}
        key = request_hash(self.kind, self.cfg.model_id, payload)
        value = self._resolve(key, {"model": self.cfg.model_id, **payload})
        if not isinstance(value, list) or len(value) != len(texts):
            raise ProviderError(
                f"embedding backend returned {len(value) if isinstance(value, list) else 'non-list'} "
                f"vectors for {len(texts)} texts"
            )
        return [normalize_vector(vec) for vec in value]

    def embed_one(self, text: str) -> EmbeddingVector:
        return self.embed([text])[0]

    def _parse_http(self, body: Any) -> list[list[float]]:
        try:
            return [item["embedding"] for item in body["data"]]
        except (KeyError, TypeError) as exc:
            raise TransportError(f"unexpected embedding response shape: {exc}") from exc


class BiblioClient(_BaseClient):
    """Bibliographic lookup by DOI or closest-title search.

    Results are plain dicts with at least a ``title`` key, or None when the
    lookup comes back empty.
    """

    kind = "biblio"

    def lookup_doi(self, doi: str) -> dict | None:
        payload = {"op": "doi", "doi": doi}
        key = request_hash(self.kind, self.cfg.model_id, payload)
        value = self._resolve(key, payload)
        return self._as_result(value)

    def search_title(self, title: str) -> dict | None:
        payload = {"op": "title", "query": title}
        key = request_hash(self.kind, self.cfg.model_id, payload)
        value = self._resolve(key, payload)
        return self._as_result(value)

    @staticmethod
    def _as_result(value: Any) -> dict | None:
        if value is None:
            return None
        if isinstance(value, dict):
            return value
        raise ProviderError(f"biblio backend returned unexpected payload: {type(value).__name__}")

    def _parse_http(self, body: Any) -> dict | None:
        if not body:
            return None
        if isinstance(body, dict) and "results" in body:
            results = body["results"]
            return results[0] if results else None
        return body


@dataclass
class RecordedSession:
    """Scripted requests replayed against live services to build fixtures."""

    chat_requests: list[ChatRequest] = field(default_factory=list)
    embed_batches: list[list[str]] = field(default_factory=list)


def record_fixture(
    chat_client: ChatClient,
    embed_client: EmbedClient,
    session: RecordedSession,
    path: str | Path,
) -> Path:
    """Run a session in record mode and persist the resulting fixture file."""
    for req in session.chat_requests:
        chat_client.chat(req)
    for batch in session.embed_batches:
        embed_client.embed(batch)
    store = chat_client.fixtures
    if store is None or store is not embed_client.fixtures:
        raise ProviderError("record_fixture expects both clients to share one fixture store")
    return store.save(path)
