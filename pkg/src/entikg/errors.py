"""Shared exception hierarchy.

Domain errors (bad data, failed invariants, parse failures) derive from
PipelineError and map to CLI exit code 1. Configuration and usage problems
derive from ConfigError and map to exit code 2.
"""


class PipelineError(Exception):
    """Base class for all domain-level failures."""


class ConfigError(Exception):
    """Invalid run configuration or usage."""


class CorpusError(PipelineError):
    pass


class VocabularyError(PipelineError):
    pass


class ProviderError(PipelineError):
    pass


class TransportError(ProviderError):
    """Network failure or exhausted retries in live mode."""


class ReplayMissError(ProviderError):
    """Replay mode received a request with no recorded fixture."""

    def __init__(self, request_hash: str):
        super().__init__(f"no fixture recorded for request hash {request_hash}")
        self.request_hash = request_hash


class LinkerError(PipelineError):
    pass


class LlmParseError(PipelineError):
    """Model output that the tolerant parsers could not interpret."""

    def __init__(self, message: str, raw: str = ""):
        super().__init__(message if not raw else f"{message}\n--- raw output ---\n{raw}")
        self.raw = raw


class GraphError(PipelineError):
    pass


class RetrievalError(PipelineError):
    pass


class EvalError(PipelineError):
    pass
