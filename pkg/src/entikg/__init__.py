"""entikg: entity-linked knowledge graph construction and retrieval.

Pipeline stages: ingest a JSONL corpus, link paragraph spans against an
entity vocabulary, enrich with LLM extraction, build a typed knowledge
graph, and answer questions via span-weighted context retrieval or
entity-augmented subgraph retrieval. Record/replay providers make every
stage deterministic under test fixtures.
"""

from .corpus import Document, Paragraph, TokenSpan, ingest_corpus, split_paragraphs, tokenize
from .errors import ConfigError, PipelineError
from .kg import Graph, build_graph, retrieve_subgraph
from .linker import EntityMention, LinkerConfig, link_entities
from .providers import ChatClient, ChatRequest, EmbedClient, FixtureStore, ProviderConfig
from .retrieval import ContextStore, SpanWeightSchedule, retrieve_context
from .vocabulary import Vocabulary, VocabEntry, load_vocabulary

__version__ = "0.1.0"

__all__ = [
    "ChatClient",
    "ChatRequest",
    "ConfigError",
    "ContextStore",
    "Document",
    "EmbedClient",
    "EntityMention",
    "FixtureStore",
    "Graph",
    "LinkerConfig",
    "Paragraph",
    "PipelineError",
    "ProviderConfig",
    "SpanWeightSchedule",
    "TokenSpan",
    "Vocabulary",
    "VocabEntry",
    "build_graph",
    "ingest_corpus",
    "link_entities",
    "load_vocabulary",
    "retrieve_context",
    "retrieve_subgraph",
    "split_paragraphs",
    "tokenize",
    "__version__",
]
