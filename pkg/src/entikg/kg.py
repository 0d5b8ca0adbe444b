"""Knowledge graph: entity/paragraph nodes, RELATED_TO and DESCRIBES edges.

Edges are traversed undirected, parallel edges between the same endpoints are
allowed (one per extraction), and persistence is JSONL with a schema-version
header so corrupt or stale files fail loudly. Subgraph retrieval collects the
texts behind the edges around the question's entities and re-ranks them by
cosine against the question embedding.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .corpus import Paragraph
from .errors import GraphError, LlmParseError
from .extraction import EntityDescription, RelationSpan, parse_item_lines
from .linker import EntityMention
from .prompts import render_prompt
from .providers import ChatClient, ChatRequest, EmbedClient
from .vocabulary import Vocabulary

GRAPH_SCHEMA_VERSION = 1

PARAGRAPH_NODE_PREFIX = "para:"

RELATED_TO = "RELATED_TO"
DESCRIBES = "DESCRIBES"


@dataclass(frozen=True)
class EntityNode:
    id: str
    entity_name: str


@dataclass(frozen=True)
class ParagraphNode:
    id: str
    paragraph_path: str


@dataclass(frozen=True)
class EntityEntityEdge:
    id: str
    src: str
    dst: str
    relation_text: str
    paragraph_path: str
    label: str = RELATED_TO


@dataclass(frozen=True)
class EntityParagraphEdge:
    id: str
    src: str
    dst: str
    relation_text: str
    label: str = DESCRIBES


@dataclass
class Graph:
    entity_nodes: dict[str, EntityNode] = field(default_factory=dict)
    paragraph_nodes: dict[str, ParagraphNode] = field(default_factory=dict)
    ee_edges: dict[str, EntityEntityEdge] = field(default_factory=dict)
    ep_edges: dict[str, EntityParagraphEdge] = field(default_factory=dict)
    name_to_entity: dict[str, str] = field(default_factory=dict)
    _ee_adjacency: dict[str, dict[str, list[str]]] = field(default_factory=dict)
    _incident_ep: dict[str, list[str]] = field(default_factory=dict)
    _ee_counter: int = 0
    _ep_counter: int = 0

    def add_entity_node(self, entity_id: str, entity_name: str) -> None:
        existing = self.entity_nodes.get(entity_id)
        if existing is not None:
            if existing.entity_name != entity_name:
                raise GraphError(
                    f"entity node {entity_id} registered twice with different names"
                )
            return
        if entity_name in self.name_to_entity:
            raise GraphError(f"entity name {entity_name!r} already taken by another node")
        self.entity_nodes[entity_id] = EntityNode(id=entity_id, entity_name=entity_name)
        self.name_to_entity[entity_name] = entity_id

    def add_paragraph_node(self, paragraph_path: str) -> str:
        node_id = PARAGRAPH_NODE_PREFIX + paragraph_path
        if node_id not in self.paragraph_nodes:
            self.paragraph_nodes[node_id] = ParagraphNode(
                id=node_id, paragraph_path=paragraph_path
            )
        return node_id

    def add_related_to(
        self,
        src: str,
        dst: str,
        relation_text: str,
        paragraph_path: str,
        edge_id: str | None = None,
    ) -> str:
        if src == dst:
            raise GraphError(f"self-relation on entity node {src}")
        for node in (src, dst):
            if node not in self.entity_nodes:
                raise GraphError(f"unknown entity node {node} in RELATED_TO edge")
        if edge_id is None:
            edge_id = f"ee{self._ee_counter}"
            self._ee_counter += 1
        if edge_id in self.ee_edges:
            raise GraphError(f"duplicate edge id {edge_id}")
        edge = EntityEntityEdge(
            id=edge_id, src=src, dst=dst, relation_text=relation_text,
            paragraph_path=paragraph_path,
        )
        self.ee_edges[edge_id] = edge
        self._ee_adjacency.setdefault(src, {}).setdefault(dst, []).append(edge_id)
        self._ee_adjacency.setdefault(dst, {}).setdefault(src, []).append(edge_id)
        return edge_id

    def add_describes(
        self,
        entity: str,
        paragraph_path: str,
        relation_text: str,
        edge_id: str | None = None,
    ) -> str:
        if entity not in self.entity_nodes:
            raise GraphError(f"unknown entity node {entity} in DESCRIBES edge")
        paragraph_node = self.add_paragraph_node(paragraph_path)
        if edge_id is None:
            edge_id = f"ep{self._ep_counter}"
            self._ep_counter += 1
        if edge_id in self.ep_edges:
            raise GraphError(f"duplicate edge id {edge_id}")
        edge = EntityParagraphEdge(
            id=edge_id, src=entity, dst=paragraph_node, relation_text=relation_text
        )
        self.ep_edges[edge_id] = edge
        self._incident_ep.setdefault(entity, []).append(edge_id)
        self._incident_ep.setdefault(paragraph_node, []).append(edge_id)
        return edge_id

    def has_node(self, node_id: str) -> bool:
        return node_id in self.entity_nodes or node_id in self.paragraph_nodes

    def edges_between(self, a: str, b: str) -> list[str]:
        return list(self._ee_adjacency.get(a, {}).get(b, []))

    def ee_neighbors(self, node_id: str) -> set[str]:
        return set(self._ee_adjacency.get(node_id, {}))

    def describes_of(self, entity_id: str) -> list[EntityParagraphEdge]:
        return [
            self.ep_edges[eid]
            for eid in self._incident_ep.get(entity_id, [])
            if self.ep_edges[eid].src == entity_id
        ]


def build_graph(
    mentions: Sequence[EntityMention],
    relations: Sequence[RelationSpan],
    descriptions: Sequence[EntityDescription],
    paragraphs: Sequence[Paragraph],
    vocab: Vocabulary,
) -> Graph:
    """Assemble the graph from extraction outputs.

    Entity nodes carry standard names; paragraph nodes appear for every
    paragraph hosting a mention or targeted by a description. Any reference
    to a paragraph path outside the corpus is an error naming the path.
    """
    known_paths = {p.path for p in paragraphs}

    def check_path(path: str, what: str) -> None:
        if path not in known_paths:
            raise GraphError(f"{what} references unknown paragraph path {path!r}")

    def entity_name(entity_id: str) -> str:
        name = vocab.standard_names.get(entity_id)
        if name is None:
            raise GraphError(f"entity {entity_id} has no standard name in the vocabulary")
        return name

    graph = Graph()
    for mention in mentions:
        check_path(mention.paragraph_path, f"mention of {mention.entity_id}")
        graph.add_entity_node(mention.entity_id, entity_name(mention.entity_id))
        graph.add_paragraph_node(mention.paragraph_path)
    for relation in relations:
        check_path(relation.paragraph_path, "relation")
        graph.add_entity_node(relation.entity_a, entity_name(relation.entity_a))
        graph.add_entity_node(relation.entity_b, entity_name(relation.entity_b))
        graph.add_related_to(
            relation.entity_a,
            relation.entity_b,
            relation.relation_text,
            relation.paragraph_path,
        )
    for description in descriptions:
        check_path(description.paragraph_path, "description")
        graph.add_entity_node(description.entity_id, entity_name(description.entity_id))
        graph.add_describes(
            description.entity_id,
            description.paragraph_path,
            description.text,
        )
    return graph


def persist(graph: Graph, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with (directory / "nodes.jsonl").open("w", encoding="utf-8") as fh:
        fh.write(json.dumps({"schema": "graph-nodes", "version": GRAPH_SCHEMA_VERSION}) + "\n")
        for node in graph.entity_nodes.values():
            fh.write(
                json.dumps(
                    {"id": node.id, "kind": "entity", "entity_name": node.entity_name},
                    ensure_ascii=False,
                )
                + "\n"
            )
        for pnode in graph.paragraph_nodes.values():
            fh.write(
                json.dumps(
                    {"id": pnode.id, "kind": "paragraph", "paragraph_path": pnode.paragraph_path},
                    ensure_ascii=False,
                )
                + "\n"
            )
    with (directory / "edges.jsonl").open("w", encoding="utf-8") as fh:
        fh.write(json.dumps({"schema": "graph-edges", "version": GRAPH_SCHEMA_VERSION}) + "\n")
        for edge in graph.ee_edges.values():
            fh.write(
                json.dumps(
                    {
                        "id": edge.id,
                        "label": RELATED_TO,
                        "src": edge.src,
                        "dst": edge.dst,
                        "relation_text": edge.relation_text,
                        "paragraph_path": edge.paragraph_path,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )
        for ep_edge in graph.ep_edges.values():
            fh.write(
                json.dumps(
                    {
                        "id": ep_edge.id,
                        "label": DESCRIBES,
                        "src": ep_edge.src,
                        "dst": ep_edge.dst,
                        "relation_text": ep_edge.relation_text,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def load(directory: str | Path) -> Graph:
    directory = Path(directory)
    nodes_path = directory / "nodes.jsonl"
    edges_path = directory / "edges.jsonl"
    for path in (nodes_path, edges_path):
        if not path.exists():
            raise GraphError(f"graph file not found: {path}")

    graph = Graph()

    def parse_line(path: Path, lineno: int, line: str) -> dict:
        try:
            record = json.loads(line)
            if not isinstance(record, dict):
                raise ValueError("not an object")
            return record
        except ValueError as exc:
            raise GraphError(f"{path}: line {lineno}: corrupted record ({exc})") from None

    def check_header(path: Path, record: dict, schema: str) -> None:
        if record.get("schema") != schema or record.get("version") != GRAPH_SCHEMA_VERSION:
            raise GraphError(
                f"{path}: schema-version mismatch: expected {schema} v{GRAPH_SCHEMA_VERSION}, "
                f"got {record.get('schema')!r} v{record.get('version')!r}"
            )

    with nodes_path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            record = parse_line(nodes_path, lineno, line)
            if lineno == 1:
                check_header(nodes_path, record, "graph-nodes")
                continue
            try:
                if record["kind"] == "entity":
                    graph.add_entity_node(record["id"], record["entity_name"])
                elif record["kind"] == "paragraph":
                    node_id = record["id"]
                    expected = PARAGRAPH_NODE_PREFIX + record["paragraph_path"]
                    if node_id != expected:
                        raise GraphError(f"paragraph node id {node_id!r} does not match its path")
                    graph.paragraph_nodes[node_id] = ParagraphNode(
                        id=node_id, paragraph_path=record["paragraph_path"]
                    )
                else:
                    raise GraphError(f"unknown node kind {record['kind']!r}")
            except KeyError as exc:
                raise GraphError(f"{nodes_path}: line {lineno}: missing field {exc}") from None
            except GraphError as exc:
                raise GraphError(f"{nodes_path}: line {lineno}: {exc}") from None

    with edges_path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            record = parse_line(edges_path, lineno, line)
            if lineno == 1:
                check_header(edges_path, record, "graph-edges")
                continue
            try:
                if record["label"] == RELATED_TO:
                    graph.add_related_to(
                        record["src"],
                        record["dst"],
                        record["relation_text"],
                        record["paragraph_path"],
                        edge_id=record["id"],
                    )
                elif record["label"] == DESCRIBES:
                    dst = record["dst"]
                    if dst not in graph.paragraph_nodes:
                        raise GraphError(f"DESCRIBES edge targets unknown paragraph node {dst}")
                    graph.add_describes(
                        record["src"],
                        graph.paragraph_nodes[dst].paragraph_path,
                        record["relation_text"],
                        edge_id=record["id"],
                    )
                else:
                    raise GraphError(f"unknown edge label {record['label']!r}")
            except KeyError as exc:
                raise GraphError(f"{edges_path}: line {lineno}: missing field {exc}") from None
            except GraphError as exc:
                raise GraphError(f"{edges_path}: line {lineno}: {exc}") from None

    graph._ee_counter = 1 + max(
        (int(eid[2:]) for eid in graph.ee_edges if eid.startswith("ee") and eid[2:].isdigit()),
        default=-1,
    )
    graph._ep_counter = 1 + max(
        (int(eid[2:]) for eid in graph.ep_edges if eid.startswith("ep") and eid[2:].isdigit()),
        default=-1,
    )
    return graph


def degree(graph: Graph, node_id: str) -> int:
    """Incident edge count across both edge kinds, undirected."""
    total, _, _ = degree_detail(graph, node_id)
    return total


def degree_detail(graph: Graph, node_id: str) -> tuple[int, int, int]:
    """(total, entity-entity, entity-paragraph) incident edge counts."""
    if not graph.has_node(node_id):
        raise GraphError(f"unknown node {node_id}")
    ee = sum(len(ids) for ids in graph._ee_adjacency.get(node_id, {}).values())
    ep = len(graph._incident_ep.get(node_id, []))
    return ee + ep, ee, ep


def top_degree(graph: Graph, k: int) -> list[tuple[str, int]]:
    """k highest-degree entities as (entity_name, degree), ties by name."""
    ranked = sorted(
        ((node.entity_name, degree(graph, node.id)) for node in graph.entity_nodes.values()),
        key=lambda item: (-item[1], item[0]),
    )
    return ranked[:k]


def bottom_degree(graph: Graph, k: int) -> list[tuple[str, int]]:
    """k lowest-degree entities as (entity_name, degree), ties by name."""
    ranked = sorted(
        ((node.entity_name, degree(graph, node.id)) for node in graph.entity_nodes.values()),
        key=lambda item: (item[1], item[0]),
    )
    return ranked[:k]


def paths_up_to_2(graph: Graph, v1: str, v2: str) -> list[EntityEntityEdge]:
    """Entity-entity edges on any undirected path of length 1 or 2 between
    v1 and v2, ordered by edge id. Intermediates are entity nodes only."""
    if v1 == v2:
        raise GraphError("path endpoints must differ")
    for node in (v1, v2):
        if node not in graph.entity_nodes:
            raise GraphError(f"unknown entity node {node}")
    edge_ids: set[str] = set(graph.edges_between(v1, v2))
    for middle in graph.ee_neighbors(v1) & graph.ee_neighbors(v2):
        edge_ids.update(graph.edges_between(v1, middle))
        edge_ids.update(graph.edges_between(middle, v2))
    return [graph.ee_edges[eid] for eid in sorted(edge_ids)]


def pick_important_entities(
    question: str,
    entities: Sequence[str],
    graph: Graph,
    chat_client: ChatClient,
    prompt_dir: str | Path | None = None,
) -> tuple[str, str]:
    """Ask the model for the two question entities that matter most.

    Answers must name two distinct members of the supplied entity set.
    """
    if len(entities) < 3:
        raise GraphError("important-entity selection needs at least 3 entities")
    names = [graph.entity_nodes[eid].entity_name for eid in entities]
    prompt = render_prompt(
        "important_entities",
        prompt_dir,
        question=question,
        entities=", ".join(names),
    )
    raw = chat_client.chat(ChatRequest.single("", prompt))
    items = parse_item_lines(raw)
    if len(items) != 2:
        raise LlmParseError(f"expected exactly 2 entity names, got {len(items)}", raw)
    by_name = {name: eid for name, eid in zip(names, entities)}
    picked: list[str] = []
    for item in items:
        if item not in by_name:
            raise GraphError(f"model named an entity outside the question set: {item!r}")
        picked.append(by_name[item])
    if picked[0] == picked[1]:
        raise GraphError(f"model picked the same entity twice: {items[0]!r}")
    return picked[0], picked[1]


@dataclass(frozen=True)
class RankedText:
    relation_text: str
    paragraph_text: str
    score: float


@dataclass(frozen=True)
class SubgraphResult:
    items: list[RankedText]
    fallback: bool
    question_entities: list[str]
    important: tuple[str, str] | None


def candidate_pairs(
    graph: Graph,
    question: str,
    question_entities: Sequence[str],
    para_texts: Mapping[str, str],
    chat_client: ChatClient | None = None,
    prompt_dir: str | Path | None = None,
) -> tuple[list[tuple[str, str]], tuple[str, str] | None]:
    """Graph-determined (relation_text, paragraph_text) candidates for a
    question, before any embedding enters the picture.

    question_entities are entity node ids already resolved in the graph.
    """

    def para_text_for(path: str) -> str:
        if path not in para_texts:
            raise GraphError(f"no paragraph text available for path {path!r}")
        return para_texts[path]

    important: tuple[str, str] | None = None
    if len(question_entities) == 1:
        entity = question_entities[0]
        if entity not in graph.entity_nodes:
            raise GraphError(f"unknown entity node {entity}")
        pairs = [
            (edge.relation_text, para_text_for(graph.paragraph_nodes[edge.dst].paragraph_path))
            for edge in graph.describes_of(entity)
        ]
    else:
        if len(question_entities) == 2:
            edges = paths_up_to_2(graph, question_entities[0], question_entities[1])
        else:
            if chat_client is None:
                raise GraphError("questions with 3+ entities need a chat client")
            important = pick_important_entities(
                question, list(question_entities), graph, chat_client, prompt_dir
            )
            others = [eid for eid in question_entities if eid not in important]
            edge_ids: set[str] = set()
            for other in others:
                for edge in paths_up_to_2(graph, important[0], other):
                    edge_ids.add(edge.id)
                for edge in paths_up_to_2(graph, other, important[1]):
                    edge_ids.add(edge.id)
            edges = [graph.ee_edges[eid] for eid in sorted(edge_ids)]
        pairs = [
            (edge.relation_text, para_text_for(edge.paragraph_path)) for edge in edges
        ]
    unique = sorted(set(pairs))
    return unique, important


def retrieve_subgraph(
    graph: Graph,
    question: str,
    extract_entities_fn: Callable[[str], Sequence[str]],
    embed_client: EmbedClient,
    chat_client: ChatClient | None,
    k: int,
    para_texts: Mapping[str, str],
    prompt_dir: str | Path | None = None,
) -> SubgraphResult:
    """Entity-augmented retrieval: route by how many question entities are
    graph nodes, then re-rank the collected texts against the question.

    With zero resolvable entities the plain cosine baseline over all
    paragraphs answers instead, flagged via ``fallback``.
    """
    if not question.strip():
        raise GraphError("question must be non-empty")
    names = list(dict.fromkeys(extract_entities_fn(question)))
    entity_ids = [graph.name_to_entity[n] for n in names if n in graph.name_to_entity]

    query = embed_client.embed_one(question).as_array()

    if not entity_ids:
        ordered_paths = sorted(para_texts)
        if not ordered_paths:
            return SubgraphResult(items=[], fallback=True, question_entities=[], important=None)
        vectors = embed_client.embed([para_texts[p] for p in ordered_paths])
        scores = np.vstack([v.as_array() for v in vectors]) @ query
        order = sorted(range(len(ordered_paths)), key=lambda i: (-scores[i], ordered_paths[i]))
        items = [
            RankedText(relation_text="", paragraph_text=para_texts[ordered_paths[i]],
                       score=float(scores[i]))
            for i in order[:k]
        ]
        return SubgraphResult(items=items, fallback=True, question_entities=[], important=None)

    pairs, important = candidate_pairs(
        graph, question, entity_ids, para_texts, chat_client, prompt_dir
    )
    if not pairs:
        return SubgraphResult(
            items=[], fallback=False, question_entities=entity_ids, important=important
        )

    unique_texts = list(dict.fromkeys(text for pair in pairs for text in pair if text))
    vectors = embed_client.embed(unique_texts)
    score_of = {text: float(v.as_array() @ query) for text, v in zip(unique_texts, vectors)}
    scored = [
        RankedText(
            relation_text=rel,
            paragraph_text=para,
            score=max(score_of.get(rel, -1.0), score_of.get(para, -1.0)),
        )
        for rel, para in pairs
    ]
    scored.sort(key=lambda item: (-item.score, item.relation_text, item.paragraph_text))
    return SubgraphResult(
        items=scored[:k],
        fallback=False,
        question_entities=entity_ids,
        important=important,
    )
