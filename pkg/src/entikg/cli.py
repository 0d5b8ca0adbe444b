"""Command-line surface for the pipeline.

Every run is driven by one TOML config; intermediate products land as files
under the configured output directory so expensive LLM stages can be re-run
stage by stage. Exit codes: 0 success, 1 domain error, 2 config/usage error.
"""

from __future__ import annotations

import argparse
import json
import random
import sys
from pathlib import Path

from . import kg as kgmod
from .config import (
    RunConfig,
    load_run_config,
    make_biblio_client,
    make_chat_client,
    make_embed_client,
    save_recorded_fixtures,
    write_run_metadata,
)
from .corpus import ingest_corpus, split_paragraphs
from .errors import ConfigError, PipelineError
from .evaluation import (
    JudgeVerdict,
    check_references,
    extract_references,
    f1_metrics,
    gen_questions,
    judge_pair,
    tally,
)
from .linker import FuzzyIndex, SurfaceEmbeddings
from .pipeline import (
    build_store,
    link_and_extract,
    load_mentions,
    load_paragraphs,
    load_relations,
    merge_extraction_report,
    question_entity_extractor,
    relations_stage,
    save_entity_spans,
    save_mentions,
    save_paragraphs,
    save_relations,
    spans_stage,
)
from .providers import ChatRequest, RecordedSession, record_fixture
from .retrieval import ContextStore, baseline_topk, precision_at_1, retrieve_context
from .vocabulary import (
    build_from_ontology,
    clean_vocabulary,
    load_stopwords,
    load_vocabulary,
    save_vocabulary,
    vocabulary_from_entries,
)


def _corpus_paragraphs(config: RunConfig):
    if config.corpus_path is None:
        raise ConfigError("this command needs corpus.path in the config")
    documents = ingest_corpus(config.corpus_path)
    paragraphs = []
    for doc in documents:
        paragraphs.extend(split_paragraphs(doc))
    return paragraphs


def _load_vocab(config: RunConfig, prefer_updated: bool = True):
    updated = config.output_dir / "vocab.updated.jsonl"
    if prefer_updated and updated.exists():
        return load_vocabulary(updated)
    if config.vocabulary_path is None:
        raise ConfigError("this command needs vocabulary.path in the config")
    return load_vocabulary(config.vocabulary_path)


def _read_json_file(path: str) -> dict:
    target = Path(path)
    if not target.exists():
        raise PipelineError(f"file not found: {target}")
    try:
        return json.loads(target.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise PipelineError(f"{target}: invalid JSON ({exc})") from None


def _iter_jsonl_file(path: str):
    target = Path(path)
    if not target.exists():
        raise PipelineError(f"file not found: {target}")
    with target.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                raise PipelineError(f"{target}: line {lineno}: invalid JSON ({exc})") from None


# --- vocab -----------------------------------------------------------------


def cmd_vocab_build(args: argparse.Namespace) -> int:
    entries = build_from_ontology(args.terms, source=args.source)
    vocab = vocabulary_from_entries(entries)
    save_vocabulary(vocab, args.out)
    print(f"built vocabulary: {len(vocab.entries)} entries, "
          f"{len(vocab.standard_names)} entities -> {args.out}")
    return 0


def cmd_vocab_clean(args: argparse.Namespace) -> int:
    if not args.dry_run and not args.out:
        raise ConfigError("vocab clean needs --out unless --dry-run is given")
    vocab = load_vocabulary(args.vocab)
    stopwords = load_stopwords(args.stopwords)
    cleaned, report = clean_vocabulary(vocab, stopwords, dry_run=args.dry_run)
    action = "would drop" if args.dry_run else "dropped"
    print(f"{action} {report.dropped_entries} entries "
          f"({report.removed_entities} whole entities); kept {report.kept}")
    if not args.dry_run:
        save_vocabulary(cleaned, args.out)
        print(f"wrote {args.out}")
    return 0


def cmd_vocab_stats(args: argparse.Namespace) -> int:
    vocab = load_vocabulary(args.vocab)
    multiword = sum(1 for e in vocab.entries if " " in e.surface_form)
    synthetic = sum(1 for eid in vocab.standard_names if eid.startswith("new:"))
    print(f"entries:            {len(vocab.entries)}")
    print(f"entities:           {len(vocab.standard_names)}")
    print(f"multiword surfaces: {multiword}")
    print(f"synthetic entities: {synthetic}")
    return 0


# --- corpus ----------------------------------------------------------------


def cmd_corpus_ingest(args: argparse.Namespace) -> int:
    documents = ingest_corpus(args.infile)
    paragraphs = []
    for doc in documents:
        paragraphs.extend(split_paragraphs(doc))
    save_paragraphs(paragraphs, args.out)
    print(f"{len(documents)} documents -> {len(paragraphs)} paragraphs -> {args.out}")
    return 0


# --- extract ----------------------------------------------------------------


def cmd_extract_entities(args: argparse.Namespace) -> int:
    config = load_run_config(args.config)
    paragraphs = _corpus_paragraphs(config)
    vocab = _load_vocab(config, prefer_updated=False)
    chat = make_chat_client(config)
    embed = make_embed_client(config)
    outputs = link_and_extract(
        paragraphs,
        vocab,
        config.linker,
        chat,
        embed,
        config.theta,
        prompt_dir=config.prompt_dir,
    )
    config.output_dir.mkdir(parents=True, exist_ok=True)
    save_paragraphs(paragraphs, config.output_dir / "paragraphs.jsonl")
    save_mentions(outputs.mentions, config.output_dir / "mentions.jsonl")
    save_vocabulary(vocab, config.output_dir / "vocab.updated.jsonl")
    merge_extraction_report(outputs.reports, config.output_dir / "extraction_report.jsonl", fresh=True)
    save_recorded_fixtures(config, chat, embed)
    write_run_metadata(config, outputs.drop_counters)
    print(f"{len(outputs.mentions)} mentions -> {config.output_dir / 'mentions.jsonl'}")
    return 0


def cmd_extract_relations(args: argparse.Namespace) -> int:
    config = load_run_config(args.config)
    paragraphs = load_paragraphs(config.output_dir / "paragraphs.jsonl")
    mentions = load_mentions(config.output_dir / "mentions.jsonl")
    vocab = _load_vocab(config)
    chat = make_chat_client(config)
    relations, descriptions, counters, reports = relations_stage(
        paragraphs, mentions, vocab, chat, config.prompt_dir
    )
    save_relations(relations, descriptions, config.output_dir / "relations.jsonl")
    merge_extraction_report(reports, config.output_dir / "extraction_report.jsonl")
    save_recorded_fixtures(config, chat)
    write_run_metadata(config, counters)
    print(f"{len(relations)} relations, {len(descriptions)} descriptions "
          f"-> {config.output_dir / 'relations.jsonl'}")
    return 0


def cmd_extract_spans(args: argparse.Namespace) -> int:
    config = load_run_config(args.config)
    paragraphs = load_paragraphs(config.output_dir / "paragraphs.jsonl")
    mentions = load_mentions(config.output_dir / "mentions.jsonl")
    vocab = _load_vocab(config)
    chat = make_chat_client(config)
    embed = make_embed_client(config)
    spans, counters = spans_stage(paragraphs, mentions, vocab, chat, config.prompt_dir)
    save_entity_spans(spans, config.output_dir / "entity_spans.jsonl")
    store = build_store(paragraphs, spans, embed)
    store.save(config.output_dir / "store.jsonl")
    save_recorded_fixtures(config, chat, embed)
    write_run_metadata(config, counters)
    print(f"{len(spans)} entity spans; store with {len(store)} contexts "
          f"-> {config.output_dir / 'store.jsonl'}")
    return 0


# --- kg ----------------------------------------------------------------------


def cmd_kg_build(args: argparse.Namespace) -> int:
    config = load_run_config(args.config)
    paragraphs = load_paragraphs(config.output_dir / "paragraphs.jsonl")
    mentions = load_mentions(config.output_dir / "mentions.jsonl")
    relations, descriptions = load_relations(config.output_dir / "relations.jsonl")
    vocab = _load_vocab(config)
    graph = kgmod.build_graph(mentions, relations, descriptions, paragraphs, vocab)
    graph_dir = config.output_dir / "graph"
    kgmod.persist(graph, graph_dir)
    write_run_metadata(config)
    print(f"graph: {len(graph.entity_nodes)} entity nodes, "
          f"{len(graph.paragraph_nodes)} paragraph nodes, "
          f"{len(graph.ee_edges)} RELATED_TO, {len(graph.ep_edges)} DESCRIBES "
          f"-> {graph_dir}")
    return 0


def cmd_kg_stats(args: argparse.Namespace) -> int:
    graph = kgmod.load(args.graph)
    print(f"entity nodes:    {len(graph.entity_nodes)}")
    print(f"paragraph nodes: {len(graph.paragraph_nodes)}")
    print(f"RELATED_TO:      {len(graph.ee_edges)}")
    print(f"DESCRIBES:       {len(graph.ep_edges)}")

    def table(rows: list[tuple[str, int]], title: str) -> None:
        print(f"\n{title}")
        for name, node_degree in rows:
            node_id = graph.name_to_entity[name]
            _, ee, ep = kgmod.degree_detail(graph, node_id)
            print(f"  {name:<40} degree {node_degree} (entity-entity {ee}, entity-paragraph {ep})")

    table(kgmod.top_degree(graph, args.k), f"top {args.k} entities by degree")
    table(kgmod.bottom_degree(graph, args.k), f"bottom {args.k} entities by degree")
    return 0


def cmd_kg_persist(args: argparse.Namespace) -> int:
    graph = kgmod.load(args.source)
    kgmod.persist(graph, args.dest)
    reloaded = kgmod.load(args.dest)
    if (
        reloaded.entity_nodes != graph.entity_nodes
        or reloaded.paragraph_nodes != graph.paragraph_nodes
        or reloaded.ee_edges != graph.ee_edges
        or reloaded.ep_edges != graph.ep_edges
    ):
        raise PipelineError("round-trip mismatch after persist")
    print(f"persisted graph -> {args.dest} (round-trip verified)")
    return 0


# --- retrieve -----------------------------------------------------------------


def cmd_retrieve_context(args: argparse.Namespace) -> int:
    config = load_run_config(args.config)
    store = ContextStore.load(config.output_dir / "store.jsonl")
    if len(store) < 2:
        raise PipelineError(
            f"span-weighted retrieval needs at least 2 contexts, store has {len(store)}"
        )
    embed = make_embed_client(config)
    chosen = retrieve_context(store, config.schedule, embed.embed_one(args.question))
    save_recorded_fixtures(config, embed)
    write_run_metadata(config)
    print(chosen)
    return 0


def cmd_retrieve_baseline(args: argparse.Namespace) -> int:
    config = load_run_config(args.config)
    store = ContextStore.load(config.output_dir / "store.jsonl")
    embed = make_embed_client(config)
    ranked = baseline_topk(store, embed.embed_one(args.question), config.k)
    save_recorded_fixtures(config, embed)
    write_run_metadata(config)
    for context_id in ranked:
        print(context_id)
    return 0


def cmd_retrieve_subgraph(args: argparse.Namespace) -> int:
    config = load_run_config(args.config)
    graph = kgmod.load(config.output_dir / "graph")
    paragraphs = load_paragraphs(config.output_dir / "paragraphs.jsonl")
    para_texts = {p.path: p.text for p in paragraphs}
    vocab = _load_vocab(config)
    embed = make_embed_client(config)
    chat = make_chat_client(config)
    surface_embeddings = None
    if config.linker.simfn == "embed":
        surface_embeddings = SurfaceEmbeddings.build(vocab, embed)
    extractor = question_entity_extractor(
        vocab,
        config.linker,
        embed_client=embed,
        fuzzy_index=FuzzyIndex(vocab) if config.linker.simfn == "fuzzy" else None,
        surface_embeddings=surface_embeddings,
    )
    result = kgmod.retrieve_subgraph(
        graph, args.question, extractor, embed, chat, config.k, para_texts,
        config.prompt_dir,
    )
    save_recorded_fixtures(config, embed, chat)
    write_run_metadata(config)
    out_path = config.output_dir / "subgraph_retrieval.jsonl"
    with out_path.open("w", encoding="utf-8") as fh:
        for item in result.items:
            record = {
                "relation_text": item.relation_text,
                "paragraph_text": item.paragraph_text,
                "score": item.score,
                "fallback": result.fallback,
            }
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")
            print(json.dumps(record, ensure_ascii=False))
    if result.fallback:
        print("note: no question entity found in graph; baseline fallback used",
              file=sys.stderr)
    return 0


# --- eval ---------------------------------------------------------------------


def cmd_eval_gen_questions(args: argparse.Namespace) -> int:
    config = load_run_config(args.config)
    graph = kgmod.load(config.output_dir / "graph")
    chat = make_chat_client(config)
    questions = gen_questions(
        graph,
        args.pool,
        chat,
        args.count,
        rng=random.Random(args.seed),
        prompt_dir=config.prompt_dir,
    )
    save_recorded_fixtures(config, chat)
    write_run_metadata(config)
    out_path = config.output_dir / "questions.jsonl"
    with out_path.open("w", encoding="utf-8") as fh:
        for item in questions:
            names = [graph.entity_nodes[eid].entity_name for eid in item.seed_entities]
            fh.write(
                json.dumps(
                    {"question": item.question, "seed_entities": names},
                    ensure_ascii=False,
                )
                + "\n"
            )
    print(f"{len(questions)} questions -> {out_path}")
    return 0


def cmd_eval_judge(args: argparse.Namespace) -> int:
    config = load_run_config(args.config)
    chat = make_chat_client(config)
    verdicts: list[JudgeVerdict] = []
    for lineno, record in _iter_jsonl_file(args.pairs):
        try:
            pair = judge_pair(
                record.get("question_id", str(lineno)),
                record["question"],
                record["set_a"],
                record["set_b"],
                chat,
                config.prompt_dir,
            )
        except KeyError as exc:
            raise PipelineError(f"{args.pairs}: line {lineno}: missing field {exc}") from None
        verdicts.extend(pair)
    save_recorded_fixtures(config, chat)
    write_run_metadata(config)
    out_path = config.output_dir / "verdicts.jsonl"
    config.output_dir.mkdir(parents=True, exist_ok=True)
    with out_path.open("w", encoding="utf-8") as fh:
        for verdict in verdicts:
            fh.write(
                json.dumps(
                    {
                        "question_id": verdict.question_id,
                        "winner": verdict.winner,
                        "a_position": verdict.a_position,
                    }
                )
                + "\n"
            )
    result = tally(verdicts)
    print(result.render())
    return 0


def cmd_eval_metrics(args: argparse.Namespace) -> int:
    predictions = _read_json_file(args.pred)
    gold = _read_json_file(args.gold)
    if args.kind == "f1":
        summary = f1_metrics(predictions, gold)
        print(f"precision: {summary.precision:.4f}")
        print(f"recall:    {summary.recall:.4f}")
        print(f"f1:        {summary.f1:.4f}")
    else:
        score = precision_at_1(list(predictions.items()), gold)
        print(f"precision@1: {score:.4f}")
    return 0


def cmd_eval_refs(args: argparse.Namespace) -> int:
    config = load_run_config(args.config)
    biblio = make_biblio_client(config)
    refs: list[tuple[str, str]] = []
    malformed = 0
    for lineno, record in _iter_jsonl_file(args.answers):
        if "answer" not in record:
            raise PipelineError(f"{args.answers}: line {lineno}: missing field 'answer'")
        found, bad = extract_references(record["answer"])
        refs.extend(found)
        malformed += bad
    records, summary = check_references(refs, biblio)
    save_recorded_fixtures(config, biblio)
    write_run_metadata(config, {"malformed_references": malformed})
    config.output_dir.mkdir(parents=True, exist_ok=True)
    out_path = config.output_dir / "refs_report.jsonl"
    with out_path.open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(
                json.dumps(
                    {
                        "claimed_title": record.claimed_title,
                        "claimed_doi": record.claimed_doi,
                        "doi_status": record.doi_status,
                        "title_status": record.title_status,
                        "error": record.error,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )
    print(summary.render_table())
    if malformed:
        print(f"malformed references skipped: {malformed}", file=sys.stderr)
    return 0


# --- provider ------------------------------------------------------------------


def cmd_provider_record(args: argparse.Namespace) -> int:
    config = load_run_config(args.config)
    if config.mode != "record":
        raise ConfigError("provider record requires mode = \"record\" in the config")
    chat = make_chat_client(config)
    embed = make_embed_client(config)
    session = RecordedSession()
    for lineno, record in _iter_jsonl_file(args.script):
        kind = record.get("kind")
        if kind == "chat":
            session.chat_requests.append(
                ChatRequest.single(record.get("system", ""), record["user"])
            )
        elif kind == "embed":
            session.embed_batches.append(record["texts"])
        else:
            raise ConfigError(f"{args.script}: line {lineno}: unknown kind {kind!r}")
    if config.chat.fixtures is None:
        raise ConfigError("provider record needs providers.chat.fixtures")
    # Both clients must share the store so one file captures the session.
    embed.fixtures = chat.fixtures
    target = record_fixture(chat, embed, session, config.chat.fixtures)
    print(f"recorded {len(session.chat_requests)} chats, "
          f"{len(session.embed_batches)} embed batches -> {target}")
    return 0


# --- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="entikg",
        description="Build and query an entity-linked knowledge graph.",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    vocab = subparsers.add_parser("vocab", help="vocabulary management").add_subparsers(
        dest="subcommand", required=True
    )
    build = vocab.add_parser("build", help="build vocabulary from a flat term export")
    build.add_argument("--terms", required=True)
    build.add_argument("--out", required=True)
    build.add_argument("--source", default="ontology")
    build.set_defaults(func=cmd_vocab_build)
    clean = vocab.add_parser("clean", help="drop stopword surfaces")
    clean.add_argument("--vocab", required=True)
    clean.add_argument("--stopwords", required=True)
    clean.add_argument("--out")
    clean.add_argument("--dry-run", action="store_true")
    clean.set_defaults(func=cmd_vocab_clean)
    stats = vocab.add_parser("stats", help="vocabulary counts")
    stats.add_argument("--vocab", required=True)
    stats.set_defaults(func=cmd_vocab_stats)

    corpus = subparsers.add_parser("corpus", help="corpus ingestion").add_subparsers(
        dest="subcommand", required=True
    )
    ingest = corpus.add_parser("ingest", help="split a JSONL corpus into paragraphs")
    ingest.add_argument("--in", dest="infile", required=True)
    ingest.add_argument("--out", required=True)
    ingest.set_defaults(func=cmd_corpus_ingest)

    extract = subparsers.add_parser("extract", help="extraction stages").add_subparsers(
        dest="subcommand", required=True
    )
    for name, handler in (
        ("entities", cmd_extract_entities),
        ("relations", cmd_extract_relations),
        ("spans", cmd_extract_spans),
    ):
        sub = extract.add_parser(name)
        sub.add_argument("--config", required=True)
        sub.set_defaults(func=handler)

    kg_parser = subparsers.add_parser("kg", help="knowledge graph").add_subparsers(
        dest="subcommand", required=True
    )
    kg_build = kg_parser.add_parser("build")
    kg_build.add_argument("--config", required=True)
    kg_build.set_defaults(func=cmd_kg_build)
    kg_stats = kg_parser.add_parser("stats")
    kg_stats.add_argument("--graph", required=True)
    kg_stats.add_argument("-k", type=int, default=5)
    kg_stats.set_defaults(func=cmd_kg_stats)
    kg_persist = kg_parser.add_parser("persist")
    kg_persist.add_argument("--from", dest="source", required=True)
    kg_persist.add_argument("--to", dest="dest", required=True)
    kg_persist.set_defaults(func=cmd_kg_persist)

    retrieve = subparsers.add_parser("retrieve", help="retrieval").add_subparsers(
        dest="subcommand", required=True
    )
    for name, handler in (
        ("context", cmd_retrieve_context),
        ("subgraph", cmd_retrieve_subgraph),
        ("baseline", cmd_retrieve_baseline),
    ):
        sub = retrieve.add_parser(name)
        sub.add_argument("--config", required=True)
        sub.add_argument("--question", required=True)
        sub.set_defaults(func=handler)

    evaluate = subparsers.add_parser("eval", help="evaluation harnesses").add_subparsers(
        dest="subcommand", required=True
    )
    genq = evaluate.add_parser("gen-questions")
    genq.add_argument("--config", required=True)
    genq.add_argument("--count", type=int, default=10)
    genq.add_argument("--pool", type=int, default=10)
    genq.add_argument("--seed", type=int, default=0)
    genq.set_defaults(func=cmd_eval_gen_questions)
    judge = evaluate.add_parser("judge")
    judge.add_argument("--config", required=True)
    judge.add_argument("--pairs", required=True)
    judge.set_defaults(func=cmd_eval_judge)
    metrics = evaluate.add_parser("metrics")
    metrics.add_argument("--pred", required=True)
    metrics.add_argument("--gold", required=True)
    metrics.add_argument("--kind", choices=("f1", "p1"), default="f1")
    metrics.set_defaults(func=cmd_eval_metrics)
    refs = evaluate.add_parser("refs")
    refs.add_argument("--config", required=True)
    refs.add_argument("--answers", required=True)
    refs.set_defaults(func=cmd_eval_refs)

    provider = subparsers.add_parser("provider", help="provider utilities").add_subparsers(
        dest="subcommand", required=True
    )
    record = provider.add_parser("record")
    record.add_argument("--config", required=True)
    record.add_argument("--script", required=True)
    record.set_defaults(func=cmd_provider_record)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
