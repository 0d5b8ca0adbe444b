import json

from entikg.cli import main
from entikg.kg import Graph, persist
from entikg.providers import ChatClient, EmbedClient

from .conftest import embed_backend


def test_unknown_flag_exits_2(capsys):
    assert main(["--definitely-not-a-flag"]) == 2


def test_unknown_subcommand_exits_2(capsys):
    assert main(["kg", "obliterate"]) == 2


def test_vocab_build_clean_stats(tmp_path, capsys):
    terms = tmp_path / "terms.tsv"
    terms.write_text(
        "nb:1\tpref_label\tHippocampus\n"
        "nb:1\tsynonym\tAmmon's horn\n"
        "nb:2\tlabel\tthe\n"
        "nb:3\tpref_label\toptic nerve\n"
    )
    vocab_path = tmp_path / "vocab.jsonl"
    assert main(["vocab", "build", "--terms", str(terms), "--out", str(vocab_path)]) == 0
    assert "4 entries" in capsys.readouterr().out

    stopwords = tmp_path / "stop.txt"
    stopwords.write_text("the\nnerve\n")
    assert main([
        "vocab", "clean", "--vocab", str(vocab_path),
        "--stopwords", str(stopwords), "--dry-run",
    ]) == 0
    assert "would drop 1" in capsys.readouterr().out

    cleaned_path = tmp_path / "cleaned.jsonl"
    assert main([
        "vocab", "clean", "--vocab", str(vocab_path),
        "--stopwords", str(stopwords), "--out", str(cleaned_path),
    ]) == 0
    capsys.readouterr()

    assert main(["vocab", "stats", "--vocab", str(cleaned_path)]) == 0
    out = capsys.readouterr().out
    assert "entries:            3" in out
    assert "entities:           2" in out


def test_vocab_clean_requires_out_without_dry_run(tmp_path, capsys):
    vocab_path = tmp_path / "v.jsonl"
    vocab_path.write_text("")
    stopwords = tmp_path / "s.txt"
    stopwords.write_text("the\n")
    code = main(["vocab", "clean", "--vocab", str(vocab_path), "--stopwords", str(stopwords)])
    assert code == 2


def test_corpus_ingest(tmp_path, capsys):
    corpus = tmp_path / "corpus.jsonl"
    corpus.write_text(
        json.dumps(
            {
                "doc_id": "d1",
                "title": "t",
                "kind": "fulltext",
                "sections": [{"label": "intro", "text": "one\n\ntwo"}],
            }
        )
        + "\n"
    )
    out = tmp_path / "paragraphs.jsonl"
    assert main(["corpus", "ingest", "--in", str(corpus), "--out", str(out)]) == 0
    assert "1 documents -> 2 paragraphs" in capsys.readouterr().out
    assert len(out.read_text().splitlines()) == 2


def test_corpus_ingest_domain_error_exit_1(tmp_path, capsys):
    corpus = tmp_path / "corpus.jsonl"
    corpus.write_text("{bad json\n")
    out = tmp_path / "p.jsonl"
    assert main(["corpus", "ingest", "--in", str(corpus), "--out", str(out)]) == 1
    assert "line 1" in capsys.readouterr().err


def fixture_graph(tmp_path):
    graph = Graph()
    for node, name in (("e1", "hippocampus"), ("e2", "amygdala"), ("e3", "cortex")):
        graph.add_entity_node(node, name)
    graph.add_related_to("e1", "e2", "projects to", "d/s/0")
    graph.add_related_to("e1", "e3", "feeds", "d/s/0")
    graph.add_describes("e1", "d/s/0", "about hippocampus")
    graph_dir = tmp_path / "graph"
    persist(graph, graph_dir)
    return graph_dir


def test_kg_stats_degree_table(tmp_path, capsys):
    graph_dir = fixture_graph(tmp_path)
    assert main(["kg", "stats", "--graph", str(graph_dir), "-k", "2"]) == 0
    out = capsys.readouterr().out
    assert "entity nodes:    3" in out
    assert "top 2 entities by degree" in out
    assert "hippocampus" in out and "degree 3" in out
    assert "bottom 2 entities by degree" in out


def test_kg_persist_round_trip(tmp_path, capsys):
    graph_dir = fixture_graph(tmp_path)
    dest = tmp_path / "copy"
    assert main(["kg", "persist", "--from", str(graph_dir), "--to", str(dest)]) == 0
    assert "round-trip verified" in capsys.readouterr().out
    assert (dest / "nodes.jsonl").read_bytes() == (graph_dir / "nodes.jsonl").read_bytes()
    assert (dest / "edges.jsonl").read_bytes() == (graph_dir / "edges.jsonl").read_bytes()


def test_kg_stats_missing_graph_exit_1(tmp_path, capsys):
    assert main(["kg", "stats", "--graph", str(tmp_path / "nowhere")]) == 1


def test_retrieve_context_too_few_contexts_exit_1(tmp_path, capsys):
    config_path = tmp_path / "run.toml"
    out_dir = tmp_path / "out"
    out_dir.mkdir()
    (out_dir / "store.jsonl").write_text(
        '{"kind": "header", "version": 1}\n'
        '{"kind": "context", "context_id": "only", "text": "t", "vector": [1.0, 0.0]}\n'
    )
    config_path.write_text(f'mode = "live"\noutput_dir = "{out_dir}"\n')
    code = main(["retrieve", "context", "--config", str(config_path), "--question", "q?"])
    assert code == 1
    assert "at least 2 contexts" in capsys.readouterr().err


def test_missing_config_exit_2(tmp_path, capsys):
    code = main(["retrieve", "context", "--config", str(tmp_path / "no.toml"), "--question", "q"])
    assert code == 2


def test_eval_metrics_f1(tmp_path, capsys):
    pred = tmp_path / "pred.json"
    gold = tmp_path / "gold.json"
    pred.write_text(json.dumps({"d1": ["a", "b"]}))
    gold.write_text(json.dumps({"d1": ["b", "c"]}))
    assert main(["eval", "metrics", "--pred", str(pred), "--gold", str(gold)]) == 0
    out = capsys.readouterr().out
    assert "precision: 0.5000" in out
    assert "f1:        0.5000" in out


def test_eval_metrics_precision_at_1(tmp_path, capsys):
    pred = tmp_path / "pred.json"
    gold = tmp_path / "gold.json"
    pred.write_text(json.dumps({"q1": "c1", "q2": "cX"}))
    gold.write_text(json.dumps({"q1": "c1", "q2": "c2"}))
    assert main([
        "eval", "metrics", "--pred", str(pred), "--gold", str(gold), "--kind", "p1",
    ]) == 0
    assert "precision@1: 0.5000" in capsys.readouterr().out


def test_provider_record_writes_fixture(tmp_path, capsys, monkeypatch):
    monkeypatch.setattr(
        ChatClient, "_http_call", lambda self, payload: f"echo: {payload['messages'][0][1]}"
    )
    monkeypatch.setattr(EmbedClient, "_http_call", lambda self, payload: embed_backend(payload))
    fixture_path = tmp_path / "fixtures.jsonl"
    config_path = tmp_path / "run.toml"
    config_path.write_text(
        f'mode = "record"\noutput_dir = "{tmp_path / "out"}"\n'
        f'[providers.chat]\nmodel_id = "c"\nfixtures = "{fixture_path}"\n'
        f'[providers.embed]\nmodel_id = "e"\nfixtures = "{fixture_path}"\n'
    )
    script = tmp_path / "script.jsonl"
    script.write_text(
        json.dumps({"kind": "chat", "user": "hello"}) + "\n"
        + json.dumps({"kind": "chat", "user": "again"}) + "\n"
        + json.dumps({"kind": "embed", "texts": ["x", "y"]}) + "\n"
    )
    assert main(["provider", "record", "--config", str(config_path), "--script", str(script)]) == 0
    assert "recorded 2 chats, 1 embed batches" in capsys.readouterr().out
    assert len(fixture_path.read_text().splitlines()) == 3


def test_provider_record_requires_record_mode(tmp_path, capsys):
    config_path = tmp_path / "run.toml"
    config_path.write_text('mode = "live"\n')
    script = tmp_path / "script.jsonl"
    script.write_text("")
    code = main(["provider", "record", "--config", str(config_path), "--script", str(script)])
    assert code == 2


def test_extraction_report_and_metadata_merge(tmp_path, monkeypatch, capsys):
    from .conftest import ScriptedChat

    scripted = ScriptedChat(terms=["hippocampus", "amygdala"])
    monkeypatch.setattr(ChatClient, "_http_call", lambda self, payload: scripted(payload))
    monkeypatch.setattr(EmbedClient, "_http_call", lambda self, payload: embed_backend(payload))

    corpus = tmp_path / "corpus.jsonl"
    corpus.write_text(
        json.dumps(
            {
                "doc_id": "d1",
                "title": "t",
                "kind": "fulltext",
                "sections": [
                    {"label": "intro", "text": "The hippocampus projects to the amygdala."},
                ],
            }
        )
        + "\n"
    )
    vocab = tmp_path / "vocab.jsonl"
    vocab.write_text(
        "\n".join(
            json.dumps(
                {
                    "entity_id": eid,
                    "surface_form": name,
                    "standard_name": name,
                    "is_preferred": True,
                    "source": "test",
                }
            )
            for eid, name in (("nb:1", "hippocampus"), ("nb:2", "amygdala"))
        )
        + "\n"
    )
    out_dir = tmp_path / "out"
    config = tmp_path / "run.toml"
    config.write_text(
        f'mode = "record"\noutput_dir = "{out_dir}"\n'
        f'[corpus]\npath = "{corpus}"\n'
        f'[vocabulary]\npath = "{vocab}"\n'
        f'[providers.chat]\nmodel_id = "c"\nfixtures = "{tmp_path / "chat.jsonl"}"\n'
        f'[providers.embed]\nmodel_id = "e"\nfixtures = "{tmp_path / "embed.jsonl"}"\n'
    )
    assert main(["extract", "entities", "--config", str(config)]) == 0
    assert main(["extract", "relations", "--config", str(config)]) == 0
    capsys.readouterr()

    report_lines = [
        json.loads(line)
        for line in (out_dir / "extraction_report.jsonl").read_text().splitlines()
    ]
    assert len(report_lines) == 1
    record = report_lines[0]
    assert record["paragraph_path"] == "d1/intro/0"
    assert record["mentions"] == 2
    assert record["relations"] == 1
    assert record["descriptions"] == 2
    assert record["relation_lines_dropped"] == 0

    meta = json.loads((out_dir / "run_meta.json").read_text())
    # counters from both stages live in one metadata record
    assert "llm_spans_outside_text" in meta["drop_counters"]
    assert "relation_lines_dropped" in meta["drop_counters"]
    assert "extraction.theta" in meta["defaults_used"]


def test_eval_judge_malformed_pairs_exit_1(tmp_path, capsys):
    config = tmp_path / "run.toml"
    config.write_text(f'mode = "live"\noutput_dir = "{tmp_path / "out"}"\n')
    pairs = tmp_path / "pairs.jsonl"
    pairs.write_text("{oops\n")
    assert main(["eval", "judge", "--config", str(config), "--pairs", str(pairs)]) == 1
    assert "line 1" in capsys.readouterr().err


def test_eval_judge_missing_field_exit_1(tmp_path, capsys):
    config = tmp_path / "run.toml"
    config.write_text(f'mode = "live"\noutput_dir = "{tmp_path / "out"}"\n')
    pairs = tmp_path / "pairs.jsonl"
    pairs.write_text(json.dumps({"question": "q?"}) + "\n")
    assert main(["eval", "judge", "--config", str(config), "--pairs", str(pairs)]) == 1
    assert "missing field" in capsys.readouterr().err


def test_eval_metrics_invalid_json_exit_1(tmp_path, capsys):
    pred = tmp_path / "pred.json"
    pred.write_text("{nope")
    gold = tmp_path / "gold.json"
    gold.write_text("{}")
    assert main(["eval", "metrics", "--pred", str(pred), "--gold", str(gold)]) == 1
    assert "invalid JSON" in capsys.readouterr().err


def test_non_table_config_section_exit_2(tmp_path, capsys):
    config = tmp_path / "run.toml"
    config.write_text('mode = "live"\nproviders = "wrong"\n')
    code = main(["retrieve", "context", "--config", str(config), "--question", "q"])
    assert code == 2
    assert "must be a table" in capsys.readouterr().err
