import math
import random

import numpy as np
import pytest

from entikg.errors import RetrievalError
from entikg.providers import EmbeddingVector
from entikg.retrieval import (
    ContextSpan,
    ContextStore,
    SpanWeightSchedule,
    baseline_topk,
    get_span_weight,
    precision_at_1,
    rescore_with_spans,
    retrieve_context,
    retrieve_context_trace,
)

from .oracles import topk_by_dot


def unit(values) -> EmbeddingVector:
    arr = np.asarray(values, dtype=np.float64)
    arr = arr / np.linalg.norm(arr)
    return EmbeddingVector(values=tuple(float(x) for x in arr), dim=len(arr))


def axis_vector(score: float, dim: int = 4, axis: int = 0) -> EmbeddingVector:
    """Unit vector whose dot with the first axis is exactly `score`."""
    values = [0.0] * dim
    values[axis] = score
    values[axis + 1] = math.sqrt(max(0.0, 1.0 - score * score))
    return EmbeddingVector(values=tuple(values), dim=dim)


def store_of(entries) -> ContextStore:
    """entries: list of (context_id, context_vector, [span_vectors])."""
    ids = [cid for cid, _, _ in entries]
    matrix = np.vstack([np.asarray(vec.values) for _, vec, _ in entries])
    spans = [
        [ContextSpan(entity_id=f"e{i}", text=f"span {i}", vector=sv) for sv in span_vectors]
        for i, (_, _, span_vectors) in enumerate(entries)
    ]
    return ContextStore(ids=ids, texts=[f"text {cid}" for cid in ids], matrix=matrix, spans=spans)


QUERY = EmbeddingVector((1.0, 0.0, 0.0, 0.0), 4)


class TestSchedule:
    def test_default_matches_published_buckets(self):
        schedule = SpanWeightSchedule.default()
        assert schedule.buckets == (
            (0.01, 0.10),
            (0.02, 0.15),
            (0.03, 0.20),
            (0.04, 0.25),
            (0.05, 0.30),
        )
        assert schedule.entry_threshold == 0.05

    @pytest.mark.parametrize(
        "diff,weight",
        [(0.01, 0.10), (0.035, 0.25), (0.05, 0.30)],
    )
    def test_lookup(self, diff, weight):
        assert get_span_weight(SpanWeightSchedule.default(), diff) == weight

    def test_above_threshold_is_caller_bug(self):
        with pytest.raises(RetrievalError, match="entry threshold"):
            get_span_weight(SpanWeightSchedule.default(), 0.06)

    def test_bounds_must_increase(self):
        with pytest.raises(RetrievalError):
            SpanWeightSchedule(buckets=((0.02, 0.1), (0.02, 0.2)))

    def test_truncate_keeps_first_bucket(self):
        truncated = SpanWeightSchedule.default().truncate(0.01)
        assert truncated.buckets == ((0.01, 0.10),)
        assert truncated.entry_threshold == 0.01


class TestRetrieveContext:
    def test_clear_winner_skips_span_computation(self):
        store = store_of(
            [
                ("c1", axis_vector(0.90), [axis_vector(0.1)]),
                ("c2", axis_vector(0.60), [axis_vector(0.99)]),
            ]
        )
        trace = retrieve_context_trace(store, SpanWeightSchedule.default(), QUERY)
        assert trace.chosen_id == "c1"
        assert not trace.reweighted
        assert trace.es1 is None and trace.es2 is None

    def test_worked_example_arithmetic(self):
        final_s1, final_s2 = rescore_with_spans(0.80, 0.79, 0.50, 0.90, 0.10)
        assert final_s1 == pytest.approx(0.80, abs=1e-12)
        assert final_s2 == pytest.approx(0.801, abs=1e-12)
        assert get_span_weight(SpanWeightSchedule.default(), 0.01) == 0.10

    def test_worked_example_full_path_picks_runner_up(self):
        store = store_of(
            [
                ("c1", axis_vector(0.80), [axis_vector(0.50)]),
                ("c2", axis_vector(0.79), [axis_vector(0.90)]),
            ]
        )
        trace = retrieve_context_trace(store, SpanWeightSchedule.default(), QUERY)
        assert trace.reweighted
        assert trace.s1 == 0.80 and trace.s2 == 0.79
        assert trace.es1 == 0.50 and trace.es2 == 0.90
        assert trace.chosen_id == "c2"
        assert trace.final_s1 >= trace.s1 and trace.final_s2 >= trace.s2

    def test_span_equal_to_context_scores_keeps_winner(self):
        store = store_of(
            [
                ("c1", axis_vector(0.80), [axis_vector(0.80)]),
                ("c2", axis_vector(0.79), [axis_vector(0.79)]),
            ]
        )
        trace = retrieve_context_trace(store, SpanWeightSchedule.default(), QUERY)
        assert trace.chosen_id == "c1"

    def test_missing_spans_fall_back_to_argmax(self):
        store = store_of(
            [
                ("c1", axis_vector(0.80), []),
                ("c2", axis_vector(0.79), [axis_vector(0.99)]),
            ]
        )
        trace = retrieve_context_trace(store, SpanWeightSchedule.default(), QUERY)
        assert trace.chosen_id == "c1"
        assert not trace.reweighted

    def test_exact_tie_returns_second(self):
        # Both finals equal: the decision rule's else-branch takes the runner-up.
        store = store_of(
            [
                ("c1", axis_vector(0.80), [axis_vector(0.80)]),
                ("c2", axis_vector(0.80, axis=2), [axis_vector(0.80, axis=2)]),
            ]
        )
        query = EmbeddingVector(
            tuple(np.asarray([1.0, 0.0, 1.0, 0.0]) / math.sqrt(2)), 4
        )
        s1 = float(np.asarray(store.matrix[0]) @ np.asarray(query.values))
        s2 = float(np.asarray(store.matrix[1]) @ np.asarray(query.values))
        assert s1 == s2
        trace = retrieve_context_trace(store, SpanWeightSchedule.default(), query)
        assert trace.chosen_id == "c2"

    def test_fewer_than_two_contexts_rejected(self):
        store = store_of([("only", axis_vector(0.5), [])])
        with pytest.raises(RetrievalError, match="at least 2"):
            retrieve_context(store, SpanWeightSchedule.default(), QUERY)


def random_store(rng: random.Random, dim: int = 6) -> tuple[ContextStore, EmbeddingVector]:
    count = rng.randint(2, 6)
    entries = []
    for i in range(count):
        vec = unit([rng.gauss(0, 1) for _ in range(dim)])
        span_count = rng.randint(0, 3)
        spans = [unit([rng.gauss(0, 1) for _ in range(dim)]) for _ in range(span_count)]
        entries.append((f"c{i:02d}", vec, spans))
    query = unit([rng.gauss(0, 1) for _ in range(dim)])
    return store_of(entries), query


class TestRandomizedProperties:
    def test_zero_weights_reproduce_baseline(self):
        rng = random.Random(11)
        zero = SpanWeightSchedule(buckets=((0.05, 0.0),))
        for _ in range(300):
            store, query = random_store(rng)
            chosen = retrieve_context(store, zero, query)
            assert chosen == baseline_topk(store, query, 1)[0]

    def test_final_scores_monotone(self):
        rng = random.Random(12)
        schedule = SpanWeightSchedule.default()
        for _ in range(300):
            store, query = random_store(rng)
            trace = retrieve_context_trace(store, schedule, query)
            assert trace.final_s1 >= trace.s1
            assert trace.final_s2 >= trace.s2

    def test_clear_margin_equals_baseline(self):
        rng = random.Random(13)
        schedule = SpanWeightSchedule.default()
        for _ in range(300):
            store, query = random_store(rng)
            trace = retrieve_context_trace(store, schedule, query)
            if trace.s1 - trace.s2 >= schedule.entry_threshold:
                assert trace.chosen_id == baseline_topk(store, query, 1)[0]


class TestBaselineTopK:
    def test_argmax(self):
        store = store_of(
            [("a", axis_vector(0.9), []), ("b", axis_vector(0.5), [])]
        )
        assert baseline_topk(store, QUERY, 1) == ["a"]

    def test_k_larger_than_store(self):
        store = store_of(
            [("a", axis_vector(0.9), []), ("b", axis_vector(0.5), [])]
        )
        assert baseline_topk(store, QUERY, 10) == ["a", "b"]

    def test_ties_ordered_by_id(self):
        store = store_of(
            [("b", axis_vector(0.9), []), ("a", axis_vector(0.9), [])]
        )
        assert baseline_topk(store, QUERY, 2) == ["a", "b"]

    def test_matches_oracle_randomized(self):
        rng = random.Random(14)
        for _ in range(100):
            store, query = random_store(rng)
            k = rng.randint(1, len(store) + 1)
            assert baseline_topk(store, query, k) == topk_by_dot(
                store.ids, store.matrix, np.asarray(query.values), k
            )


class TestPrecisionAt1:
    def test_all_correct(self):
        assert precision_at_1([("q1", "c1"), ("q2", "c2")], {"q1": "c1", "q2": "c2"}) == 1.0

    def test_half_correct(self):
        assert precision_at_1([("q1", "c1"), ("q2", "cX")], {"q1": "c1", "q2": "c2"}) == 0.5

    def test_empty_predictions_undefined(self):
        with pytest.raises(RetrievalError, match="undefined"):
            precision_at_1([], {})

    def test_missing_gold(self):
        with pytest.raises(RetrievalError, match="no gold"):
            precision_at_1([("q1", "c1")], {})


class TestStorePersistence:
    def test_round_trip(self, tmp_path):
        rng = random.Random(15)
        store, _ = random_store(rng)
        path = tmp_path / "store.jsonl"
        store.save(path)
        reloaded = ContextStore.load(path)
        assert reloaded.ids == store.ids
        assert reloaded.texts == store.texts
        assert np.array_equal(reloaded.matrix, store.matrix)
        assert reloaded.spans == store.spans

    def test_corrupted_line_reports_number(self, tmp_path):
        store, _ = random_store(random.Random(16))
        path = tmp_path / "store.jsonl"
        store.save(path)
        content = path.read_text().splitlines()
        content[1] = "{broken"
        path.write_text("\n".join(content) + "\n")
        with pytest.raises(RetrievalError, match="line 2"):
            ContextStore.load(path)

    def test_non_unit_vector_rejected(self, tmp_path):
        path = tmp_path / "store.jsonl"
        path.write_text(
            '{"kind": "header", "version": 1}\n'
            '{"kind": "context", "context_id": "c", "text": "t", "vector": [2.0, 0.0]}\n'
        )
        with pytest.raises(RetrievalError, match="unit-norm"):
            ContextStore.load(path)

    def test_version_mismatch(self, tmp_path):
        path = tmp_path / "store.jsonl"
        path.write_text('{"kind": "header", "version": 99}\n')
        with pytest.raises(RetrievalError, match="version"):
            ContextStore.load(path)
