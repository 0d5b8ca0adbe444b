"""Independent brute-force oracles the implementation is checked against.

Everything here restates the intended behavior as literally as possible:
full-matrix edit distance, exhaustive n-gram scoring with the greedy
selection rule applied verbatim, double-BFS path enumeration, and plain
set-arithmetic metrics. Nothing imports the optimized code paths it checks.
"""

from __future__ import annotations

import numpy as np


def edit_distance_matrix(a: str, b: str) -> int:
    """Wagner-Fischer with the full matrix, no shortcuts."""
    rows = len(a) + 1
    cols = len(b) + 1
    table = [[0] * cols for _ in range(rows)]
    table[0] = list(range(cols))
    for i in range(1, rows):
        upper = table[i - 1]
        row = table[i]
        row[0] = i
        char_a = a[i - 1]
        for j in range(1, cols):
            cost = 0 if char_a == b[j - 1] else 1
            row[j] = min(upper[j] + 1, row[j - 1] + 1, upper[j - 1] + cost)
    return table[-1][-1]


_sim_cache: dict = {}


def fuzzy_sim(a: str, b: str) -> float:
    longest = max(len(a), len(b))
    if longest == 0:
        return 1.0
    key = (a, b)
    cached = _sim_cache.get(key)
    if cached is None:
        cached = 1.0 - edit_distance_matrix(a, b) / longest
        _sim_cache[key] = cached
    return cached


def brute_force_link(
    normalized_tokens: list[str],
    surfaces: list[tuple[str, str]],
    max_n: int,
    alpha: float,
    sim_of=None,
) -> list[tuple[tuple[int, int], str, float]]:
    """The linking pipeline applied literally.

    surfaces: (surface_text, entity_id) pairs. sim_of(ngram_text, surface)
    defaults to the fuzzy formula. Returns kept (token_range, entity_id,
    score) triples ordered by start index.
    """
    if sim_of is None:
        sim_of = fuzzy_sim

    # every n-gram
    ngrams: list[tuple[tuple[int, int], str]] = []
    count = len(normalized_tokens)
    for start in range(count):
        for length in range(1, min(max_n, count - start) + 1):
            ngrams.append(
                ((start, start + length), " ".join(normalized_tokens[start : start + length]))
            )

    # score every vocabulary entry, apply the threshold, keep the best entity
    candidates: list[tuple[tuple[int, int], str, float]] = []
    for token_range, text in ngrams:
        best_entity = None
        best_score = 0.0
        for surface, entity_id in surfaces:
            score = sim_of(text, surface)
            if score < alpha:
                continue
            if (
                best_entity is None
                or score > best_score
                or (score == best_score and entity_id < best_entity)
            ):
                best_entity = entity_id
                best_score = score
        if best_entity is not None:
            candidates.append((token_range, best_entity, best_score))

    # greedy longest-non-overlapping selection, applied verbatim
    ordered = sorted(candidates, key=lambda c: (-(c[0][1] - c[0][0]), -c[2], c[0][0]))
    kept: list[tuple[tuple[int, int], str, float]] = []
    for candidate in ordered:
        start, end = candidate[0]
        if any(start < other[0][1] and other[0][0] < end for other in kept):
            continue
        kept.append(candidate)
    kept.sort(key=lambda c: c[0][0])
    return kept


def double_bfs_paths(
    edges: list[tuple[str, str, str]],
    v1: str,
    v2: str,
) -> set[str]:
    """Edge ids on undirected paths of length <= 2 between v1 and v2.

    edges: (edge_id, src, dst) triples. Enumerates single edges and all
    two-edge combinations through a shared middle node.
    """
    found: set[str] = set()
    incident: dict[str, list[tuple[str, str]]] = {}
    for edge_id, src, dst in edges:
        incident.setdefault(src, []).append((edge_id, dst))
        incident.setdefault(dst, []).append((edge_id, src))
    for edge_id, neighbor in incident.get(v1, []):
        if neighbor == v2:
            found.add(edge_id)
    for first_id, middle in incident.get(v1, []):
        if middle in (v1, v2):
            continue
        for second_id, target in incident.get(middle, []):
            if target == v2:
                found.add(first_id)
                found.add(second_id)
    return found


def incident_edge_count(
    ee_edges: list[tuple[str, str, str]],
    ep_edges: list[tuple[str, str, str]],
    node: str,
) -> int:
    """Brute scan of both edge lists for incident edges."""
    count = 0
    for _, src, dst in ee_edges:
        count += (src == node) + (dst == node)
    for _, src, dst in ep_edges:
        count += (src == node) + (dst == node)
    return count


def prf_sets(pred: set, gold: set) -> tuple[float, float, float]:
    if not pred and not gold:
        return 1.0, 1.0, 1.0
    overlap = len(pred & gold)
    precision = overlap / len(pred) if pred else 0.0
    recall = overlap / len(gold) if gold else 0.0
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return precision, recall, f1


def macro_prf(predictions: dict, gold: dict) -> tuple[float, float, float]:
    ps, rs, fs = [], [], []
    for doc_id, gold_items in gold.items():
        p, r, f = prf_sets(set(predictions.get(doc_id, ())), set(gold_items))
        ps.append(p)
        rs.append(r)
        fs.append(f)
    n = len(gold)
    return sum(ps) / n, sum(rs) / n, sum(fs) / n


def topk_by_dot(ids: list[str], matrix: np.ndarray, query: np.ndarray, k: int) -> list[str]:
    scored = [(float(matrix[i] @ query), ids[i]) for i in range(len(ids))]
    scored.sort(key=lambda item: (-item[0], item[1]))
    return [cid for _, cid in scored[:k]]
