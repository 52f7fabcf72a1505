import math
from collections import Counter

import numpy as np
import pytest

from memory.graph import MemoryGraph
from memory.models import AtomicEntry
from services.embedding_service import normalize
from services.index_service import DenseIndex, IndexDimensionError, LexicalIndex, MultiViewIndex
from utils.helpers import content_terms

from tests.conftest import T0


def _vector_entry(entry_id: str, vector: np.ndarray, statement: str = "x") -> AtomicEntry:
    return AtomicEntry(statement=statement, embedding=normalize(vector), timestamp=T0, id=entry_id)


def _brute_force(entries, query, k, exclude=()):
    scored = [(-float(e.embedding @ query), e.id) for e in entries if e.id not in exclude]
    return [entry_id for _, entry_id in sorted(scored)[:k]]


def test_dense_top_k_matches_exhaustive_ranking(rng):
    for _ in range(100):
        size = int(rng.integers(1, 1000))
        dimension = 256
        entries = [_vector_entry(f"m{n + 1:06d}", rng.normal(size=dimension)) for n in range(size)]
        index = DenseIndex(dimension)
        for position in rng.permutation(size):
            index.upsert(entries[position])
        query = normalize(rng.normal(size=dimension))
        k = int(rng.choice([1, 5, 20]))
        excluded = {e.id for e in entries if rng.random() < 0.2}

        ranked = index.top_k(query, k, exclude=excluded)
        assert [i for i, _ in ranked] == _brute_force(entries, query, k, excluded)
        assert len(ranked) == min(k, size - len(excluded))
        scores = [s for _, s in ranked]
        assert scores == sorted(scores, reverse=True)


def test_dense_ties_break_by_ascending_id():
    vector = np.array([1.0, 0.0, 0.0])
    index = DenseIndex(3)
    for entry_id in ["m000003", "m000001", "m000002"]:
        index.upsert(_vector_entry(entry_id, vector))
    assert [i for i, _ in index.top_k(vector, 3)] == ["m000001", "m000002", "m000003"]


def test_dense_index_checks_dimensions():
    index = DenseIndex(3)
    index.upsert(_vector_entry("m000001", np.array([1.0, 0.0, 0.0])))
    with pytest.raises(IndexDimensionError):
        index.upsert(_vector_entry("m000002", np.array([1.0, 0.0])))
    with pytest.raises(IndexDimensionError):
        index.top_k(np.array([1.0, 0.0]), 1)
    with pytest.raises(ValueError):
        index.top_k(np.array([1.0, 0.0, 0.0]), 0)


def _bm25_oracle(docs, terms, k1=1.2, b=0.75):
    counts = {doc_id: Counter(content_terms(text)) for doc_id, text in docs.items()}
    n_docs = len(counts)
    avg_length = sum(sum(c.values()) for c in counts.values()) / n_docs
    scores = {}
    for term in dict.fromkeys(terms):
        df = sum(1 for c in counts.values() if term in c)
        if df == 0:
            continue
        idf = math.log(1 + (n_docs - df + 0.5) / (df + 0.5))
        for doc_id, c in counts.items():
            tf = c.get(term, 0)
            if tf:
                length = sum(c.values())
                score = idf * tf * (k1 + 1) / (tf + k1 * (1 - b + b * length / avg_length))
                scores[doc_id] = scores.get(doc_id, 0.0) + score
    return sorted(scores.items(), key=lambda item: (-item[1], item[0]))


def test_bm25_matches_reference_scores(embedder):
    docs = {
        "m000001": "Alice adopted a cat named Fluffy",
        "m000002": "Bob adopted a dog and a second dog",
        "m000003": "Carol moved to Lisbon for work",
        "m000004": "Alice and Carol went hiking in Lisbon",
        "m000005": "Dave plays the clarinet",
    }
    index = LexicalIndex()
    for doc_id, text in docs.items():
        index.upsert(AtomicEntry(statement=text, embedding=embedder.embed(text), timestamp=T0, id=doc_id))

    for query in (["adopted", "dog"], ["lisbon", "alice"], ["clarinet"], ["carol", "carol", "work"]):
        expected = _bm25_oracle(docs, query)
        ranked = index.top_k(query, 10)
        assert [i for i, _ in ranked] == [i for i, _ in expected]
        assert [s for _, s in ranked] == pytest.approx([s for _, s in expected])


def test_lexical_returns_only_matching_documents(embedder):
    index = LexicalIndex()
    index.upsert(AtomicEntry(statement="Alice adopted a cat", embedding=embedder.embed("cat"), timestamp=T0,
                             id="m000001"))
    assert index.top_k(["giraffe"], 5) == []
    assert index.top_k([], 5) == []
    assert [i for i, _ in index.top_k(["cat", "giraffe"], 5)] == ["m000001"]


def test_lexical_upsert_replaces_previous_terms(embedder):
    index = LexicalIndex()
    index.upsert(AtomicEntry(statement="Alice adopted a cat", embedding=embedder.embed("a"), timestamp=T0,
                             id="m000001"))
    index.upsert(AtomicEntry(statement="Alice adopted a dog", embedding=embedder.embed("a"), timestamp=T0,
                             id="m000001"))
    assert index.postings("cat") == []
    assert index.postings("dog") == [("m000001", 1)]
    assert index.remove("m000001")
    assert index.vocabulary() == []


def _text_entry(embedder, entry_id, text):
    return AtomicEntry(statement=text, embedding=embedder.embed(text), timestamp=T0, id=entry_id)


def test_lexical_scores_follow_upserts_after_a_query(embedder):
    docs = {
        "m000001": "Alice adopted a cat named Fluffy",
        "m000002": "Bob adopted a dog",
    }
    index = LexicalIndex()
    for doc_id, text in docs.items():
        index.upsert(_text_entry(embedder, doc_id, text))
    assert [i for i, _ in index.top_k(["adopted"], 5)] == [i for i, _ in _bm25_oracle(docs, ["adopted"])]

    docs["m000003"] = "Carol adopted a parrot and adopted a hamster"
    index.upsert(_text_entry(embedder, "m000003", docs["m000003"]))
    ranked = index.top_k(["adopted", "parrot"], 5)
    expected = _bm25_oracle(docs, ["adopted", "parrot"])
    assert [i for i, _ in ranked] == [i for i, _ in expected]
    assert [s for _, s in ranked] == pytest.approx([s for _, s in expected])

    index.remove("m000003")
    del docs["m000003"]
    assert index.top_k(["parrot"], 5) == []
    assert [s for _, s in index.top_k(["adopted"], 5)] == pytest.approx(
        [s for _, s in _bm25_oracle(docs, ["adopted"])])


def test_lexical_exclusion_and_repeated_terms(embedder):
    index = LexicalIndex()
    index.upsert(_text_entry(embedder, "m000001", "Alice moved to Lisbon"))
    index.upsert(_text_entry(embedder, "m000002", "Carol visited Lisbon twice"))
    once = index.top_k(["lisbon"], 5)
    assert index.top_k(["lisbon", "Lisbon", "lisbon"], 5) == once
    assert [i for i, _ in index.top_k(["lisbon"], 5, exclude={"m000001"})] == ["m000002"]
    assert index.top_k(["lisbon"], 5, exclude={"m000001", "m000002"}) == []
    with pytest.raises(ValueError):
        index.top_k(["lisbon"], 0)


def test_lexical_scores_are_positive_for_common_terms(embedder):
    index = LexicalIndex()
    for n in range(4):
        index.upsert(_text_entry(embedder, f"m00000{n + 1}", f"Everyone adopted pet number {n}"))
    ranked = index.top_k(["adopted"], 10)
    assert len(ranked) == 4
    assert all(score > 0 for _, score in ranked)
    assert index.idf("adopted") == pytest.approx(math.log(1 + 0.5 / 4.5))


def test_multi_view_index_follows_graph_writes(make_entry):
    graph = MemoryGraph(256)
    index = MultiViewIndex(256)
    graph.add_listener(index)
    first = graph.add_entry(make_entry("Alice adopted a cat"))
    graph.add_entry(make_entry("Bob moved to Lisbon"))
    assert len(index) == 2
    assert index.ids() == ["m000001", "m000002"]
    assert index.top_k_lexical(["lisbon"], 5)[0][0] == "m000002"

    index.remove(first)
    assert index.ids() == ["m000002"]
    index.remove("m000042")
    assert len(index) == 1


def test_multi_view_index_rebuilds_from_view(make_entry):
    graph = MemoryGraph(256)
    graph.add_entry(make_entry("Alice adopted a cat"))
    graph.add_entry(make_entry("Bob moved to Lisbon"))
    rebuilt = MultiViewIndex.from_view(graph.snapshot())
    assert rebuilt.ids() == ["m000001", "m000002"]
    assert rebuilt.top_k_dense(graph.get("m000001").embedding, 1)[0][0] == "m000001"
