import json

import numpy as np
import pytest

from memory.exceptions import (
    DuplicateEntryError,
    InvalidEntryError,
    PersistenceError,
    SchemaVersionError,
    UnknownEntryError,
)
from memory.graph import SCHEMA_VERSION, MemoryGraph
from memory.models import AtomicEntry, Edge, EdgeKind

from tests.conftest import HOUR, T0

DAY = 24 * HOUR


class _Recorder:
    def __init__(self):
        self.seen = []

    def upsert(self, entry):
        self.seen.append(entry.id)


def test_add_entry_assigns_sequential_ids(make_entry):
    graph = MemoryGraph(256)
    first = graph.add_entry(make_entry("Alice adopted a cat"))
    second = graph.add_entry(make_entry("Bob moved to Lisbon"))
    assert (first, second) == ("m000001", "m000002")
    assert graph.snapshot().ids() == ["m000001", "m000002"]


def test_duplicate_id_is_rejected(make_entry):
    graph = MemoryGraph(256)
    graph.add_entry(make_entry("Alice adopted a cat", entry_id="m000001"))
    with pytest.raises(DuplicateEntryError):
        graph.add_entry(make_entry("Bob moved to Lisbon", entry_id="m000001"))


def test_invalid_embeddings_are_rejected(make_entry):
    graph = MemoryGraph(256)
    entry = make_entry("Alice adopted a cat")
    not_unit = AtomicEntry(statement=entry.statement, embedding=entry.embedding * 2, timestamp=T0)
    with pytest.raises(InvalidEntryError):
        graph.add_entry(not_unit)
    wrong_size = AtomicEntry(statement="x", embedding=np.ones(4) / 2.0, timestamp=T0)
    with pytest.raises(InvalidEntryError):
        graph.add_entry(wrong_size)
    with pytest.raises(InvalidEntryError):
        graph.add_entry(AtomicEntry(statement="  ", embedding=entry.embedding, timestamp=T0))


def test_unknown_entry_raises(make_entry):
    graph = MemoryGraph(256)
    with pytest.raises(UnknownEntryError):
        graph.get("m999999")
    with pytest.raises(UnknownEntryError):
        graph.link_entries("m999999", make_entry("Bob moved to Lisbon"))


def test_merge_advances_timestamp_and_accumulates_sources(make_entry):
    graph = MemoryGraph(256)
    old = graph.add_entry(make_entry("Alice adopted a cat", T0, source=[("session_1", 0)]))
    graph.merge_entry(old, make_entry("Alice adopted a cat!", T0 + 3 * DAY, keywords=["kitten"],
                                      source=[("session_2", 4)]))
    merged = graph.get(old)
    assert len(graph) == 1
    assert merged.statement == "Alice adopted a cat"
    assert merged.timestamp == T0 + 3 * DAY
    assert merged.source == (("session_1", 0), ("session_2", 4))
    assert "kitten" in merged.keywords


def test_link_creates_temporal_update_and_latest_state(make_entry):
    graph = MemoryGraph(256)
    first = graph.add_entry(make_entry("Bob's dinner is at 2pm", T0))
    second = graph.link_entries(first, make_entry("Bob's dinner is at 3pm", T0 + DAY))
    third = graph.link_entries(second, make_entry("Bob's dinner is at 4pm", T0 + 2 * DAY))

    view = graph.snapshot()
    edges = view.edges(EdgeKind.TEMPORAL_UPDATE)
    assert [(e.src, e.dst) for e in edges] == [(first, second), (second, third)]
    assert edges[0].created_at == T0 + DAY
    assert view.latest_state(first).id == third
    assert view.latest_state(third).id == third
    assert view.update_chains() == [[first, second, third]]


def test_link_with_earlier_state_points_forward_in_time(make_entry):
    graph = MemoryGraph(256)
    recent = graph.add_entry(make_entry("Bob's dinner is at 3pm", T0 + DAY))
    older = graph.link_entries(recent, make_entry("Bob's dinner is at 2pm", T0))
    edge = graph.snapshot().edges(EdgeKind.TEMPORAL_UPDATE)[0]
    assert (edge.src, edge.dst) == (older, recent)


def test_snapshot_is_isolated_from_later_writes(make_entry):
    graph = MemoryGraph(256)
    graph.add_entry(make_entry("Alice adopted a cat"))
    view = graph.snapshot()
    graph.add_entry(make_entry("Bob moved to Lisbon"))
    assert len(view) == 1
    assert len(graph.snapshot()) == 2
    assert graph.snapshot().revision > view.revision


def test_listeners_follow_every_upsert(make_entry):
    graph = MemoryGraph(256)
    recorder = _Recorder()
    graph.add_listener(recorder)
    first = graph.add_entry(make_entry("Alice adopted a cat"))
    graph.merge_entry(first, make_entry("Alice adopted a cat"))
    second = graph.link_entries(first, make_entry("Alice adopted a dog", T0 + DAY))
    assert recorder.seen == [first, first, second]


def test_self_loop_edge_is_rejected(make_entry):
    graph = MemoryGraph(256)
    entry_id = graph.add_entry(make_entry("Alice adopted a cat"))
    with pytest.raises(InvalidEntryError):
        graph.add_edge(Edge(entry_id, entry_id, EdgeKind.ENTITY_SHARED))


def test_save_and_load_preserve_structure(tmp_path, make_entry):
    graph = MemoryGraph(256)
    first = graph.add_entry(make_entry("Bob's dinner is at 2pm", T0, entities=["Bob"], speaker="Bob"))
    graph.link_entries(first, make_entry("Bob's dinner is at 3pm", T0 + DAY, entities=["Bob"], speaker="Bob"))
    graph.add_entry(make_entry("Alice adopted a cat", T0 + 2 * DAY, entities=["Alice"]))

    path = tmp_path / "memory.jsonl"
    graph.save(path)
    header = json.loads(path.read_text(encoding="utf-8").splitlines()[0])
    assert header == {"schema": SCHEMA_VERSION}

    loaded = MemoryGraph.load(path, 256)
    assert loaded.snapshot().structurally_equal(graph.snapshot())
    # ids continuam a sequência depois do load
    assert loaded.add_entry(make_entry("Carol joined a choir")) == "m000004"


def test_load_rejects_other_schema_versions(tmp_path):
    path = tmp_path / "memory.jsonl"
    path.write_text(json.dumps({"schema": "ariadne-mem/0"}) + "\n", encoding="utf-8")
    with pytest.raises(SchemaVersionError) as info:
        MemoryGraph.load(path)
    assert info.value.line == 1


def test_load_reports_line_of_bad_record(tmp_path, make_entry):
    graph = MemoryGraph(256)
    graph.add_entry(make_entry("Alice adopted a cat"))
    path = tmp_path / "memory.jsonl"
    graph.save(path)
    with path.open("a", encoding="utf-8") as handle:
        handle.write("{not json\n")
    with pytest.raises(PersistenceError) as info:
        MemoryGraph.load(path)
    assert info.value.line == 3
    assert "linha 3" in str(info.value)


def test_load_rejects_edge_to_missing_entry(tmp_path, make_entry):
    graph = MemoryGraph(256)
    graph.add_entry(make_entry("Alice adopted a cat"))
    path = tmp_path / "memory.jsonl"
    graph.save(path)
    with path.open("a", encoding="utf-8") as handle:
        handle.write(json.dumps({"type": "edge", "src": "m000001", "dst": "m000009", "kind": "Bridge"}) + "\n")
    with pytest.raises(PersistenceError) as info:
        MemoryGraph.load(path)
    assert info.value.line == 3


def test_networkx_export_keeps_edge_kinds(make_entry):
    graph = MemoryGraph(256)
    first = graph.add_entry(make_entry("Bob's dinner is at 2pm", T0))
    second = graph.link_entries(first, make_entry("Bob's dinner is at 3pm", T0 + DAY))
    exported = graph.snapshot().to_networkx()
    assert set(exported.nodes) == {first, second}
    assert exported.edges[first, second, EdgeKind.TEMPORAL_UPDATE.value]["kind"] == "TemporalUpdate"


def test_merge_into_superseded_state_keeps_update_forward(make_entry):
    graph = MemoryGraph(256)
    old = graph.add_entry(make_entry("Bob's dinner is at 2pm", T0))
    new = graph.link_entries(old, make_entry("Bob's dinner is at 3pm", T0 + 2 * DAY))
    graph.merge_entry(old, make_entry("Bob's dinner is at 2pm", T0 + 5 * DAY, source=[("session_6", 1)]))

    view = graph.snapshot()
    assert view.get(old).timestamp == T0 + 2 * DAY
    assert ("session_6", 1) in view.get(old).source
    [edge] = view.edges(EdgeKind.TEMPORAL_UPDATE)
    assert (edge.src, edge.dst) == (old, new)
    assert view.get(edge.src).timestamp <= view.get(edge.dst).timestamp
    assert view.latest_state(old).id == new


def test_merge_into_latest_state_still_advances(make_entry):
    graph = MemoryGraph(256)
    old = graph.add_entry(make_entry("Bob's dinner is at 2pm", T0))
    new = graph.link_entries(old, make_entry("Bob's dinner is at 3pm", T0 + DAY))
    graph.merge_entry(new, make_entry("Bob's dinner is at 3pm", T0 + 4 * DAY))
    assert graph.get(new).timestamp == T0 + 4 * DAY


def _assert_consistent(view):
    out_keys, in_keys = set(), set()
    for entry_id in view.ids():
        out_keys |= {e.key for e in view.out_edges(entry_id)}
        in_keys |= {e.key for e in view.in_edges(entry_id)}
    assert out_keys == in_keys == {e.key for e in view.edges()}
    for edge in view.edges():
        assert edge.src in view and edge.dst in view
        assert edge.src != edge.dst
        if edge.kind == EdgeKind.TEMPORAL_UPDATE:
            assert view.get(edge.src).timestamp <= view.get(edge.dst).timestamp


def test_random_mutations_keep_edges_consistent(rng, make_entry):
    for _ in range(20):
        graph = MemoryGraph(256)
        for step in range(40):
            timestamp = T0 + int(rng.integers(0, 10 * DAY))
            statement = f"Fact {step} about topic {int(rng.integers(5))}"
            action = int(rng.integers(3)) if len(graph) else 0
            if action == 0:
                graph.add_entry(make_entry(statement, timestamp))
            else:
                target = str(rng.choice(graph.snapshot().ids()))
                if action == 1:
                    graph.merge_entry(target, make_entry(statement, timestamp, source=[("session_9", step)]))
                else:
                    graph.link_entries(target, make_entry(statement, timestamp))
        _assert_consistent(graph.snapshot())


def test_save_load_cycles_are_byte_identical(tmp_path, make_entry):
    graph = MemoryGraph(256)
    first = graph.add_entry(make_entry("Bob's dinner is at 2pm", T0, entities=["Bob"], speaker="Bob"))
    graph.link_entries(first, make_entry("Bob's dinner is at 3pm", T0 + DAY, entities=["Bob"], speaker="Bob"))
    graph.merge_entry(first, make_entry("Bob's dinner is at 2pm", T0 + 3 * DAY, source=[("session_4", 2)]))
    graph.add_entry(make_entry("Alice adopted a cat", T0 + 2 * DAY, entities=["Alice"]))

    paths = [tmp_path / f"memory_{n}.jsonl" for n in range(3)]
    graph.save(paths[0])
    MemoryGraph.load(paths[0], 256).save(paths[1])
    MemoryGraph.load(paths[1], 256).save(paths[2])
    assert paths[0].read_bytes() == paths[1].read_bytes() == paths[2].read_bytes()
