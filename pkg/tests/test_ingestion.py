import pytest

from agents.ingestion_agent import (
    ActionKind,
    IngestionPipeline,
    SlidingWindow,
    classify,
    decide_action,
    extract,
    flush,
    gate,
    keyword_overlap,
    push,
)
from agents.memory_agent import MemoryAgent
from config.settings import CoarsenConfig, GateConfig, apply_ablation
from memory.graph import MemoryGraph
from memory.models import EdgeKind
from services.extraction_service import ExtractionError, RuleExtractor
from services.index_service import MultiViewIndex

from tests.conftest import HOUR, T0

DAY = 24 * HOUR


class _FlakyExtractor:
    """Falha nas primeiras `failures` chamadas"""

    name = "flaky"

    def __init__(self, embedder, failures: int):
        self.failures = failures
        self.calls = 0
        self.inner = RuleExtractor(embedder)

    def extract(self, window):
        self.calls += 1
        if self.calls <= self.failures:
            raise ExtractionError("timeout")
        return self.inner.extract(window)


def _pipeline(cfg, embedder, extractor=None):
    graph = MemoryGraph(embedder.dimension)
    index = MultiViewIndex(embedder.dimension)
    graph.add_listener(index)
    pipeline = IngestionPipeline(graph, index, embedder, extractor or RuleExtractor(embedder), cfg)
    return pipeline, graph


# =================== GATING ===================
def test_gate_drops_short_term_repetition_only(cfg, embedder, make_turn):
    cfg = cfg.model_copy(update={"ingestion": cfg.ingestion.model_copy(update={"window_size": 1})})
    pipeline, graph = _pipeline(cfg, embedder)
    items = [
        make_turn("Alice", "I adopted a cat today", T0, turn_index=0),
        make_turn("Alice", "I adopted a cat", T0 + 30 * 60, turn_index=1),
        make_turn("Alice", "I adopted a cat", T0 + 3 * DAY, "session_2", 0),
    ]
    report = pipeline.ingest(items)

    assert [d.passed for d in pipeline.decisions] == [True, False, True]
    assert pipeline.decisions[1].similarity > 0.6
    assert report.gated_out == 1
    # a recorrência três dias depois vira Merge no fato existente
    assert report.merged == 1
    assert len(graph) == 1
    entry = graph.get("m000001")
    assert entry.statement == "Alice adopted a cat"
    assert entry.timestamp == T0 + 3 * DAY
    assert entry.source_refs == {"session_1:0", "session_2:0"}


def test_gate_passes_everything_on_empty_memory(embedder, make_turn):
    graph = MemoryGraph(256)
    decision = gate(make_turn("Alice", "I adopted a cat"), graph.snapshot(), MultiViewIndex(256), embedder,
                    GateConfig())
    assert decision.passed


def test_gate_is_monotone_in_redundancy_threshold(embedder, make_turn, make_entry):
    graph = MemoryGraph(256)
    index = MultiViewIndex(256)
    graph.add_listener(index)
    graph.add_entry(make_entry("Alice adopted a cat", T0))
    graph.add_entry(make_entry("Bob moved to Lisbon for work", T0))
    view = graph.snapshot()
    items = [
        make_turn("Alice", text, T0 + 10 * 60)
        for text in ("I adopted a cat", "adopted", "Bob moved to Lisbon", "I moved", "unrelated words here")
    ]

    passed_before = set()
    for threshold in [n / 10 for n in range(11)]:
        passed = {i for i, item in enumerate(items)
                  if gate(item, view, index, embedder, GateConfig(lambda_red=threshold)).passed}
        assert passed_before <= passed
        passed_before = passed
    assert passed_before == set(range(len(items)))


def test_disabled_gate_keeps_every_turn(cfg, embedder, make_turn):
    cfg = apply_ablation(cfg, "no-gating")
    pipeline, _ = _pipeline(cfg, embedder)
    items = [make_turn("Alice", "I adopted a cat", T0 + n * 60, turn_index=n) for n in range(3)]
    report = pipeline.ingest(items)
    assert report.gated_out == 0
    assert all(d.passed for d in pipeline.decisions)


# =================== JANELA ===================
def test_window_emits_full_batches_and_flushes_the_rest(make_turn):
    window = SlidingWindow(20)
    turns = [make_turn("Alice", f"turn {n}", T0 + n, turn_index=n) for n in range(27)]
    emitted = [push(turn, window) for turn in turns[:19]]
    assert emitted == [None] * 19

    full = push(turns[19], window)
    assert [t.turn_index for t in full] == list(range(20))
    assert len(window) == 0

    for turn in turns[20:]:
        assert push(turn, window) is None
    rest = flush(window)
    assert [t.turn_index for t in rest] == list(range(20, 27))
    assert flush(window) is None


def test_window_capacity_must_be_positive():
    with pytest.raises(ValueError):
        SlidingWindow(0)


# =================== EXTRAÇÃO ===================
def test_extract_retries_once_then_succeeds(embedder, make_turn):
    extractor = _FlakyExtractor(embedder, failures=1)
    entries = extract([make_turn("Alice", "I adopted a cat")], extractor, retries=1)
    assert extractor.calls == 2
    assert [e.statement for e in entries] == ["Alice adopted a cat"]


def test_extract_skips_window_after_retries(embedder, make_turn):
    extractor = _FlakyExtractor(embedder, failures=10)
    assert extract([make_turn("Alice", "I adopted a cat")], extractor, retries=1) is None
    assert extractor.calls == 2


def test_pipeline_counts_skipped_windows(cfg, embedder, make_turn):
    pipeline, graph = _pipeline(cfg, embedder, _FlakyExtractor(embedder, failures=10))
    report = pipeline.ingest([make_turn("Alice", "I adopted a cat")])
    assert report.windows == 1
    assert report.skipped_windows == 1
    assert len(graph) == 0


# =================== COARSENING ===================
def test_decide_action_grid():
    cfg = CoarsenConfig()
    grid = [n / 20 for n in range(21)]
    for similarity in grid:
        for overlap in grid:
            action = decide_action(similarity, overlap, cfg)
            if similarity > 0.7 and overlap > 0.5:
                assert action == ActionKind.MERGE
            elif similarity > 0.7:
                assert action == ActionKind.LINK
            else:
                assert action == ActionKind.ADD


def test_keyword_overlap_is_normalized_by_candidate(make_entry):
    candidate = make_entry("a", keywords=["dinner", "3pm"])
    existing = make_entry("b", keywords=["dinner", "2pm", "carol", "dave"])
    assert keyword_overlap(candidate, existing) == 0.5
    assert keyword_overlap(make_entry("c", keywords=[]), existing) == 0.0


def test_classify_exact_restatement_is_merge(make_entry):
    first = make_entry("Alice adopted a cat", keywords=["adopted", "cat"], entry_id="m000001")
    again = make_entry("Alice adopted a cat", keywords=["adopted", "cat"])
    action = classify(again, first, CoarsenConfig())
    assert action.kind == ActionKind.MERGE
    assert action.existing_id == "m000001"
    assert action.similarity == pytest.approx(1.0)


def test_changed_plan_is_linked_as_state_update(cfg, agent, make_turn):
    agent.ingest([make_turn("Bob", "My dinner with Carol and Dave is at 2pm.", T0)])
    report = agent.ingest([make_turn("Bob", "My dinner with Carol and Dave is at 3pm.", T0 + 2 * DAY,
                                     "session_2", 0)])
    assert report.linked == 1
    view = agent.snapshot()
    edges = view.edges(EdgeKind.TEMPORAL_UPDATE)
    assert [(e.src, e.dst) for e in edges] == [("m000001", "m000002")]
    assert view.latest_state("m000001").statement == "Bob's dinner with Carol and Dave is at 3pm"


def test_no_coarsening_adds_every_candidate(cfg, embedder, make_turn):
    cfg = apply_ablation(cfg, "no-coarsening")
    pipeline, graph = _pipeline(cfg, embedder)
    pipeline.ingest([make_turn("Alice", "I adopted a cat", T0)])
    report = pipeline.ingest([make_turn("Alice", "I adopted a cat", T0 + 3 * DAY, "session_2", 0)])
    assert report.added == 1
    assert len(graph) == 2


def test_index_tracks_graph_ids_through_merges_and_links(cfg, agent, make_turn):
    agent.ingest([
        make_turn("Alice", "I adopted a cat.", T0, "session_1", 0),
        make_turn("Bob", "My dinner with Carol and Dave is at 2pm.", T0 + 60, "session_1", 1),
    ])
    report = agent.ingest([
        make_turn("Alice", "I adopted a cat.", T0 + 3 * DAY, "session_2", 0),
        make_turn("Bob", "My dinner with Carol and Dave is at 3pm.", T0 + 3 * DAY + 60, "session_2", 1),
        make_turn("Carol", "I joined a choir in Lisbon.", T0 + 3 * DAY + 120, "session_2", 2),
    ])
    assert report.merged >= 1
    assert report.linked == 1
    view = agent.snapshot()
    assert agent.index.ids() == sorted(view.ids())
    assert agent.index.lexical.ids() == sorted(view.ids())
    for entry in view.ordered_entries():
        assert agent.index.top_k_dense(entry.embedding, 1)[0][0] == entry.id


def test_agent_keeps_the_graph_it_is_given(cfg):
    graph = MemoryGraph(cfg.embedder.dimension)
    agent = MemoryAgent(cfg, graph=graph)
    assert agent.graph is graph
    agent.ingest([])
    assert len(graph) == 0


def test_gate_reuses_one_snapshot_until_a_window_is_written(cfg, embedder, make_turn, monkeypatch):
    cfg = cfg.model_copy(update={"ingestion": cfg.ingestion.model_copy(update={"window_size": 2})})
    pipeline, graph = _pipeline(cfg, embedder)
    calls = []
    original = graph.snapshot

    def counting_snapshot():
        calls.append(len(graph))
        return original()

    monkeypatch.setattr(graph, "snapshot", counting_snapshot)
    pipeline.ingest([
        make_turn("Alice", f"I visited museum number {n} in Lisbon.", T0 + n * DAY, f"session_{n + 1}", 0)
        for n in range(6)
    ])
    # uma no início e uma depois de cada janela cheia
    assert len(calls) == 4
    assert len(graph) > 0
