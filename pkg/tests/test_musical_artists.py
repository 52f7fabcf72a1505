"""Pergunta de lista sobre artistas vistos, com evidências em sessões distantes"""
import re

import pytest

from agents.memory_agent import MemoryAgent
from agents.synthesis_agent import QueryKind
from evaluation.dataset import load_dataset
from evaluation.harness import run_eval
from evaluation.metrics import token_f1

QUESTION = "What musical artists/bands has Melanie seen?"


@pytest.fixture
def dataset(data_dir):
    return load_dataset(data_dir / "musical_artists.json")


@pytest.fixture
def echo_cfg(cfg):
    return cfg.model_copy(update={"generator": cfg.generator.model_copy(update={"kind": "echo"})})


@pytest.fixture
def melanie(echo_cfg, dataset):
    agent = MemoryAgent(echo_cfg, answers={QUESTION: "Matt Patterson, Summer Sounds"})
    agent.ingest(dataset.items("melanie-caroline"))
    return agent


def test_evidence_graph_holds_both_concerts(melanie):
    result = melanie.answer(QUESTION)
    refs = {ref for node in result.graph.nodes.values() for ref in node.entry.source_refs}
    assert {"session_2:1", "session_4:4"} <= refs
    statements = " ".join(f.statement for f in result.context.facts)
    assert "Matt Patterson" in statements
    assert "Summer Sounds" in statements
    assert len(result.graph) <= 25


def test_context_lists_multi_hop_reasoning_paths(melanie):
    result = melanie.answer(QUESTION)
    context = result.context
    assert context.kind == QueryKind.LIST
    assert "Reasoning Paths:" in context.text
    assert any(re.fullmatch(r"F\d+ → F\d+ → F\d+", line) for line in context.path_lines)
    # fatos em ordem cronológica
    dates = [f.date for f in context.facts]
    assert dates == sorted(dates)


def test_single_generator_call_scores_full_f1(melanie, dataset):
    result = melanie.answer(QUESTION)
    assert result.generator_calls == 1
    assert melanie.generator.calls == 1
    gold = dataset.qa[0].answer
    assert token_f1(result.answer, gold) == pytest.approx(1.0)


def test_harness_reports_multi_hop_recall(echo_cfg, dataset):
    answers = {q.question: q.answer for q in dataset.qa}
    report = run_eval(dataset, echo_cfg, factory=lambda cfg: MemoryAgent(cfg, answers=answers))
    multihop = report.categories["MultiHop"]
    assert multihop.count == 1
    assert multihop.evidence_recall == pytest.approx(1.0)
    assert report.average_f1 == pytest.approx(1.0)
