import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import pandas as pd
from loguru import logger

from agents.ingestion_agent import IngestionReport
from agents.memory_agent import MemoryAgent
from config.settings import EvalConfig, RetrievalConfig, Settings, apply_ablation
from evaluation.dataset import Category, Dataset, QAItem
from evaluation.metrics import bleu, token_f1
from memory.graph import GraphView

AgentFactory = Callable[[Settings], MemoryAgent]

CATEGORY_ORDER = [Category.MULTI_HOP, Category.TEMPORAL, Category.OPEN_DOMAIN, Category.SINGLE_HOP]


@dataclass
class EvalRecord:
    conversation_id: str
    question: str
    gold: str
    prediction: str
    category: str
    f1: float = 0.0
    bleu: float = 0.0
    token_cost: int = 0
    evidence_recall: Optional[float] = None
    fast_path: Optional[str] = None
    generator_calls: int = 0
    parse_warning: bool = False
    retrieval_seconds: float = 0.0
    synthesis_seconds: float = 0.0
    error: Optional[str] = None


@dataclass
class CategoryScores:
    category: str
    count: int = 0
    f1: float = 0.0
    bleu: float = 0.0
    evidence_recall: Optional[float] = None


@dataclass
class EvalReport:
    label: str
    records: List[EvalRecord] = field(default_factory=list)
    categories: Dict[str, CategoryScores] = field(default_factory=dict)
    average_f1: float = 0.0
    category_average_f1: float = 0.0
    average_bleu: float = 0.0
    mean_token_cost: float = 0.0
    evidence_recall: Optional[float] = None
    generator_calls: int = 0
    fast_path_hits: int = 0
    failures: int = 0
    ingestion: Dict[str, int] = field(default_factory=dict)
    construction_seconds: float = 0.0
    retrieval_seconds: float = 0.0
    synthesis_seconds: float = 0.0

    @property
    def total_seconds(self) -> float:
        return self.construction_seconds + self.retrieval_seconds + self.synthesis_seconds

    def to_dict(self, include_timings: bool = True) -> Dict[str, Any]:
        timing_fields = {"retrieval_seconds", "synthesis_seconds"}
        records = []
        for record in self.records:
            data = asdict(record)
            if not include_timings:
                data = {k: v for k, v in data.items() if k not in timing_fields}
            records.append(data)
        document = {
            "label": self.label,
            "questions": len(self.records),
            "average_f1": self.average_f1,
            "category_average_f1": self.category_average_f1,
            "average_bleu": self.average_bleu,
            "mean_token_cost": self.mean_token_cost,
            "evidence_recall": self.evidence_recall,
            "generator_calls": self.generator_calls,
            "fast_path_hits": self.fast_path_hits,
            "failures": self.failures,
            "ingestion": self.ingestion,
            "categories": {name: asdict(scores) for name, scores in self.categories.items()},
            "records": records,
        }
        if include_timings:
            document["timings"] = {
                "construction_seconds": self.construction_seconds,
                "retrieval_seconds": self.retrieval_seconds,
                "synthesis_seconds": self.synthesis_seconds,
                "total_seconds": self.total_seconds,
            }
        return document

    def row(self) -> Dict[str, Any]:
        """Linha da tabela: F1/BLEU por categoria, média e custo em tokens"""
        row: Dict[str, Any] = {"Method": self.label}
        for category in CATEGORY_ORDER:
            scores = self.categories[category.value]
            row[f"{category.value} F1"] = round(scores.f1 * 100, 2)
            row[f"{category.value} BLEU"] = round(scores.bleu * 100, 2)
        row["Average F1"] = round(self.average_f1 * 100, 2)
        row["Average BLEU"] = round(self.average_bleu * 100, 2)
        row["Token Cost"] = round(self.mean_token_cost, 1)
        row["Evidence Recall"] = None if self.evidence_recall is None else round(self.evidence_recall * 100, 2)
        return row


def _mean(values: Sequence[float]) -> float:
    return sum(values) / len(values) if values else 0.0


def evidence_recall(gold: Sequence[str], found: set) -> Optional[float]:
    if not gold:
        return None
    return sum(1 for ref in gold if ref in found) / len(gold)


# =================== EXECUÇÃO ===================
def default_factory(cfg: Settings) -> MemoryAgent:
    return MemoryAgent(cfg)


def build_memories(dataset: Dataset, cfg: Settings,
                   factory: AgentFactory = default_factory) -> List[Tuple[str, MemoryAgent, IngestionReport]]:
    """Fase I uma vez por conversa, em sequência"""
    memories = []
    for conversation_id in dataset.conversation_ids():
        agent = factory(cfg)
        report = agent.ingest(dataset.items(conversation_id))
        memories.append((conversation_id, agent, report))
    return memories


def answer_question(agent: MemoryAgent, view: GraphView, item: QAItem) -> EvalRecord:
    record = EvalRecord(item.conversation_id, item.question, item.answer, "", item.category.value)
    try:
        result = agent.answer(item.question, view)
    except Exception as e:
        logger.error(f"❌ Pergunta falhou ({item.question[:60]}): {e}")
        record.error = str(e)
        record.evidence_recall = evidence_recall(item.evidence, set())
        return record

    found = {ref for node in result.graph.nodes.values() for ref in node.entry.source_refs}
    record.prediction = result.answer
    record.f1 = token_f1(result.answer, item.answer)
    record.bleu = bleu(result.answer, item.answer)
    record.token_cost = result.token_count
    record.evidence_recall = evidence_recall(item.evidence, found)
    record.fast_path = result.fast_path
    record.generator_calls = result.generator_calls
    record.parse_warning = result.parse_warning
    record.retrieval_seconds = result.retrieval_seconds
    record.synthesis_seconds = result.synthesis_seconds
    return record


def evaluate_questions(agent: MemoryAgent, questions: Sequence[QAItem], workers: int = 1) -> List[EvalRecord]:
    view = agent.snapshot()
    if workers <= 1:
        return [answer_question(agent, view, item) for item in questions]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda item: answer_question(agent, view, item), questions))


def aggregate(label: str, records: List[EvalRecord], ingestion: Sequence[IngestionReport]) -> EvalReport:
    report = EvalReport(label=label, records=records)
    for category in CATEGORY_ORDER:
        members = [r for r in records if r.category == category.value]
        recalls = [r.evidence_recall for r in members if r.evidence_recall is not None]
        report.categories[category.value] = CategoryScores(
            category=category.value,
            count=len(members),
            f1=_mean([r.f1 for r in members]),
            bleu=_mean([r.bleu for r in members]),
            evidence_recall=_mean(recalls) if recalls else None,
        )
    report.average_f1 = _mean([r.f1 for r in records])
    report.category_average_f1 = _mean([s.f1 for s in report.categories.values() if s.count])
    report.average_bleu = _mean([r.bleu for r in records])
    report.mean_token_cost = _mean([r.token_cost for r in records])
    recalls = [r.evidence_recall for r in records if r.evidence_recall is not None]
    report.evidence_recall = _mean(recalls) if recalls else None
    report.generator_calls = sum(r.generator_calls for r in records)
    report.fast_path_hits = sum(1 for r in records if r.fast_path)
    report.failures = sum(1 for r in records if r.error)
    report.retrieval_seconds = sum(r.retrieval_seconds for r in records)
    report.synthesis_seconds = sum(r.synthesis_seconds for r in records)

    totals = IngestionReport()
    for part in ingestion:
        totals.absorb(part)
    report.construction_seconds = totals.construction_seconds
    report.ingestion = {k: v for k, v in asdict(totals).items() if k != "construction_seconds"}
    return report


def run_eval(dataset: Dataset, cfg: Settings, label: str = "Full",
             factory: AgentFactory = default_factory) -> EvalReport:
    """Constrói a memória de cada conversa e responde todas as perguntas"""
    memories = build_memories(dataset, cfg, factory)
    records: List[EvalRecord] = []
    for conversation_id, agent, _ in memories:
        records += evaluate_questions(agent, dataset.questions(conversation_id), cfg.eval.workers)
    report = aggregate(label, records, [r for _, _, r in memories])
    logger.info(f"📊 {label}: F1={report.average_f1:.4f} BLEU={report.average_bleu:.4f} tokens={report.mean_token_cost:.1f}")
    return report


def run_ablations(dataset: Dataset, cfg: Settings, stages: Sequence[str],
                  factory: AgentFactory = default_factory) -> List[EvalReport]:
    return [run_eval(dataset, apply_ablation(cfg, stage), Settings.ABLATIONS[stage], factory) for stage in stages]


def parse_sweep(expression: str) -> Tuple[str, List[float]]:
    """Lê "k_sem=1,10,20" como ("k_sem", [1, 10, 20])"""
    name, _, raw = expression.partition("=")
    name = name.strip()
    if name not in RetrievalConfig.model_fields or not raw:
        raise ValueError(f"varredura inválida: {expression!r} (use campo=v1,v2,...)")
    values = [float(v) if "." in v else int(v) for v in (p.strip() for p in raw.split(",")) if v]
    return name, values


def run_sweep(dataset: Dataset, cfg: Settings, name: str, values: Sequence[Union[int, float]],
              factory: AgentFactory = default_factory) -> List[EvalReport]:
    """Reaproveita a memória construída e varia um parâmetro de recuperação"""
    memories = build_memories(dataset, cfg, factory)
    ingestion = [r for _, _, r in memories]
    reports = []
    for value in values:
        retrieval = RetrievalConfig.model_validate({**cfg.retrieval.model_dump(), name: value})
        variant = cfg.model_copy(update={"retrieval": retrieval})
        records: List[EvalRecord] = []
        for conversation_id, agent, _ in memories:
            records += evaluate_questions(agent.with_settings(variant), dataset.questions(conversation_id),
                                          cfg.eval.workers)
        reports.append(aggregate(f"{name}={value}", records, ingestion))
    return reports


# =================== SAÍDA ===================
def reports_table(reports: Sequence[EvalReport]) -> pd.DataFrame:
    return pd.DataFrame([r.row() for r in reports]).set_index("Method")


def write_report(reports: Sequence[EvalReport], directory: Union[str, Path],
                 include_timings: bool = True) -> List[Path]:
    target = Path(directory)
    target.mkdir(parents=True, exist_ok=True)
    table = reports_table(reports)

    json_path = target / "report.json"
    document = {"reports": [r.to_dict(include_timings) for r in reports]}
    json_path.write_text(json.dumps(document, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    csv_path = target / "report.csv"
    table.to_csv(csv_path)
    txt_path = target / "report.txt"
    txt_path.write_text(table.to_string() + "\n", encoding="utf-8")

    logger.info(f"💾 Relatório salvo em {target}")
    return [json_path, csv_path, txt_path]


def check_thresholds(report: EvalReport, cfg: EvalConfig) -> List[str]:
    """Limites de aceitação configurados que não foram atingidos"""
    misses = []
    if cfg.min_average_f1 is not None and report.average_f1 < cfg.min_average_f1:
        misses.append(f"average_f1 {report.average_f1:.4f} < {cfg.min_average_f1}")
    if cfg.min_evidence_recall is not None and (report.evidence_recall or 0.0) < cfg.min_evidence_recall:
        misses.append(f"evidence_recall {report.evidence_recall} < {cfg.min_evidence_recall}")
    if cfg.max_mean_token_cost is not None and report.mean_token_cost > cfg.max_mean_token_cost:
        misses.append(f"mean_token_cost {report.mean_token_cost:.1f} > {cfg.max_mean_token_cost}")
    return misses
