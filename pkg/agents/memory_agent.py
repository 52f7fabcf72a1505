import copy
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Mapping, Optional, Union

from loguru import logger

from agents.ingestion_agent import IngestionPipeline, IngestionReport
from agents.retrieval_agent import EvidenceGraph, FastPathState, NodeRole, fast_path, retrieve_evidence
from agents.synthesis_agent import (
    SerializedContext,
    SynthesisResult,
    classify_query_kind,
    serialize,
    synthesize,
)
from config.settings import Settings
from memory.graph import GraphView, MemoryGraph
from memory.models import DialogueItem
from services.embedding_service import Embedder, build_embedder
from services.extraction_service import Extractor, build_extractor
from services.index_service import MultiViewIndex
from services.llm_service import ABSTAIN, Generator, build_generator


@dataclass
class QueryResult:
    question: str
    answer: str
    graph: EvidenceGraph
    context: Optional[SerializedContext] = None
    synthesis: Optional[SynthesisResult] = None
    fast_path: Optional[str] = None
    generator_calls: int = 0
    retrieval_seconds: float = 0.0
    synthesis_seconds: float = 0.0
    error: Optional[str] = None

    @property
    def token_count(self) -> int:
        return self.context.token_count if self.context else 0

    @property
    def parse_warning(self) -> bool:
        return bool(self.synthesis and self.synthesis.parse_warning)

    def trace_lines(self) -> List[str]:
        """Rastro estável, uma informação por linha"""
        graph = self.graph
        lines = [
            f"question: {self.question}",
            f"fast_path: {self.fast_path or 'miss'}",
            f"terminals: {' '.join(graph.terminals())}",
        ]
        bridges = [f"{b}({a}→{c})" for b in sorted(graph.bridges) for a, c in graph.bridges[b]]
        lines.append(f"bridges: {' '.join(bridges)}")
        if self.fast_path:
            lines.append(f"fast_path_nodes: {' '.join(graph.ids_with_role(NodeRole.FAST_PATH))}")
        lines.append(f"paths: {len(graph.paths)}")
        lines += [f"  {path.arrow()}" for path in graph.paths]
        lines.append(f"tokens: {self.token_count}")
        lines.append(f"retrieval_ms: {self.retrieval_seconds * 1000:.1f}")
        lines.append("context:")
        if self.context:
            lines += [f"  {line}" for line in self.context.text.splitlines()]
        lines.append(f"answer: {self.answer}")
        if self.parse_warning:
            lines.append("warning: resposta fora do formato JSON")
        return lines


class MemoryAgent:
    """Fachada das duas fases: memória assíncrona e raciocínio estrutural"""

    def __init__(
        self,
        cfg: Settings,
        graph: Optional[MemoryGraph] = None,
        embedder: Optional[Embedder] = None,
        extractor: Optional[Extractor] = None,
        generator: Optional[Generator] = None,
        answers: Optional[Mapping[str, str]] = None,
    ):
        self.cfg = cfg
        self.embedder = build_embedder(cfg.embedder) if embedder is None else embedder
        self.graph = MemoryGraph(self.embedder.dimension) if graph is None else graph
        self.extractor = build_extractor(cfg.extractor, self.embedder) if extractor is None else extractor
        self.generator = build_generator(cfg.generator, answers) if generator is None else generator

        view = self.graph.snapshot()
        self.index = MultiViewIndex.from_view(view)
        self.fast_state = FastPathState.from_view(view)
        self.graph.add_listener(self.index)
        self.graph.add_listener(self.fast_state)
        self.pipeline = IngestionPipeline(self.graph, self.index, self.embedder, self.extractor, cfg)

    # =================== PERSISTÊNCIA ===================
    @classmethod
    def open(cls, cfg: Settings, path: Union[str, Path], **providers) -> "MemoryAgent":
        """Carrega a memória do disco (ou começa vazia se o arquivo não existir)"""
        source = Path(path)
        graph = MemoryGraph.load(source, cfg.embedder.dimension) if source.exists() else None
        if graph is None:
            logger.info(f"📂 {source} não existe, memória nova")
        return cls(cfg, graph=graph, **providers)

    def save(self, path: Union[str, Path]):
        self.graph.save(path)

    def with_settings(self, cfg: Settings) -> "MemoryAgent":
        """Mesma memória e provedores, configuração de consulta diferente"""
        agent = copy.copy(self)
        agent.cfg = cfg
        return agent

    # =================== FASE I ===================
    def ingest(self, items: Iterable[DialogueItem]) -> IngestionReport:
        return self.pipeline.ingest(items)

    # =================== FASE II ===================
    def snapshot(self) -> GraphView:
        return self.graph.snapshot()

    def retrieve(self, question: str, view: Optional[GraphView] = None) -> QueryResult:
        """Tudo até a entrega do contexto (sem a chamada ao gerador)"""
        if view is None:
            view = self.snapshot()
        started = time.perf_counter()
        hit = fast_path(question, self.fast_state, view)
        if hit is not None:
            return QueryResult(
                question=question,
                answer=hit.annotations["value"],
                graph=hit,
                fast_path=hit.annotations["fast_path"],
                retrieval_seconds=time.perf_counter() - started,
            )

        graph = retrieve_evidence(question, view, self.index, self.embedder, self.cfg.retrieval)
        synthesis_cfg = self.cfg.synthesis
        context = serialize(
            graph,
            classify_query_kind(question),
            synthesis_cfg.max_path_lines,
            synthesis_cfg.topology_enabled,
            synthesis_cfg.tokenizer,
        )
        return QueryResult(
            question=question,
            answer="",
            graph=graph,
            context=context,
            retrieval_seconds=time.perf_counter() - started,
        )

    def answer(self, question: str, view: Optional[GraphView] = None) -> QueryResult:
        result = self.retrieve(question, view)
        if result.fast_path:
            logger.info(f"⚡ Fast path ({result.fast_path}): {question}")
            return result
        if not result.context.facts:
            logger.info(f"🔎 Sem evidências para: {question}")
        synthesis = synthesize(question, result.context, self.generator, self.cfg.synthesis.retries)
        result.synthesis = synthesis
        result.answer = synthesis.answer or ABSTAIN
        result.generator_calls = synthesis.attempts
        result.synthesis_seconds = synthesis.latency
        return result
