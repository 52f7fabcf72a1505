import time
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Iterable, List, Optional, Sequence

from loguru import logger

from config.settings import CoarsenConfig, GateConfig, Settings
from memory.graph import GraphView, MemoryGraph
from memory.models import AtomicEntry, DialogueItem
from services.embedding_service import Embedder, cosine
from services.extraction_service import ExtractionError, Extractor
from services.index_service import MultiViewIndex


# =================== GATING ===================
@dataclass(frozen=True)
class GateDecision:
    passed: bool
    reason: str = ""
    similarity: Optional[float] = None
    gap_seconds: Optional[int] = None
    neighbor_id: Optional[str] = None


def gate(item: DialogueItem, view: GraphView, index: MultiViewIndex, embedder: Embedder,
         cfg: GateConfig) -> GateDecision:
    """Bloqueia repetição de curto prazo e deixa passar a recorrência de longo prazo"""
    if len(view) == 0 or len(index) == 0:
        return GateDecision(True, "memória vazia")
    vector = embedder.embed(item.text)
    hits = index.top_k_dense(vector, 1, exclude=set(index.ids()) - set(view.ids()))
    if not hits:
        return GateDecision(True, "memória vazia")
    neighbor_id, similarity = hits[0]
    gap = abs(item.timestamp - view.get(neighbor_id).timestamp)
    horizon = cfg.delta_short.total_seconds()
    if similarity > cfg.lambda_red and gap < horizon:
        reason = f"redundante com {neighbor_id} (r={similarity:.3f}, Δt={gap}s)"
        return GateDecision(False, reason, similarity, gap, neighbor_id)
    return GateDecision(True, "", similarity, gap, neighbor_id)


# =================== JANELA ===================
@dataclass
class SlidingWindow:
    capacity: int = 20
    items: List[DialogueItem] = field(default_factory=list)

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError("capacidade da janela deve ser >= 1")

    def __len__(self) -> int:
        return len(self.items)


def push(item: DialogueItem, window: SlidingWindow) -> Optional[List[DialogueItem]]:
    """Acrescenta a fala; devolve a janela cheia e esvazia o buffer"""
    window.items.append(item)
    if len(window.items) >= window.capacity:
        return flush(window)
    return None


def flush(window: SlidingWindow) -> Optional[List[DialogueItem]]:
    if not window.items:
        return None
    full, window.items = window.items, []
    return full


# =================== EXTRAÇÃO ===================
def extract(window: Sequence[DialogueItem], extractor: Extractor, retries: int = 1) -> Optional[List[AtomicEntry]]:
    """Chama o extrator; após esgotar as tentativas a janela é descartada (None)"""
    if not window:
        raise ValueError("janela vazia")
    first, last = window[0].ref, window[-1].ref
    for attempt in range(retries + 1):
        try:
            return extractor.extract(window)
        except ExtractionError as e:
            if attempt < retries:
                logger.warning(f"⚠️ Extração falhou ({first}..{last}), nova tentativa: {e}")
            else:
                logger.error(f"❌ Janela {first}..{last} descartada após {attempt + 1} tentativas: {e}")
    return None


# =================== COARSENING ===================
class ActionKind(str, Enum):
    MERGE = "Merge"
    LINK = "Link"
    ADD = "Add"


@dataclass(frozen=True)
class CoarsenAction:
    kind: ActionKind
    existing_id: Optional[str] = None
    similarity: Optional[float] = None
    overlap: Optional[float] = None


def keyword_overlap(candidate: AtomicEntry, existing: AtomicEntry) -> float:
    """|K_cand ∩ K_exist| / max(1, |K_cand|), normalizada pelo candidato"""
    return len(candidate.keywords & existing.keywords) / max(1, len(candidate.keywords))


def decide_action(similarity: float, overlap: float, cfg: CoarsenConfig) -> ActionKind:
    if similarity > cfg.lambda_coal:
        return ActionKind.MERGE if overlap > cfg.lambda_ovlp else ActionKind.LINK
    return ActionKind.ADD


def classify(candidate: AtomicEntry, existing: AtomicEntry, cfg: CoarsenConfig) -> CoarsenAction:
    similarity = cosine(candidate.embedding, existing.embedding)
    overlap = keyword_overlap(candidate, existing)
    kind = decide_action(similarity, overlap, cfg)
    existing_id = existing.id if kind != ActionKind.ADD else None
    return CoarsenAction(kind, existing_id, similarity, overlap)


@dataclass
class IngestionReport:
    items: int = 0
    gated_out: int = 0
    windows: int = 0
    skipped_windows: int = 0
    extracted: int = 0
    merged: int = 0
    linked: int = 0
    added: int = 0
    construction_seconds: float = 0.0

    def count(self, action: CoarsenAction):
        if action.kind == ActionKind.MERGE:
            self.merged += 1
        elif action.kind == ActionKind.LINK:
            self.linked += 1
        else:
            self.added += 1

    def absorb(self, other: "IngestionReport"):
        for name, value in asdict(other).items():
            setattr(self, name, getattr(self, name) + value)

    def summary(self) -> str:
        return (
            f"gated_out={self.gated_out} extracted={self.extracted} merged={self.merged} "
            f"linked={self.linked} added={self.added} construction={self.construction_seconds:.3f}s"
        )


def coarsen(candidates: Iterable[AtomicEntry], graph: MemoryGraph, index: MultiViewIndex,
            cfg: CoarsenConfig, report: Optional[IngestionReport] = None) -> IngestionReport:
    """Compara cada candidato com o vizinho mais próximo e aplica Merge/Link/Add"""
    if report is None:
        report = IngestionReport()
    for candidate in candidates:
        action = CoarsenAction(ActionKind.ADD)
        if cfg.enabled and len(index) > 0:
            neighbor_id, _ = index.top_k_dense(candidate.embedding, 1)[0]
            action = classify(candidate, graph.get(neighbor_id), cfg)

        if action.kind == ActionKind.MERGE:
            graph.merge_entry(action.existing_id, candidate)
            target = action.existing_id
        elif action.kind == ActionKind.LINK:
            target = graph.link_entries(action.existing_id, candidate)
        else:
            target = graph.add_entry(candidate)
        report.count(action)
        logger.debug(f"{action.kind.value} {target}: {candidate.statement[:60]}")
    return report


# =================== PIPELINE ===================
class IngestionPipeline:
    """Fase I: gating → janela → extração → coarsening (escritor único)"""

    def __init__(self, graph: MemoryGraph, index: MultiViewIndex, embedder: Embedder,
                 extractor: Extractor, cfg: Settings):
        self.graph = graph
        self.index = index
        self.embedder = embedder
        self.extractor = extractor
        self.cfg = cfg
        self.window = SlidingWindow(cfg.ingestion.window_size)
        self.decisions: List[GateDecision] = []

    def _process(self, window: List[DialogueItem], report: IngestionReport):
        report.windows += 1
        candidates = extract(window, self.extractor, self.cfg.ingestion.extract_retries)
        if candidates is None:
            report.skipped_windows += 1
            return
        report.extracted += len(candidates)
        coarsen(candidates, self.graph, self.index, self.cfg.coarsen, report)
        logger.info(f"🧠 Janela {window[0].ref}..{window[-1].ref}: {len(candidates)} fatos, memória com {len(self.graph)}")

    def ingest(self, items: Iterable[DialogueItem], flush_at_end: bool = True) -> IngestionReport:
        report = IngestionReport()
        started = time.perf_counter()
        # o grafo só muda em _process
        view = self.graph.snapshot()
        for item in items:
            report.items += 1
            if self.cfg.gate.enabled:
                decision = gate(item, view, self.index, self.embedder, self.cfg.gate)
            else:
                decision = GateDecision(True, "gating desligado")
            self.decisions.append(decision)
            if not decision.passed:
                report.gated_out += 1
                logger.debug(f"Fala {item.ref} bloqueada: {decision.reason}")
                continue
            full = push(item, self.window)
            if full:
                self._process(full, report)
                view = self.graph.snapshot()
        if flush_at_end:
            rest = flush(self.window)
            if rest:
                self._process(rest, report)
        report.construction_seconds = time.perf_counter() - started
        logger.info(f"✅ Ingestão concluída: {report.summary()}")
        return report
