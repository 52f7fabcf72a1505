import re
import threading
from dataclasses import dataclass, field
from enum import Enum
from itertools import combinations
from typing import Any, Dict, Iterable, List, Optional, Set, Tuple

import networkx as nx
from loguru import logger

from config.settings import RetrievalConfig
from memory.graph import GraphView
from memory.models import AtomicEntry, Edge, EdgeKind, union_in_order
from services.embedding_service import Embedder
from services.extraction_service import mentions
from services.index_service import MultiViewIndex
from utils.helpers import STOPWORDS, content_terms, singularize


class NodeRole(str, Enum):
    TERMINAL = "Terminal"
    BRIDGE = "Bridge"
    FAST_PATH = "FastPath"


@dataclass(frozen=True)
class EvidenceNode:
    entry: AtomicEntry
    role: NodeRole
    rank: Optional[int] = None


@dataclass(frozen=True)
class Path:
    nodes: Tuple[str, ...]

    @property
    def hops(self) -> int:
        return len(self.nodes) - 1

    def arrow(self) -> str:
        return " → ".join(self.nodes)


@dataclass
class EvidenceGraph:
    """Subgrafo de evidências de uma pergunta"""

    nodes: Dict[str, EvidenceNode] = field(default_factory=dict)
    edges: Dict[Tuple[str, str, str], Edge] = field(default_factory=dict)
    paths: List[Path] = field(default_factory=list)
    # ponte → pares (anterior, posterior) que ela liga
    bridges: Dict[str, List[Tuple[str, str]]] = field(default_factory=dict)
    latest: Dict[str, AtomicEntry] = field(default_factory=dict)
    annotations: Dict[str, Any] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.nodes)

    def __contains__(self, entry_id: object) -> bool:
        return entry_id in self.nodes

    def add_node(self, entry: AtomicEntry, role: NodeRole, rank: Optional[int] = None):
        if entry.id not in self.nodes:
            self.nodes[entry.id] = EvidenceNode(entry, role, rank)

    def add_edge(self, edge: Edge):
        if edge.src not in self.nodes or edge.dst not in self.nodes:
            raise KeyError(f"aresta com extremidade fora do grafo: {edge.key}")
        self.edges.setdefault(edge.key, edge)

    def entry(self, entry_id: str) -> AtomicEntry:
        return self.nodes[entry_id].entry

    def edge_list(self) -> List[Edge]:
        return [self.edges[k] for k in sorted(self.edges)]

    def ids_with_role(self, role: NodeRole) -> List[str]:
        return sorted(i for i, n in self.nodes.items() if n.role == role)

    def terminals(self) -> List[str]:
        ranked = [(n.rank, i) for i, n in self.nodes.items() if n.role == NodeRole.TERMINAL]
        return [i for _, i in sorted(ranked)]

    def adjacency(self) -> Dict[str, List[str]]:
        adjacency: Dict[str, Set[str]] = {i: set() for i in self.nodes}
        for src, dst, _ in self.edges:
            adjacency[src].add(dst)
        return {i: sorted(succ) for i, succ in adjacency.items()}

    def to_networkx(self) -> nx.DiGraph:
        graph = nx.DiGraph()
        graph.add_nodes_from(sorted(self.nodes))
        graph.add_edges_from((src, dst) for src, dst, _ in sorted(self.edges))
        return graph

    def component_map(self) -> Dict[str, int]:
        """Componentes fracamente conexos (direção ignorada)"""
        components = sorted(nx.weakly_connected_components(self.to_networkx()), key=min)
        return {node: n for n, members in enumerate(components) for node in members}

    def restrict(self, kept: Iterable[str]) -> "EvidenceGraph":
        keep = set(kept)
        bridges = {}
        for bridge, pairs in self.bridges.items():
            valid = [(a, b) for a, b in pairs if {bridge, a, b} <= keep]
            if valid:
                bridges[bridge] = valid
        return EvidenceGraph(
            nodes={i: n for i, n in self.nodes.items() if i in keep},
            edges={k: e for k, e in self.edges.items() if e.src in keep and e.dst in keep},
            paths=[p for p in self.paths if set(p.nodes) <= keep],
            bridges=bridges,
            latest={i: e for i, e in self.latest.items() if i in keep},
            annotations=dict(self.annotations),
        )


# =================== FAST PATHS ===================
_ATTRIBUTE_QUERY = re.compile(
    r"^\s*what(?:'s|\s+is|\s+was)\s+(?P<entity>.+?)'s\s+(?P<name>.+?)\s*\?*\s*$", re.IGNORECASE
)
_COUNT_QUERY = re.compile(
    r"^\s*how\s+many\s+(?P<term>[\w-]+(?:\s+[\w-]+)?)\s+(?:from|by|did|has|have|does|do)\s+(?P<person>\w+)",
    re.IGNORECASE,
)


class FastPathState:
    """Contadores (falante, termo) e tabela de atributos, mantidos a cada upsert"""

    def __init__(self):
        self._counters: Dict[Tuple[str, str], Dict[str, int]] = {}
        self._attributes: Dict[Tuple[str, str], Dict[str, Tuple[int, str]]] = {}
        self._lock = threading.Lock()

    @classmethod
    def from_view(cls, view: GraphView) -> "FastPathState":
        state = cls()
        for entry in view.ordered_entries():
            state.upsert(entry)
        return state

    def upsert(self, entry: AtomicEntry):
        with self._lock:
            if entry.speaker:
                speaker = entry.speaker.casefold()
                for keyword in entry.keywords:
                    key = (speaker, singularize(keyword))
                    self._counters.setdefault(key, {})[entry.id] = len(entry.source)
            for attribute in entry.record.get("attributes", []):
                key = (attribute["entity"].casefold(), attribute["name"].casefold())
                self._attributes.setdefault(key, {})[entry.id] = (entry.timestamp, attribute["value"])

    def count(self, speaker: str, term: str) -> Tuple[int, List[str]]:
        with self._lock:
            support = dict(self._counters.get((speaker.casefold(), singularize(term)), {}))
        return sum(support.values()), sorted(support)

    def attribute(self, entity: str, name: str) -> Optional[Tuple[str, str]]:
        """(valor, id) mais recente para (entidade, atributo)"""
        with self._lock:
            candidates = dict(self._attributes.get((entity.strip().casefold(), name.strip().casefold()), {}))
        if not candidates:
            return None
        entry_id, (_, value) = max(candidates.items(), key=lambda item: (item[1][0], item[0]))
        return value, entry_id


def fast_path(query: str, state: FastPathState, view: GraphView) -> Optional[EvidenceGraph]:
    """Responde padrões de contagem/atributo sem chamar o gerador"""
    match = _ATTRIBUTE_QUERY.match(query)
    if match:
        found = state.attribute(match["entity"], match["name"])
        if found and found[1] in view:
            value, entry_id = found
            graph = EvidenceGraph()
            graph.add_node(view.get(entry_id), NodeRole.FAST_PATH)
            graph.annotations.update({"fast_path": "attribute", "value": value})
            return graph

    match = _COUNT_QUERY.match(query)
    if match:
        term = match["term"].split()[-1]
        total, support = state.count(match["person"], term)
        support = [i for i in support if i in view]
        if total > 0 and support:
            graph = EvidenceGraph()
            for entry_id in support:
                graph.add_node(view.get(entry_id), NodeRole.FAST_PATH)
            graph.annotations.update({"fast_path": "count", "count": total, "value": str(total)})
            return graph
    return None


# =================== TERMINAIS ===================
def stale_ids(view: GraphView, index: MultiViewIndex) -> Set[str]:
    """Ids indexados depois do snapshot, invisíveis para esta consulta"""
    return set(index.ids()) - set(view.ids())


def query_entities(query: str, known: Iterable[str] = ()) -> Set[str]:
    """Palavras capitalizadas fora do início da frase + falantes conhecidos"""
    found = set()
    tokens = re.findall(r"[^\W\d_][\w'-]*", query)
    for position, token in enumerate(tokens):
        word = token[:-2] if token.endswith("'s") else token
        if position > 0 and word[:1].isupper() and word.lower() not in STOPWORDS:
            found.add(word.casefold())
    for name in known:
        if mentions(query, name):
            found.add(name.casefold())
    return found


def entity_alignment(entry: AtomicEntry, entities: Set[str]) -> bool:
    keys = entry.entity_keys()
    tokens = {t for key in keys for t in key.split()}
    return bool(entities & (keys | tokens))


def hybrid_retrieve(query: str, view: GraphView, index: MultiViewIndex, embedder: Embedder,
                    cfg: RetrievalConfig) -> List[Tuple[str, float]]:
    """União densa+lexical; sem alinhamento de entidade vem depois no empate"""
    if len(index) == 0:
        return []
    vector = embedder.embed(query)
    hidden = stale_ids(view, index)
    dense = [i for i, _ in index.top_k_dense(vector, cfg.k_sem, exclude=hidden)]
    lexical = [i for i, _ in index.top_k_lexical(content_terms(query), cfg.k_lex, exclude=hidden)]
    entities = query_entities(query, view.known_speakers())

    scored = []
    for entry_id in union_in_order(dense, lexical):
        entry = view.get(entry_id)
        score = float(entry.embedding @ vector)
        scored.append((-score, not entity_alignment(entry, entities), entry_id, score))
    scored.sort()
    return [(entry_id, score) for _, _, entry_id, score in scored]


# =================== GRAFO BASE ===================
def build_base_graph(terminals: List[AtomicEntry], view: GraphView, cfg: RetrievalConfig) -> EvidenceGraph:
    graph = EvidenceGraph()
    for rank, entry in enumerate(terminals, start=1):
        graph.add_node(entry, NodeRole.TERMINAL, rank)

    horizon = cfg.delta_time.total_seconds()
    ordered = sorted(terminals, key=lambda e: (e.timestamp, e.id))
    for position, earlier in enumerate(ordered):
        for later in ordered[position + 1:]:
            if earlier.entity_keys() & later.entity_keys():
                graph.add_edge(Edge(earlier.id, later.id, EdgeKind.ENTITY_SHARED, later.timestamp))
            if later.timestamp - earlier.timestamp < horizon:
                graph.add_edge(Edge(earlier.id, later.id, EdgeKind.TEMPORAL_PROXIMITY, later.timestamp))

    for entry_id in list(graph.nodes):
        for edge in view.out_edges(entry_id, EdgeKind.TEMPORAL_UPDATE):
            if edge.dst in graph.nodes:
                graph.add_edge(edge)
    return graph


# =================== PONTES ===================
def bridge_query_text(a: AtomicEntry, b: AtomicEntry) -> str:
    terms = a.entities | b.entities | a.keywords | b.keywords
    return " ".join(sorted(terms))


def discover_bridges(graph: EvidenceGraph, view: GraphView, index: MultiViewIndex, embedder: Embedder,
                     cfg: RetrievalConfig) -> EvidenceGraph:
    """Liga terminais desconectados por um nó intermediário no tempo"""
    if not cfg.bridges_enabled:
        return graph
    terminals = graph.ids_with_role(NodeRole.TERMINAL)
    excluded = set(terminals) | stale_ids(view, index)
    gap_min = cfg.bridge_gap_min.total_seconds()
    gap_max = cfg.bridge_gap_max.total_seconds()
    components = graph.component_map()

    for a_id, b_id in combinations(terminals, 2):
        if components[a_id] == components[b_id]:
            continue
        earlier, later = sorted((graph.entry(a_id), graph.entry(b_id)), key=lambda e: (e.timestamp, e.id))
        gap = later.timestamp - earlier.timestamp
        if gap < gap_min or gap > gap_max:
            continue
        vector = embedder.embed(bridge_query_text(earlier, later))
        hits = index.top_k_dense(vector, cfg.bridge_candidates, exclude=excluded)
        chosen = next(
            (i for i, _ in hits if earlier.timestamp <= view.get(i).timestamp <= later.timestamp),
            None,
        )
        if chosen is None:
            continue
        bridge = view.get(chosen)
        graph.add_node(bridge, NodeRole.BRIDGE)
        graph.add_edge(Edge(earlier.id, bridge.id, EdgeKind.BRIDGE, bridge.timestamp))
        graph.add_edge(Edge(bridge.id, later.id, EdgeKind.BRIDGE, later.timestamp))
        graph.bridges.setdefault(bridge.id, []).append((earlier.id, later.id))
        components = graph.component_map()
        logger.debug(f"Ponte {bridge.id} entre {earlier.id} e {later.id}")
    return graph


# =================== CAMINHOS ===================
def mine_paths(graph: EvidenceGraph, max_nodes: int) -> List[Path]:
    """DFS limitada: caminhos simples com 2..L nós e tempo não decrescente"""
    adjacency = graph.adjacency()
    found: List[Path] = []

    def walk(trail: List[str]):
        if len(trail) >= 2:
            found.append(Path(tuple(trail)))
        if len(trail) == max_nodes:
            return
        current = graph.entry(trail[-1]).timestamp
        for successor in adjacency[trail[-1]]:
            if successor in trail or graph.entry(successor).timestamp < current:
                continue
            trail.append(successor)
            walk(trail)
            trail.pop()

    for start in sorted(graph.nodes):
        walk([start])
    return sorted(found, key=lambda p: p.nodes)


def path_priority(path: Path, graph: EvidenceGraph) -> Tuple[int, int, Tuple[str, ...]]:
    """Mais saltos primeiro, depois menor intervalo de tempo, depois ids"""
    stamps = [graph.entry(i).timestamp for i in path.nodes]
    return (-path.hops, max(stamps) - min(stamps), path.nodes)


def _with_bridge_pairs(nodes: Iterable[str], graph: EvidenceGraph) -> List[str]:
    needed = list(nodes)
    for node in list(needed):
        pairs = graph.bridges.get(node)
        if pairs:
            needed.extend(pairs[0])
    return union_in_order(needed)


def _fallback_order(graph: EvidenceGraph) -> List[str]:
    order = graph.terminals()
    order += graph.ids_with_role(NodeRole.FAST_PATH)
    order += graph.ids_with_role(NodeRole.BRIDGE)
    return order


def enforce_budget(graph: EvidenceGraph, paths: List[Path], cfg: RetrievalConfig) -> Tuple[EvidenceGraph, List[Path]]:
    if len(graph) <= cfg.budget_max:
        return graph, paths

    kept: List[str] = []
    for path in sorted(paths, key=lambda p: path_priority(p, graph)):
        extra = [i for i in _with_bridge_pairs(path.nodes, graph) if i not in kept]
        if len(kept) + len(extra) > cfg.budget_max:
            break
        kept.extend(extra)

    for node in _fallback_order(graph):
        if len(kept) >= cfg.budget_min:
            break
        extra = [i for i in _with_bridge_pairs([node], graph) if i not in kept]
        if len(kept) + len(extra) <= cfg.budget_max:
            kept.extend(extra)

    restricted = graph.restrict(kept)
    retained = [p for p in paths if set(p.nodes) <= set(kept)]
    restricted.paths = retained
    logger.debug(f"Orçamento: {len(graph)} → {len(restricted)} nós, {len(paths)} → {len(retained)} caminhos")
    return restricted, retained


# =================== PIPELINE ===================
def retrieve_evidence(query: str, view: GraphView, index: MultiViewIndex, embedder: Embedder,
                      cfg: RetrievalConfig) -> EvidenceGraph:
    """Fase II até a entrega do contexto (sem geração)"""
    hits = hybrid_retrieve(query, view, index, embedder, cfg)
    if not hits:
        return EvidenceGraph()
    graph = build_base_graph([view.get(i) for i, _ in hits], view, cfg)
    graph = discover_bridges(graph, view, index, embedder, cfg)
    paths = mine_paths(graph, cfg.max_hops)
    graph, paths = enforce_budget(graph, paths, cfg)
    graph.paths = paths
    for entry_id in graph.nodes:
        latest = view.latest_state(entry_id)
        if latest.id != entry_id:
            graph.latest[entry_id] = latest
    logger.info(
        f"🔎 {len(graph.terminals())} terminais, {len(graph.bridges)} pontes, "
        f"{len(paths)} caminhos, {len(graph)} nós"
    )
    return graph
