import json
import threading
from dataclasses import replace
from pathlib import Path
from types import MappingProxyType
from typing import Any, Dict, Iterable, List, Mapping, Optional, Protocol, Set, Tuple, Union

import networkx as nx
import numpy as np
from loguru import logger

from memory.exceptions import (
    DuplicateEntryError,
    InvalidEntryError,
    MemoryGraphError,
    PersistenceError,
    SchemaVersionError,
    UnknownEntryError,
)
from memory.models import AtomicEntry, Edge, EdgeKind, union_in_order

SCHEMA_VERSION = "ariadne-mem/1"
NORM_TOLERANCE = 1e-6

EdgeMap = Dict[str, Dict[Tuple[str, EdgeKind], Edge]]


class GraphListener(Protocol):
    def upsert(self, entry: AtomicEntry) -> None: ...


def merge_records(old: Mapping[str, Any], new: Mapping[str, Any]) -> Dict[str, Any]:
    """Une listas e mantém o escalar mais antigo"""
    merged = dict(old)
    for key, value in new.items():
        if key not in merged or merged[key] in (None, "", [], {}):
            merged[key] = value
        elif isinstance(merged[key], list) and isinstance(value, list):
            merged[key] = union_in_order(merged[key], value)
    return merged


class GraphView:
    """Visão imutável do grafo em uma única revisão"""

    def __init__(
        self,
        entries: Dict[str, AtomicEntry],
        sequence: Dict[str, int],
        out_edges: Dict[str, Tuple[Edge, ...]],
        in_edges: Dict[str, Tuple[Edge, ...]],
        revision: int,
        dimension: Optional[int],
    ):
        self._entries = MappingProxyType(entries)
        self._sequence = MappingProxyType(sequence)
        self._out = MappingProxyType(out_edges)
        self._in = MappingProxyType(in_edges)
        self.revision = revision
        self.dimension = dimension

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, entry_id: object) -> bool:
        return entry_id in self._entries

    @property
    def entries(self) -> Mapping[str, AtomicEntry]:
        return self._entries

    def get(self, entry_id: str) -> AtomicEntry:
        try:
            return self._entries[entry_id]
        except KeyError:
            raise UnknownEntryError(f"entrada desconhecida: {entry_id}") from None

    def ids(self) -> List[str]:
        """Ids em ordem de inserção"""
        return sorted(self._entries, key=self._sequence.__getitem__)

    def ordered_entries(self) -> List[AtomicEntry]:
        return [self._entries[i] for i in self.ids()]

    def out_edges(self, entry_id: str, kind: Optional[EdgeKind] = None) -> List[Edge]:
        edges = self._out.get(entry_id, ())
        return [e for e in edges if kind is None or e.kind == kind]

    def in_edges(self, entry_id: str, kind: Optional[EdgeKind] = None) -> List[Edge]:
        edges = self._in.get(entry_id, ())
        return [e for e in edges if kind is None or e.kind == kind]

    def edges(self, kind: Optional[EdgeKind] = None) -> List[Edge]:
        found = [e for group in self._out.values() for e in group if kind is None or e.kind == kind]
        return sorted(found, key=lambda e: e.key)

    def edge_counts(self) -> Dict[str, int]:
        counts = {kind.value: 0 for kind in EdgeKind}
        for edge in self.edges():
            counts[edge.kind.value] += 1
        return counts

    def known_speakers(self) -> Set[str]:
        return {e.speaker for e in self._entries.values() if e.speaker}

    # =================== ESTADO MAIS RECENTE ===================
    def _next_state(self, entry_id: str) -> Optional[str]:
        successors = [e.dst for e in self.out_edges(entry_id, EdgeKind.TEMPORAL_UPDATE)]
        if not successors:
            return None
        return max(successors, key=lambda i: (self._entries[i].timestamp, self._sequence[i]))

    def latest_state(self, entry_id: str) -> AtomicEntry:
        """Segue as arestas TemporalUpdate até o estado mais novo"""
        current = self.get(entry_id).id
        visited = {current}
        while True:
            successor = self._next_state(current)
            if successor is None or successor in visited:
                return self._entries[current]
            visited.add(successor)
            current = successor

    def update_chains(self) -> List[List[str]]:
        """Cadeias maximais de atualizações de estado"""
        chains = []
        for entry_id in self.ids():
            if self.in_edges(entry_id, EdgeKind.TEMPORAL_UPDATE):
                continue
            if not self.out_edges(entry_id, EdgeKind.TEMPORAL_UPDATE):
                continue
            chain = [entry_id]
            successor = self._next_state(entry_id)
            while successor is not None and successor not in chain:
                chain.append(successor)
                successor = self._next_state(successor)
            chains.append(chain)
        return chains

    def structurally_equal(self, other: "GraphView") -> bool:
        if set(self._entries) != set(other._entries):
            return False
        if any(not e.same_as(other._entries[i]) for i, e in self._entries.items()):
            return False
        return self.edges() == other.edges()

    def to_networkx(self) -> nx.MultiDiGraph:
        graph = nx.MultiDiGraph()
        for entry in self.ordered_entries():
            graph.add_node(
                entry.id,
                statement=entry.statement,
                timestamp=entry.timestamp,
                keywords=" ".join(sorted(entry.keywords)),
                entities=" ".join(sorted(entry.entities)),
            )
        for edge in self.edges():
            graph.add_edge(edge.src, edge.dst, key=edge.kind.value, kind=edge.kind.value,
                           created_at=edge.created_at)
        return graph


class MemoryGraph:
    """Armazém canônico de fatos atômicos e arestas tipadas (escritor único)"""

    def __init__(self, dimension: Optional[int] = None):
        self.dimension = dimension
        self.revision = 0
        self._entries: Dict[str, AtomicEntry] = {}
        self._sequence: Dict[str, int] = {}
        self._out: EdgeMap = {}
        self._in: EdgeMap = {}
        self._next_seq = 0
        self._listeners: List[GraphListener] = []
        self._lock = threading.RLock()

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, entry_id: object) -> bool:
        return entry_id in self._entries

    def add_listener(self, listener: GraphListener):
        """Registra quem precisa ser avisado a cada upsert (índices, fast path)"""
        self._listeners.append(listener)

    def get(self, entry_id: str) -> AtomicEntry:
        with self._lock:
            if entry_id not in self._entries:
                raise UnknownEntryError(f"entrada desconhecida: {entry_id}")
            return self._entries[entry_id]

    # =================== VALIDAÇÃO ===================
    def _validate(self, entry: AtomicEntry):
        if not entry.statement.strip():
            raise InvalidEntryError("statement vazio")
        vector = entry.embedding
        if vector.ndim != 1 or vector.size == 0:
            raise InvalidEntryError(f"embedding com formato inválido: {vector.shape}")
        if self.dimension is not None and vector.size != self.dimension:
            raise InvalidEntryError(f"dimensão {vector.size} diferente de {self.dimension}")
        if not np.all(np.isfinite(vector)):
            raise InvalidEntryError("embedding com valores não finitos")
        norm = float(np.linalg.norm(vector))
        if abs(norm - 1.0) > NORM_TOLERANCE:
            raise InvalidEntryError(f"embedding sem norma unitária (norma={norm:.6f})")
        if any(not k for k in entry.keywords) or any(not e for e in entry.entities):
            raise InvalidEntryError("keywords/entities não podem conter strings vazias")

    def _allocate_id(self) -> str:
        while True:
            candidate = f"m{self._next_seq + 1:06d}"
            if candidate not in self._entries:
                return candidate
            self._next_seq += 1

    def _store(self, entry: AtomicEntry) -> AtomicEntry:
        self._validate(entry)
        if not entry.id:
            entry = replace(entry, id=self._allocate_id())
        if entry.id in self._entries:
            raise DuplicateEntryError(f"id duplicado: {entry.id}")
        if self.dimension is None:
            self.dimension = entry.embedding.size
        self._entries[entry.id] = entry
        self._sequence[entry.id] = self._next_seq
        self._next_seq += 1
        return entry

    def _put_edge(self, edge: Edge):
        if edge.src == edge.dst:
            raise InvalidEntryError(f"aresta em laço: {edge.src}")
        for endpoint in (edge.src, edge.dst):
            if endpoint not in self._entries:
                raise UnknownEntryError(f"entrada desconhecida: {endpoint}")
        self._out.setdefault(edge.src, {})[(edge.dst, edge.kind)] = edge
        self._in.setdefault(edge.dst, {})[(edge.src, edge.kind)] = edge

    def _notify(self, entry: AtomicEntry):
        for listener in self._listeners:
            listener.upsert(entry)

    # =================== MUTAÇÕES ===================
    def add_entry(self, entry: AtomicEntry) -> str:
        """Insere um fato novo e isolado"""
        with self._lock:
            stored = self._store(entry)
            self.revision += 1
            self._notify(stored)
            return stored.id

    def merge_entry(self, existing_id: str, new_entry: AtomicEntry):
        """Descarta a duplicata, avança o timestamp e acumula proveniência"""
        with self._lock:
            existing = self.get(existing_id)
            timestamp = max(existing.timestamp, new_entry.timestamp)
            # não ultrapassa o estado seguinte: old → new continua crescente no tempo
            successors = [self._entries[e.dst].timestamp for e in self._out.get(existing_id, {}).values()
                          if e.kind == EdgeKind.TEMPORAL_UPDATE]
            if successors:
                timestamp = min(timestamp, min(successors))
            merged = AtomicEntry(
                id=existing.id,
                statement=existing.statement,
                embedding=existing.embedding,
                timestamp=timestamp,
                keywords=existing.keywords | new_entry.keywords,
                entities=existing.entities | new_entry.entities,
                record=merge_records(existing.record, new_entry.record),
                source=tuple(union_in_order(existing.source, new_entry.source)),
            )
            self._entries[existing_id] = merged
            self.revision += 1
            self._notify(merged)

    def link_entries(self, old_id: str, new_entry: AtomicEntry) -> str:
        """Guarda o novo estado e liga old → new com uma aresta TemporalUpdate"""
        with self._lock:
            old = self.get(old_id)
            stored = self._store(new_entry)
            # empate de timestamp: ordem de inserção (o antigo vem primeiro)
            if stored.timestamp < old.timestamp:
                src, dst = stored.id, old.id
                logger.warning(f"⚠️ Atualização anterior ao estado ligado: {stored.id} → {old.id}")
            else:
                src, dst = old.id, stored.id
            created = max(old.timestamp, stored.timestamp)
            self._put_edge(Edge(src, dst, EdgeKind.TEMPORAL_UPDATE, created))
            self.revision += 1
            self._notify(stored)
            return stored.id

    def add_edge(self, edge: Edge):
        with self._lock:
            self._put_edge(edge)
            self.revision += 1

    # =================== LEITURA ===================
    def snapshot(self) -> GraphView:
        with self._lock:
            return GraphView(
                entries=dict(self._entries),
                sequence=dict(self._sequence),
                out_edges={k: tuple(v.values()) for k, v in self._out.items()},
                in_edges={k: tuple(v.values()) for k, v in self._in.items()},
                revision=self.revision,
                dimension=self.dimension,
            )

    # =================== PERSISTÊNCIA ===================
    def save(self, path: Union[str, Path]):
        """Grava em JSON Lines com cabeçalho de versão"""
        view = self.snapshot()
        target = Path(path)
        target.parent.mkdir(parents=True, exist_ok=True)
        lines = [json.dumps({"schema": SCHEMA_VERSION})]
        lines += [json.dumps(e.to_record(), sort_keys=True, ensure_ascii=False) for e in view.ordered_entries()]
        lines += [json.dumps(e.to_record(), sort_keys=True) for e in view.edges()]
        try:
            target.write_text("\n".join(lines) + "\n", encoding="utf-8")
        except OSError as e:
            raise PersistenceError(f"não foi possível gravar {target}: {e}") from e
        logger.info(f"💾 Memória salva: {len(view)} entradas, {len(view.edges())} arestas → {target}")

    @classmethod
    def load(cls, path: Union[str, Path], dimension: Optional[int] = None) -> "MemoryGraph":
        source = Path(path)
        try:
            lines = source.read_text(encoding="utf-8").splitlines()
        except OSError as e:
            raise PersistenceError(f"não foi possível ler {source}: {e}") from e
        graph = cls(dimension)
        records = list(_parse_lines(lines))
        if not records:
            raise PersistenceError("arquivo vazio, cabeçalho ausente", line=1)
        line_no, header = records[0]
        if header.get("schema") != SCHEMA_VERSION:
            raise SchemaVersionError(f"schema {header.get('schema')!r}, esperado {SCHEMA_VERSION!r}", line=line_no)
        for line_no, record in records[1:]:
            try:
                kind = record.get("type")
                if kind == "entry":
                    graph.add_entry(AtomicEntry.from_record(record))
                elif kind == "edge":
                    graph.add_edge(Edge(record["src"], record["dst"], EdgeKind(record["kind"]),
                                        int(record.get("created_at", 0))))
                else:
                    raise PersistenceError(f"tipo de registro desconhecido: {kind!r}", line=line_no)
            except PersistenceError:
                raise
            except (KeyError, TypeError, ValueError, MemoryGraphError) as e:
                raise PersistenceError(f"registro inválido: {e}", line=line_no) from e
        logger.info(f"📂 Memória carregada: {len(graph)} entradas de {source}")
        return graph


def _parse_lines(lines: Iterable[str]):
    for number, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as e:
            raise PersistenceError(f"JSON inválido: {e.msg}", line=number) from e
        if not isinstance(record, dict):
            raise PersistenceError("registro não é um objeto", line=number)
        yield number, record
