from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, FrozenSet, Iterable, Mapping, Optional, Set, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from utils.helpers import parse_timestamp


class EdgeKind(str, Enum):
    TEMPORAL_UPDATE = "TemporalUpdate"
    ENTITY_SHARED = "EntityShared"
    TEMPORAL_PROXIMITY = "TemporalProximity"
    BRIDGE = "Bridge"


class DialogueItem(BaseModel):
    """Uma fala do diálogo com horário em segundos UTC"""

    model_config = ConfigDict(frozen=True)

    speaker: str = Field(min_length=1)
    text: str
    timestamp: int
    session_id: str = Field(min_length=1)
    turn_index: int = Field(ge=0)

    @field_validator("text")
    @classmethod
    def _text_not_blank(cls, value: str) -> str:
        if not value.strip():
            raise ValueError("texto vazio")
        return value

    @field_validator("timestamp", mode="before")
    @classmethod
    def _parse_timestamp(cls, value: Any) -> int:
        return parse_timestamp(value)

    @property
    def ref(self) -> str:
        return source_ref(self.session_id, self.turn_index)


def source_ref(session_id: str, turn_index: int) -> str:
    """Identificador textual de uma fala (sessão:turno)"""
    return f"{session_id}:{turn_index}"


@dataclass(frozen=True, eq=False)
class AtomicEntry:
    """Fato atômico, autocontido e datado"""

    statement: str
    embedding: np.ndarray
    timestamp: int
    keywords: FrozenSet[str] = frozenset()
    entities: FrozenSet[str] = frozenset()
    record: Mapping[str, Any] = field(default_factory=dict)
    source: Tuple[Tuple[str, int], ...] = ()
    id: str = ""

    def __post_init__(self):
        vector = np.array(self.embedding, dtype=np.float64)
        vector.flags.writeable = False
        object.__setattr__(self, "embedding", vector)
        object.__setattr__(self, "timestamp", int(self.timestamp))
        object.__setattr__(self, "keywords", frozenset(k.lower() for k in self.keywords))
        object.__setattr__(self, "entities", frozenset(self.entities))
        object.__setattr__(self, "record", dict(self.record))
        object.__setattr__(self, "source", tuple((str(s), int(t)) for s, t in self.source))

    @property
    def source_refs(self) -> Set[str]:
        return {source_ref(s, t) for s, t in self.source}

    @property
    def speaker(self) -> Optional[str]:
        return self.record.get("speaker")

    def entity_keys(self) -> Set[str]:
        return {e.casefold() for e in self.entities}

    def same_as(self, other: "AtomicEntry") -> bool:
        """Igualdade estrutural (embeddings comparados bit a bit)"""
        return (
            self.id == other.id
            and self.statement == other.statement
            and self.timestamp == other.timestamp
            and self.keywords == other.keywords
            and self.entities == other.entities
            and self.record == other.record
            and self.source == other.source
            and np.array_equal(self.embedding, other.embedding)
        )

    def to_record(self) -> Dict[str, Any]:
        return {
            "type": "entry",
            "id": self.id,
            "statement": self.statement,
            "keywords": sorted(self.keywords),
            "entities": sorted(self.entities),
            "record": dict(self.record),
            "embedding": [float(x) for x in self.embedding],
            "timestamp": self.timestamp,
            "source": [[s, t] for s, t in self.source],
        }

    @classmethod
    def from_record(cls, data: Mapping[str, Any]) -> "AtomicEntry":
        return cls(
            id=data["id"],
            statement=data["statement"],
            keywords=frozenset(data.get("keywords", [])),
            entities=frozenset(data.get("entities", [])),
            record=data.get("record", {}),
            embedding=np.asarray(data["embedding"], dtype=np.float64),
            timestamp=data["timestamp"],
            source=tuple(tuple(pair) for pair in data.get("source", [])),
        )


@dataclass(frozen=True)
class Edge:
    src: str
    dst: str
    kind: EdgeKind
    created_at: int = 0

    @property
    def key(self) -> Tuple[str, str, str]:
        return (self.src, self.dst, self.kind.value)

    def to_record(self) -> Dict[str, Any]:
        return {
            "type": "edge",
            "src": self.src,
            "dst": self.dst,
            "kind": self.kind.value,
            "created_at": self.created_at,
        }


def union_in_order(*groups: Iterable[Any]) -> list:
    seen = []
    for group in groups:
        for item in group:
            if item not in seen:
                seen.append(item)
    return seen
