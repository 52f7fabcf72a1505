from pathlib import Path
from typing import Iterable, Optional

import numpy as np
import pytest

from agents.memory_agent import MemoryAgent
from config.settings import Settings, load_settings
from memory.models import AtomicEntry, DialogueItem
from services.embedding_service import HashingEmbedder
from services.extraction_service import build_entry
from utils.helpers import parse_timestamp

DATA_DIR = Path(__file__).resolve().parent.parent / "data"

T0 = parse_timestamp("2023-05-01T09:00:00Z")
HOUR = 3600


@pytest.fixture
def data_dir() -> Path:
    return DATA_DIR


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20230501)


@pytest.fixture
def embedder() -> HashingEmbedder:
    return HashingEmbedder(256)


@pytest.fixture
def cfg(tmp_path) -> Settings:
    return load_settings(overrides={
        "memory_path": str(tmp_path / "memory.jsonl"),
        "report_dir": str(tmp_path / "reports"),
        "database_url": f"sqlite:///{tmp_path / 'runs.db'}",
    })


@pytest.fixture
def agent(cfg) -> MemoryAgent:
    return MemoryAgent(cfg)


@pytest.fixture
def make_entry(embedder):
    """Fábrica de fatos já normalizados"""

    def factory(
        statement: str,
        timestamp: int = T0,
        keywords: Optional[Iterable[str]] = None,
        entities: Iterable[str] = (),
        speaker: Optional[str] = None,
        source=(("session_1", 0),),
        entry_id: str = "",
    ) -> AtomicEntry:
        record = {"speaker": speaker} if speaker else {}
        entry = build_entry(
            embedder,
            statement,
            timestamp,
            keywords if keywords is not None else statement.lower().split(),
            entities,
            record,
            source,
        )
        if entry_id:
            entry = AtomicEntry(
                statement=entry.statement, embedding=entry.embedding, timestamp=entry.timestamp,
                keywords=entry.keywords, entities=entry.entities, record=entry.record,
                source=entry.source, id=entry_id,
            )
        return entry

    return factory


@pytest.fixture
def make_turn():
    def factory(speaker: str, text: str, timestamp: int = T0, session_id: str = "session_1",
                turn_index: int = 0) -> DialogueItem:
        return DialogueItem(speaker=speaker, text=text, timestamp=timestamp,
                            session_id=session_id, turn_index=turn_index)

    return factory
