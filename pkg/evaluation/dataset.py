import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Union

from pydantic import BaseModel, Field, ValidationError, field_validator

from memory.models import DialogueItem
from memory.stream import (
    DEFAULT_CONVERSATION,
    Session,
    SessionBuilder,
    StreamError,
    describe_errors,
    flatten,
    is_session_header,
    read_json_lines,
)
from utils.helpers import iso_date, iso_datetime


class DatasetError(StreamError):
    """Todos os problemas de esquema do arquivo, com localização"""


class Category(str, Enum):
    MULTI_HOP = "MultiHop"
    TEMPORAL = "Temporal"
    OPEN_DOMAIN = "OpenDomain"
    SINGLE_HOP = "SingleHop"


# Numeração das categorias no LoCoMo
LOCOMO_CATEGORIES = {
    1: Category.MULTI_HOP,
    2: Category.TEMPORAL,
    3: Category.OPEN_DOMAIN,
    4: Category.SINGLE_HOP,
}


class QAItem(BaseModel):
    question: str = Field(min_length=1)
    answer: str
    category: Category
    evidence: List[str] = []
    conversation_id: str = DEFAULT_CONVERSATION

    @field_validator("answer", mode="before")
    @classmethod
    def _answer_as_text(cls, value: Any) -> Any:
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return str(value)
        return value

    @field_validator("category", mode="before")
    @classmethod
    def _locomo_category(cls, value: Any) -> Any:
        if isinstance(value, int) and not isinstance(value, bool):
            if value not in LOCOMO_CATEGORIES:
                raise ValueError(f"categoria LoCoMo desconhecida: {value}")
            return LOCOMO_CATEGORIES[value]
        return value


@dataclass
class Dataset:
    sessions: List[Session] = field(default_factory=list)
    qa: List[QAItem] = field(default_factory=list)

    def conversation_ids(self) -> List[str]:
        return list(dict.fromkeys(s.conversation_id for s in self.sessions))

    def items(self, conversation_id: str) -> List[DialogueItem]:
        return flatten(s for s in self.sessions if s.conversation_id == conversation_id)

    def all_items(self) -> List[DialogueItem]:
        return flatten(self.sessions)

    def questions(self, conversation_id: str) -> List[QAItem]:
        return [q for q in self.qa if q.conversation_id == conversation_id]

    def to_document(self) -> Dict[str, Any]:
        sessions = [
            {
                "session_id": s.session_id,
                "conversation_id": s.conversation_id,
                "date": iso_date(s.date),
                "turns": [
                    {"speaker": i.speaker, "text": i.text, "timestamp": iso_datetime(i.timestamp)}
                    for i in s.items
                ],
            }
            for s in self.sessions
        ]
        return {"sessions": sessions, "qa": [q.model_dump(mode="json") for q in self.qa]}


def write_dataset(dataset: Dataset, path: Union[str, Path]):
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(json.dumps(dataset.to_document(), indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def _qa_item(data: Dict[str, Any], where: str, issues: List[str]):
    payload = {k: v for k, v in data.items() if k != "type"}
    try:
        return QAItem.model_validate(payload)
    except ValidationError as e:
        question = payload.get("question", "?")
        issues.append(f"{where} ({question!r}): {describe_errors(e)}")
        return None


def _from_document(document: Dict[str, Any]) -> Dataset:
    builder = SessionBuilder()
    issues: List[str] = builder.issues
    sessions = document.get("sessions")
    if not isinstance(sessions, list):
        issues.append("sessions: lista obrigatória")
        sessions = []
    for n, raw in enumerate(sessions):
        where = f"sessions[{n}]"
        if not isinstance(raw, dict):
            issues.append(f"{where}: sessão deve ser um objeto")
            continue
        builder.header({k: v for k, v in raw.items() if k != "turns"}, where)
        session_id = raw.get("session_id")
        if session_id not in builder.sessions:
            continue
        for t, turn in enumerate(raw.get("turns") or []):
            if not isinstance(turn, dict):
                issues.append(f"{where}.turns[{t}]: fala deve ser um objeto")
                continue
            builder.turn(turn, f"{where}.turns[{t}]", session_id=session_id)

    qa = []
    for n, raw in enumerate(document.get("qa") or []):
        if not isinstance(raw, dict):
            issues.append(f"qa[{n}]: item deve ser um objeto")
            continue
        item = _qa_item(raw, f"qa[{n}]", issues)
        if item is not None:
            qa.append(item)
    return _validated(Dataset(builder.ordered(), qa), issues)


def _from_lines(path: Path) -> Dataset:
    records, issues = read_json_lines(path)
    builder = SessionBuilder()
    qa = []
    for number, record in records:
        where = f"linha {number}"
        kind = record.get("type")
        if kind == "qa":
            item = _qa_item(record, where, issues)
            if item is not None:
                qa.append(item)
        elif is_session_header(record):
            builder.header(record, where)
        elif kind in (None, "turn"):
            builder.turn(record, where)
        else:
            issues.append(f"{where}: tipo de registro desconhecido {kind!r}")
    issues.extend(builder.issues)
    return _validated(Dataset(builder.ordered(), qa), issues)


def _validated(dataset: Dataset, issues: List[str]) -> Dataset:
    known = set(dataset.conversation_ids())
    for n, item in enumerate(dataset.qa):
        if item.conversation_id not in known:
            issues.append(f"qa[{n}] ({item.question!r}): conversa inexistente {item.conversation_id!r}")
    if issues:
        raise DatasetError(issues)
    return dataset


def load_dataset(path: Union[str, Path]) -> Dataset:
    """Documento único {"sessions", "qa"} ou registros JSON por linha"""
    source = Path(path)
    try:
        text = source.read_text(encoding="utf-8")
    except OSError as e:
        raise DatasetError([f"{source}: não foi possível ler ({e})"]) from e
    try:
        document = json.loads(text)
    except json.JSONDecodeError:
        document = None
    if isinstance(document, dict) and "sessions" in document:
        return _from_document(document)
    return _from_lines(source)
