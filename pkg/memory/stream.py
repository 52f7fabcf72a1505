import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Tuple, Union

from pydantic import BaseModel, Field, ValidationError, field_validator

from memory.models import DialogueItem
from utils.helpers import parse_timestamp, start_of_day

DEFAULT_CONVERSATION = "default"


class StreamError(Exception):
    """Problemas de esquema no fluxo de diálogo (todos listados)"""

    def __init__(self, issues: List[str]):
        self.issues = issues
        super().__init__("; ".join(issues))


class SessionHeader(BaseModel):
    session_id: str = Field(min_length=1)
    date: int
    conversation_id: str = DEFAULT_CONVERSATION

    @field_validator("date", mode="before")
    @classmethod
    def _parse_date(cls, value: Any) -> int:
        return start_of_day(parse_timestamp(value))


class TurnRecord(BaseModel):
    session_id: str = Field(min_length=1)
    speaker: str = Field(min_length=1)
    text: str
    timestamp: Optional[int] = None

    @field_validator("text")
    @classmethod
    def _text_not_blank(cls, value: str) -> str:
        if not value.strip():
            raise ValueError("texto vazio")
        return value

    @field_validator("timestamp", mode="before")
    @classmethod
    def _parse_timestamp(cls, value: Any) -> Optional[int]:
        return None if value in (None, "") else parse_timestamp(value)


@dataclass
class Session:
    session_id: str
    date: int
    conversation_id: str = DEFAULT_CONVERSATION
    items: List[DialogueItem] = field(default_factory=list)


def describe_errors(error: ValidationError) -> str:
    parts = []
    for detail in error.errors():
        location = ".".join(str(p) for p in detail["loc"]) or "registro"
        parts.append(f"{location}: {detail['msg']}")
    return ", ".join(parts)


class SessionBuilder:
    """Monta sessões ordenadas a partir de cabeçalhos e falas"""

    def __init__(self):
        self.sessions: Dict[str, Session] = {}
        self.issues: List[str] = []

    def header(self, data: Dict[str, Any], where: str):
        try:
            header = SessionHeader.model_validate(data)
        except ValidationError as e:
            self.issues.append(f"{where}: sessão inválida ({describe_errors(e)})")
            return
        existing = self.sessions.get(header.session_id)
        if existing and existing.items:
            self.issues.append(f"{where}: cabeçalho da sessão {header.session_id} depois das falas")
            return
        self.sessions[header.session_id] = Session(header.session_id, header.date, header.conversation_id)

    def turn(self, data: Dict[str, Any], where: str, session_id: Optional[str] = None):
        payload = dict(data)
        if session_id is not None:
            payload.setdefault("session_id", session_id)
        try:
            turn = TurnRecord.model_validate(payload)
        except ValidationError as e:
            self.issues.append(f"{where}: fala inválida ({describe_errors(e)})")
            return
        session = self.sessions.get(turn.session_id)
        if session is None:
            if turn.timestamp is None:
                self.issues.append(f"{where}: sessão {turn.session_id} sem cabeçalho e fala sem timestamp")
                return
            session = Session(turn.session_id, start_of_day(turn.timestamp))
            self.sessions[turn.session_id] = session
        session.items.append(
            DialogueItem(
                speaker=turn.speaker,
                text=turn.text,
                timestamp=turn.timestamp if turn.timestamp is not None else session.date,
                session_id=session.session_id,
                turn_index=len(session.items),
            )
        )

    def ordered(self) -> List[Session]:
        return list(self.sessions.values())


def read_json_lines(path: Union[str, Path]) -> Tuple[List[Tuple[int, Dict[str, Any]]], List[str]]:
    """Lê registros JSON por linha, devolvendo (linha, registro) e problemas"""
    source = Path(path)
    try:
        lines = source.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise StreamError([f"{source}: não foi possível ler ({e})"]) from e
    records, issues = [], []
    for number, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as e:
            issues.append(f"linha {number}: JSON inválido ({e.msg})")
            continue
        if not isinstance(record, dict):
            issues.append(f"linha {number}: registro não é um objeto")
            continue
        records.append((number, record))
    return records, issues


def is_session_header(record: Dict[str, Any]) -> bool:
    return record.get("type") == "session" or ("date" in record and "text" not in record)


def sessions_from_records(records: Iterable[Tuple[int, Dict[str, Any]]],
                          builder: Optional[SessionBuilder] = None) -> SessionBuilder:
    builder = builder or SessionBuilder()
    for number, record in records:
        where = f"linha {number}"
        if is_session_header(record):
            builder.header(record, where)
        elif record.get("type", "turn") == "turn":
            builder.turn(record, where)
    return builder


def flatten(sessions: Iterable[Session]) -> List[DialogueItem]:
    return [item for session in sessions for item in session.items]


def load_stream(path: Union[str, Path]) -> List[DialogueItem]:
    """Carrega o fluxo de diálogo (JSON Lines) em ordem (sessão, turno)"""
    records, issues = read_json_lines(path)
    builder = sessions_from_records(records)
    issues.extend(builder.issues)
    if issues:
        raise StreamError(issues)
    return flatten(builder.ordered())
