import json
import os
import re
from typing import Any, Dict, Iterable, List, Optional, Protocol, Sequence, Set, Tuple

from anthropic import Anthropic, APIError
from loguru import logger

from config.settings import ExtractorConfig
from memory.models import AtomicEntry, DialogueItem
from services.embedding_service import Embedder
from utils.helpers import (
    CALENDAR_WORDS,
    DAY,
    GREETING_TERMS,
    STOPWORDS,
    content_terms,
    iso_date,
    parse_timestamp,
    start_of_day,
)


class ExtractionError(Exception):
    """Falha de transporte ou de formato na extração de uma janela"""


class Extractor(Protocol):
    name: str

    def extract(self, window: Sequence[DialogueItem]) -> List[AtomicEntry]: ...


def build_entry(
    embedder: Embedder,
    statement: str,
    timestamp: int,
    keywords: Iterable[str],
    entities: Iterable[str],
    record: Dict[str, Any],
    source: Iterable[Tuple[str, int]],
) -> AtomicEntry:
    return AtomicEntry(
        statement=statement,
        embedding=embedder.embed(statement),
        timestamp=timestamp,
        keywords=frozenset(k for k in keywords if k),
        entities=frozenset(e for e in entities if e),
        record=record,
        source=tuple(source),
    )


# =================== EXTRATOR POR REGRAS ===================

_SENTENCE_SPLIT = re.compile(r"(?<=[.!?])\s+")
_TRAILING = " \t.!,;:"
_QUOTES = "\"“”()[]"

_DROPPED_TIME = re.compile(r"\b(?:today|tonight|this\s+(?:morning|afternoon|evening))\b", re.IGNORECASE)
_SHIFTED_TIME = (
    (re.compile(r"\byesterday\b", re.IGNORECASE), -1, "on"),
    (re.compile(r"\btomorrow\b", re.IGNORECASE), 1, "on"),
    (re.compile(r"\blast\s+week\b", re.IGNORECASE), -7, "in the week of"),
)

_OWN_ATTRIBUTE = re.compile(
    r"^\s*my\s+(?P<name>[a-z]+(?:\s+[a-z]+){0,2}?)\s+(?:is|was)\s+(?P<value>.+?)\s*$",
    re.IGNORECASE,
)
_THIRD_ATTRIBUTE = re.compile(
    r"^\s*(?P<owner>[A-Z][\w-]*(?:\s+[A-Z][\w-]*)?)'s\s+(?P<name>[a-z]+(?:\s+[a-z]+){0,2}?)"
    r"\s+(?:is|was)\s+(?P<value>.+?)\s*$"
)
_LOCATION = re.compile(r"\b(?:at|in|to)\s+(?:the\s+)?(?P<place>[A-Z][\w'-]*(?:\s+[A-Z][\w'-]*)*)")


def _pronoun_rules(speaker: str) -> List[Tuple[re.Pattern, str]]:
    name = speaker.replace("\\", r"\\")
    return [
        (re.compile(r"\bI\s+am\b|\bI'm\b", re.IGNORECASE), f"{name} is"),
        (re.compile(r"\bI've\b|\bI\s+have\b", re.IGNORECASE), f"{name} has"),
        (re.compile(r"\bI'll\b", re.IGNORECASE), f"{name} will"),
        (re.compile(r"\bI'd\b", re.IGNORECASE), f"{name} would"),
        (re.compile(r"\b(?:my|mine)\b", re.IGNORECASE), f"{name}'s"),
        (re.compile(r"\b(?:myself|me)\b", re.IGNORECASE), name),
        (re.compile(r"\bI\b"), name),
    ]


def split_sentences(text: str) -> List[str]:
    return [s.strip() for s in _SENTENCE_SPLIT.split(text.replace("’", "'")) if s.strip()]


def carries_fact(sentence: str) -> bool:
    """Perguntas, cumprimentos e frases sem conteúdo não viram fatos"""
    if sentence.rstrip().endswith("?"):
        return False
    terms = content_terms(sentence)
    return bool(terms) and not all(t in GREETING_TERMS for t in terms)


def ground_time(sentence: str, timestamp: int) -> Tuple[str, int, Optional[str]]:
    """Troca datas relativas por absolutas: (texto, dia de referência, frase anexada)"""
    day = start_of_day(timestamp)
    phrase = None
    for pattern, offset, prefix in _SHIFTED_TIME:
        if pattern.search(sentence):
            sentence = pattern.sub("", sentence)
            day = start_of_day(timestamp) + offset * DAY
            phrase = f"{prefix} {iso_date(day)}"
    sentence = _DROPPED_TIME.sub("", sentence)
    sentence = re.sub(r"\s+([,.!;:])", r"\1", re.sub(r"\s{2,}", " ", sentence))
    return sentence.strip().rstrip(_TRAILING), day, phrase


def resolve_pronouns(sentence: str, speaker: str) -> str:
    for pattern, replacement in _pronoun_rules(speaker):
        sentence = pattern.sub(replacement, sentence)
    return sentence


def mentions(text: str, name: str) -> bool:
    return re.search(rf"(?<!\w){re.escape(name)}(?!\w)", text, re.IGNORECASE) is not None


def third_person(core: str, speaker: str) -> str:
    if mentions(core, speaker):
        return core
    first, _, rest = core.partition(" ")
    if first.lower() in STOPWORDS:
        first = first.lower()
    return f"{speaker} mentioned that {first} {rest}".rstrip()


def capitalized_runs(text: str) -> List[str]:
    """Sequências de palavras capitalizadas (nomes próprios) em ordem"""
    runs: List[str] = []
    current: List[str] = []

    def close():
        if current:
            runs.append(" ".join(current))
            current.clear()

    for raw in text.split():
        token = raw.strip(_QUOTES)
        ends_run = raw[-1] in _QUOTES + ",.;:!?" or token.endswith("'s")
        if token.endswith("'s"):
            token = token[:-2]
        token = token.strip(".,;:!?")
        if token and token[0].isupper() and token.lower() not in STOPWORDS and token not in CALENDAR_WORDS:
            current.append(token)
        else:
            close()
        if ends_run:
            close()
    close()
    return list(dict.fromkeys(runs))


def find_attributes(sentence: str, speaker: str) -> List[Dict[str, str]]:
    text = sentence.rstrip(_TRAILING)
    own = _OWN_ATTRIBUTE.match(text)
    if own:
        return [{"entity": speaker, "name": own["name"].lower(), "value": own["value"].strip()}]
    other = _THIRD_ATTRIBUTE.match(text)
    if other:
        return [{"entity": other["owner"], "name": other["name"].lower(), "value": other["value"].strip()}]
    return []


class RuleExtractor:
    """Extrator determinístico: reescreve cada frase factual em terceira pessoa"""

    name = "rule"

    def __init__(self, embedder: Embedder):
        self.embedder = embedder

    def extract(self, window: Sequence[DialogueItem]) -> List[AtomicEntry]:
        speakers = {item.speaker for item in window}
        entries = []
        for item in window:
            for sentence in split_sentences(item.text):
                if not carries_fact(sentence):
                    continue
                entry = self._entry(item, sentence, speakers)
                if entry is not None:
                    entries.append(entry)
        return entries

    def _entry(self, item: DialogueItem, sentence: str, speakers: Set[str]) -> Optional[AtomicEntry]:
        core, day, phrase = ground_time(sentence, item.timestamp)
        core = resolve_pronouns(core, item.speaker)
        if not content_terms(core):
            return None
        core = third_person(core, item.speaker)

        entities = [item.speaker] + [e for e in capitalized_runs(core) if e != item.speaker]
        entity_tokens = {t.lower() for e in entities for t in e.split()}
        keywords = [t for t in content_terms(core) if t not in entity_tokens]
        statement = f"{core} {phrase}" if phrase else core

        location = next(
            (m["place"] for m in _LOCATION.finditer(core) if m["place"] not in speakers),
            None,
        )
        record = {
            "speaker": item.speaker,
            "persons": [e for e in entities if e in speakers],
            "entities": entities,
            "location": location,
            "time": iso_date(day),
        }
        attributes = find_attributes(sentence, item.speaker)
        if attributes:
            record["attributes"] = attributes

        return build_entry(
            self.embedder, statement, item.timestamp, keywords, entities, record,
            [(item.session_id, item.turn_index)],
        )


# =================== EXTRATOR LLM ===================

EXTRACTION_PROMPT = """You turn a window of dialogue into atomic memory facts.

Return ONLY a JSON object: {"entries": [{"statement": str, "keywords": [str], "entities": [str],
"persons": [str], "location": str|null, "time": "YYYY-MM-DD"|null, "turns": [int]}]}

Rules:
1. One self-contained fact per statement, written in the third person.
2. Replace every pronoun with the name it refers to.
3. Replace relative times (yesterday, last week, tomorrow) with absolute dates using the turn dates.
4. "turns" lists the bracketed turn numbers the fact comes from.
5. Skip greetings, small talk and questions. An empty list is a valid answer."""

_FENCE = re.compile(r"^\s*```(?:json)?\s*|\s*```\s*$")


def render_window(window: Sequence[DialogueItem]) -> str:
    lines = [f"[{n}] {iso_date(item.timestamp)} {item.speaker}: {item.text}" for n, item in enumerate(window, start=1)]
    return "\n".join(lines)


def parse_json_object(text: str) -> Dict[str, Any]:
    body = _FENCE.sub("", text.strip())
    try:
        data = json.loads(body)
    except json.JSONDecodeError:
        match = re.search(r"\{.*\}", body, re.DOTALL)
        if not match:
            raise
        data = json.loads(match.group(0))
    if not isinstance(data, dict):
        raise ValueError("resposta não é um objeto JSON")
    return data


class AnthropicExtractor:
    """Extração via Messages API, com validação do JSON devolvido"""

    name = "anthropic"

    def __init__(self, cfg: ExtractorConfig, embedder: Embedder, client: Optional[Anthropic] = None):
        self.cfg = cfg
        self.embedder = embedder
        self.client = client or Anthropic(
            api_key=os.environ.get(cfg.api_key_env),
            timeout=cfg.timeout,
            max_retries=0,
        )

    def extract(self, window: Sequence[DialogueItem]) -> List[AtomicEntry]:
        try:
            resp = self.client.messages.create(
                model=self.cfg.model,
                max_tokens=self.cfg.max_tokens,
                temperature=0,
                system=EXTRACTION_PROMPT,
                messages=[{"role": "user", "content": render_window(window)}],
            )
        except APIError as e:
            raise ExtractionError(f"erro no provedor: {e}") from e

        parts = getattr(resp, "content", []) or []
        text = "\n".join(p.text for p in parts if getattr(p, "type", "") == "text")
        try:
            payload = parse_json_object(text)
            return [self._entry(raw, window) for raw in payload["entries"]]
        except (KeyError, TypeError, ValueError) as e:
            logger.debug(f"Resposta do extrator: {text[:300]}")
            raise ExtractionError(f"JSON de extração inválido: {e}") from e

    def _entry(self, raw: Dict[str, Any], window: Sequence[DialogueItem]) -> AtomicEntry:
        statement = str(raw["statement"]).strip()
        if not statement:
            raise ValueError("statement vazio")
        turns = [int(n) for n in raw.get("turns") or []] or list(range(1, len(window) + 1))
        if any(n < 1 or n > len(window) for n in turns):
            raise ValueError(f"turno fora da janela: {turns}")
        items = [window[n - 1] for n in turns]

        lo = min(item.timestamp for item in window)
        hi = max(item.timestamp for item in window)
        timestamp = max(item.timestamp for item in items)
        if raw.get("time"):
            timestamp = min(max(parse_timestamp(raw["time"]), lo), hi)

        entities = [str(e).strip() for e in raw.get("entities") or [] if str(e).strip()]
        record = {
            "speaker": items[0].speaker,
            "persons": [str(p) for p in raw.get("persons") or []],
            "entities": entities,
            "location": raw.get("location"),
            "time": raw.get("time") or iso_date(timestamp),
        }
        return build_entry(
            self.embedder,
            statement,
            timestamp,
            (str(k).strip().lower() for k in raw.get("keywords") or []),
            entities,
            record,
            [(item.session_id, item.turn_index) for item in items],
        )


def build_extractor(cfg: ExtractorConfig, embedder: Embedder) -> Extractor:
    if cfg.kind == "anthropic":
        logger.info(f"🧠 Extrator LLM: {cfg.model}")
        return AnthropicExtractor(cfg, embedder)
    return RuleExtractor(embedder)
