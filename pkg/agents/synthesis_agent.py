import re
import time
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import Dict, List, Optional

import tiktoken
from loguru import logger

from agents.retrieval_agent import EvidenceGraph, NodeRole, path_priority
from services.llm_service import (
    GenerationRequest,
    Generator,
    GeneratorParseError,
    GeneratorTransportError,
    parse_answer,
)
from utils.helpers import iso_date

NO_EVIDENCE = "(no evidence found in memory)"

SYSTEM_PREAMBLE = (
    "You answer questions about a long-running conversation using only the memory context provided. "
    "Facts are listed chronologically; reasoning paths show how facts connect."
)


class SynthesisError(Exception):
    """Gerador indisponível depois das novas tentativas"""


class QueryKind(str, Enum):
    CONCISE = "concise"
    LIST = "list"
    COUNT = "count"
    TEMPORAL = "temporal"
    OPEN = "open"


_COUNT = re.compile(r"^\s*how\s+many\b", re.IGNORECASE)
_TEMPORAL = re.compile(r"^\s*(?:when\b|what\s+(?:date|time|year)\b)", re.IGNORECASE)
_OPEN = re.compile(r"^\s*(?:why|how|describe)\b", re.IGNORECASE)
_LIST_HEAD = re.compile(r"^\s*(?:what|which)\s+(?:[\w/-]+\s+)?[\w/-]*s\b", re.IGNORECASE)
_LIST_VERB = re.compile(r"\b(?:has|have)\b", re.IGNORECASE)


def classify_query_kind(query: str) -> QueryKind:
    if _COUNT.match(query):
        return QueryKind.COUNT
    if _TEMPORAL.match(query):
        return QueryKind.TEMPORAL
    if _OPEN.match(query):
        return QueryKind.OPEN
    if _LIST_HEAD.match(query) and _LIST_VERB.search(query):
        return QueryKind.LIST
    return QueryKind.CONCISE


# =================== REGRAS ===================
_LENGTH_RULES = {
    QueryKind.CONCISE: "Answer in as few words as possible: a name, a short phrase or a value.",
    QueryKind.LIST: "Answer with a comma-separated list containing every matching item supported by the facts.",
    QueryKind.COUNT: "Answer with the number only.",
    QueryKind.TEMPORAL: "Answer with the date or time only.",
    QueryKind.OPEN: "Answer in at most two short sentences grounded in the facts.",
}

TIMESTAMP_RULE = "Copy timestamps exactly as written in the facts; never convert them to relative dates such as 'yesterday' or 'last week'."
COUNT_RULE = "Count each distinct matching fact once and write the total as digits (e.g. 3), not words."
PATH_RULE = "Follow the reasoning paths to combine facts; when two facts disagree, the later one is the current state."
FORMAT_RULE = 'Reply with a JSON object only: {"answer": "..."}. If the facts do not contain the answer, reply {"answer": "Not mentioned"}.'


def assemble_rules(kind: QueryKind) -> str:
    rules = [_LENGTH_RULES[kind], TIMESTAMP_RULE, COUNT_RULE if kind == QueryKind.COUNT else PATH_RULE, FORMAT_RULE]
    return "\n".join(f"{n}. {rule}" for n, rule in enumerate(rules, start=1))


# =================== TOKENS ===================
@lru_cache(maxsize=8)
def _encoding(name: str):
    return tiktoken.get_encoding(name)


def count_tokens(text: str, tokenizer: str = "whitespace") -> int:
    if not text:
        return 0
    if tokenizer.startswith("tiktoken:"):
        return len(_encoding(tokenizer.split(":", 1)[1]).encode(text))
    return len(text.split())


# =================== SERIALIZAÇÃO ===================
@dataclass(frozen=True)
class SerializedFact:
    index: int
    entry_id: str
    date: str
    statement: str
    rank: Optional[int] = None
    role: NodeRole = NodeRole.TERMINAL

    def line(self) -> str:
        return f"[F{self.index}] {self.date}: {self.statement}"


@dataclass
class SerializedContext:
    kind: QueryKind
    facts: List[SerializedFact] = field(default_factory=list)
    path_indices: List[List[int]] = field(default_factory=list)
    # id do fato → enunciado do estado mais recente
    successors: Dict[str, str] = field(default_factory=dict)
    rules: str = ""
    body: str = ""
    text: str = ""
    token_count: int = 0

    @property
    def path_lines(self) -> List[str]:
        return [" → ".join(f"F{i}" for i in indices) for indices in self.path_indices]


def serialize(graph: EvidenceGraph, kind: QueryKind = QueryKind.CONCISE, max_path_lines: int = 0,
              topology: bool = True, tokenizer: str = "whitespace") -> SerializedContext:
    """Fatos datados em ordem cronológica + linhas de caminho + regras"""
    ordered = sorted(graph.nodes.values(), key=lambda n: (n.entry.timestamp, n.entry.id))
    facts = [
        SerializedFact(n, node.entry.id, iso_date(node.entry.timestamp), node.entry.statement, node.rank, node.role)
        for n, node in enumerate(ordered, start=1)
    ]
    position = {fact.entry_id: fact.index for fact in facts}

    path_indices: List[List[int]] = []
    if topology:
        ranked = sorted(graph.paths, key=lambda p: path_priority(p, graph))
        if max_path_lines:
            ranked = ranked[:max_path_lines]
        path_indices = [[position[i] for i in path.nodes] for path in ranked]

    sections = ["Facts:\n" + ("\n".join(f.line() for f in facts) if facts else NO_EVIDENCE)]
    if path_indices:
        lines = [" → ".join(f"F{i}" for i in indices) for indices in path_indices]
        sections.append("Reasoning Paths:\n" + "\n".join(lines))
    body = "\n\n".join(sections)
    rules = assemble_rules(kind)
    text = f"{body}\n\nRules:\n{rules}"

    return SerializedContext(
        kind=kind,
        facts=facts,
        path_indices=path_indices,
        successors={i: e.statement for i, e in graph.latest.items()},
        rules=rules,
        body=body,
        text=text,
        token_count=count_tokens(text, tokenizer),
    )


# =================== GERAÇÃO ===================
@dataclass
class SynthesisResult:
    answer: str
    raw: str
    parse_warning: bool = False
    attempts: int = 1
    token_count: int = 0
    latency: float = 0.0


def build_request(query: str, context: SerializedContext) -> GenerationRequest:
    return GenerationRequest(
        query=query,
        system=f"{SYSTEM_PREAMBLE}\n\nRules:\n{context.rules}",
        prompt=f"Question: {query}\n\nMemory context:\n{context.body}",
        context=context,
    )


def synthesize(query: str, context: SerializedContext, generator: Generator, retries: int = 1) -> SynthesisResult:
    """Uma chamada ao gerador; nova tentativa só em falha de transporte ou JSON"""
    request = build_request(query, context)
    started = time.perf_counter()
    raw: Optional[str] = None
    attempts = 0
    last_error: Optional[Exception] = None

    for attempts in range(1, retries + 2):
        try:
            raw = generator.generate(request)
        except GeneratorTransportError as e:
            last_error = e
            logger.warning(f"⚠️ Gerador falhou (tentativa {attempts}): {e}")
            continue
        try:
            answer = parse_answer(raw)
            return SynthesisResult(answer, raw, False, attempts, context.token_count, time.perf_counter() - started)
        except GeneratorParseError as e:
            last_error = e
            logger.warning(f"⚠️ Resposta fora do formato JSON (tentativa {attempts})")

    if raw is None:
        raise SynthesisError(f"gerador indisponível após {attempts} tentativas: {last_error}")
    logger.warning(f"⚠️ Devolvendo texto bruto do gerador: {raw[:80]!r}")
    return SynthesisResult(raw.strip(), raw, True, attempts, context.token_count, time.perf_counter() - started)
