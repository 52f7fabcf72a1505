import json
import os
import re
import threading
from dataclasses import dataclass
from typing import Any, Mapping, Optional, Protocol

from anthropic import Anthropic, APIError
from loguru import logger

from config.settings import GeneratorConfig

ABSTAIN = "Not mentioned"

_FENCE = re.compile(r"^\s*```(?:json)?\s*|\s*```\s*$")


class GeneratorTransportError(Exception):
    pass


class GeneratorParseError(Exception):
    """Resposta sem objeto JSON com o campo "answer\""""


@dataclass(frozen=True)
class GenerationRequest:
    query: str
    system: str
    prompt: str
    # SerializedContext, usado pelos geradores offline
    context: Any = None


class Generator(Protocol):
    name: str
    calls: int

    def generate(self, request: GenerationRequest) -> str: ...


def parse_answer(text: str) -> str:
    """Extrai o campo "answer" do JSON devolvido pelo gerador"""
    body = _FENCE.sub("", (text or "").strip())
    data = None
    try:
        data = json.loads(body)
    except json.JSONDecodeError:
        match = re.search(r"\{.*\}", body, re.DOTALL)
        if match:
            try:
                data = json.loads(match.group(0))
            except json.JSONDecodeError:
                data = None
    if not isinstance(data, dict) or "answer" not in data:
        raise GeneratorParseError(f"resposta sem JSON {{'answer': ...}}: {body[:120]!r}")
    answer = data["answer"]
    if isinstance(answer, list):
        return ", ".join(str(a) for a in answer)
    return str(answer)


def answer_json(answer: str) -> str:
    return json.dumps({"answer": answer}, ensure_ascii=False)


class _CountingGenerator:
    def __init__(self):
        self.calls = 0
        self._lock = threading.Lock()

    def _count(self):
        with self._lock:
            self.calls += 1


class EchoGenerator(_CountingGenerator):
    """Respostas fixas para testes; sem fixture, devolve o fim do primeiro caminho"""

    name = "echo"

    def __init__(self, answers: Optional[Mapping[str, str]] = None):
        super().__init__()
        self.answers = dict(answers or {})

    def generate(self, request: GenerationRequest) -> str:
        self._count()
        if request.query in self.answers:
            return answer_json(self.answers[request.query])
        context = request.context
        if context is None or not context.facts:
            return answer_json(ABSTAIN)
        if context.path_indices:
            last = context.path_indices[0][-1]
            return answer_json(context.facts[last - 1].statement)
        return answer_json(ABSTAIN)


class ExtractiveGenerator(_CountingGenerator):
    """Devolve o fato do terminal mais bem ranqueado (no estado mais recente)"""

    name = "extractive"

    def generate(self, request: GenerationRequest) -> str:
        self._count()
        context = request.context
        if context is None or not context.facts:
            return answer_json(ABSTAIN)
        ranked = [f for f in context.facts if f.rank is not None]
        best = min(ranked, key=lambda f: f.rank) if ranked else context.facts[0]
        return answer_json(context.successors.get(best.entry_id, best.statement))


class AnthropicGenerator(_CountingGenerator):
    """Chamada única à Messages API por pergunta"""

    name = "anthropic"

    def __init__(self, cfg: GeneratorConfig, client: Optional[Anthropic] = None):
        super().__init__()
        self.cfg = cfg
        self.client = client or Anthropic(
            api_key=os.environ.get(cfg.api_key_env),
            timeout=cfg.timeout,
            max_retries=0,
        )
        self._slots = threading.BoundedSemaphore(cfg.max_in_flight)

    def generate(self, request: GenerationRequest) -> str:
        self._count()
        with self._slots:
            try:
                resp = self.client.messages.create(
                    model=self.cfg.model,
                    max_tokens=self.cfg.max_tokens,
                    temperature=self.cfg.temperature,
                    system=request.system,
                    messages=[{"role": "user", "content": request.prompt}],
                )
            except APIError as e:
                logger.error(f"❌ Erro no gerador: {e}")
                raise GeneratorTransportError(str(e)) from e
        parts = getattr(resp, "content", []) or []
        return "\n".join(p.text for p in parts if getattr(p, "type", "") == "text").strip()


def build_generator(cfg: GeneratorConfig, answers: Optional[Mapping[str, str]] = None) -> Generator:
    if cfg.kind == "anthropic":
        logger.info(f"🌐 Gerador: {cfg.model}")
        return AnthropicGenerator(cfg)
    if cfg.kind == "echo":
        return EchoGenerator(answers)
    return ExtractiveGenerator()
