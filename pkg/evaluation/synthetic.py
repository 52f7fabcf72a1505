from datetime import datetime, timezone
from typing import Dict, List, Optional, Set, Tuple

import numpy as np

from evaluation.dataset import Category, Dataset, QAItem
from memory.models import DialogueItem, source_ref
from memory.stream import DEFAULT_CONVERSATION, Session
from utils.helpers import CALENDAR_WORDS, DAY, GREETING_TERMS, STOPWORDS

BASE_DATE = int(datetime(2023, 5, 1, tzinfo=timezone.utc).timestamp())
FIRST_TURN_OFFSET = 9 * 3600
TURN_SPACING = 120
MAX_SESSIONS = 8

_CONSONANTS = list("bdfgklmnprstvz")
_VOWELS = list("aeiou")

# Falas sem conteúdo factual (só cumprimentos)
FILLERS = (
    "Hi! Good to see you.",
    "Hello, great to hear from you.",
    "Nice, glad to hear!",
    "Thanks! Talk soon.",
    "See you later!",
)

PlannedTurn = Tuple[str, str, str]  # (chave, falante, texto)


class _Vocabulary:
    """Pseudopalavras únicas dentro de um dataset"""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.used: Set[str] = set()
        self.reserved = STOPWORDS | GREETING_TERMS | {w.lower() for w in CALENDAR_WORDS}

    def word(self, syllables: int = 3) -> str:
        while True:
            letters = []
            for _ in range(syllables):
                letters.append(self.rng.choice(_CONSONANTS))
                letters.append(self.rng.choice(_VOWELS))
            word = "".join(letters)
            if word not in self.used and word not in self.reserved:
                self.used.add(word)
                return word

    def name(self) -> str:
        return self.word(2).capitalize()


def _chain_sessions(chain_length: int, n_sessions: int) -> List[int]:
    """Extremos na primeira e na última sessão, elos intermediários entre elas"""
    last = n_sessions - 1
    return [round(step * last / (chain_length - 1)) for step in range(chain_length)]


def gen_synthetic(
    seed: int,
    n_sessions: int = 3,
    turns_per_session: Optional[int] = None,
    n_multihop: int = 50,
    chain_length: int = 3,
    n_temporal: int = 20,
    n_attribute: int = 5,
) -> Dataset:
    """Dataset determinístico com cadeias multi-hop, pares de atualização e atributos"""
    if n_sessions < 1 or n_sessions > MAX_SESSIONS:
        raise ValueError(f"n_sessions deve estar entre 1 e {MAX_SESSIONS}")
    if chain_length < 2 or chain_length > n_sessions:
        raise ValueError("chain_length deve estar entre 2 e n_sessions")
    if min(n_multihop, n_temporal, n_attribute) < 0:
        raise ValueError("quantidades não podem ser negativas")
    if n_temporal and n_sessions < 2:
        raise ValueError("pares de atualização exigem pelo menos 2 sessões")

    rng = np.random.default_rng(seed)
    vocab = _Vocabulary(rng)
    planned: Dict[int, List[PlannedTurn]] = {s: [] for s in range(n_sessions)}
    questions: List[Tuple[QAItem, List[str]]] = []

    for c in range(n_multihop):
        persons = [vocab.name() for _ in range(chain_length - 1)]
        verbs = [vocab.word() for _ in range(chain_length)]
        thing, near_a, near_b, place_a, place_b = (vocab.word() for _ in range(5))
        sessions = _chain_sessions(chain_length, n_sessions)
        keys = [f"mh{c}-{step}" for step in range(chain_length)]

        planned[sessions[0]].append((keys[0], persons[0], f"I {verbs[0]} a {thing} near the {near_a} {near_b}."))
        for step in range(1, chain_length - 1):
            text = f"I {verbs[step]} the {thing} to {persons[step]}."
            planned[sessions[step]].append((keys[step], persons[step - 1], text))
        planned[sessions[-1]].append((keys[-1], persons[-1], f"I {verbs[-1]} it at the {place_a} {place_b}."))

        question = f"Who {verbs[-1]} it at the {place_a} {place_b} after it was {verbs[0]} near the {near_a} {near_b}?"
        questions.append((QAItem(question=question, answer=persons[-1], category=Category.MULTI_HOP), keys))

    last = n_sessions - 1
    for p in range(n_temporal):
        owner, first, second = vocab.name(), vocab.name(), vocab.name()
        plan = vocab.word()
        before = int(rng.integers(1, 12))
        after = int(rng.integers(1, 11))
        after = after + 1 if after >= before else after
        old_key, new_key = f"tu{p}-old", f"tu{p}-new"
        planned[0].append((old_key, owner, f"My {plan} with {first} and {second} is at {before}pm."))
        planned[last].append((new_key, owner, f"My {plan} with {first} and {second} is at {after}pm."))
        question = f"What time is {owner}'s {plan} with {first} and {second}?"
        questions.append((QAItem(question=question, answer=f"{after}pm", category=Category.TEMPORAL), [new_key]))

    for a in range(n_attribute):
        owner, attribute = vocab.name(), vocab.word()
        value = f"{vocab.word(2)}-{int(rng.integers(1000, 10000))}"
        key = f"at{a}"
        planned[a % n_sessions].append((key, owner, f"My {attribute} is {value}."))
        question = f"What is {owner}'s {attribute}?"
        questions.append((QAItem(question=question, answer=value, category=Category.SINGLE_HOP), [key]))

    sessions, refs = _layout(planned, n_sessions, turns_per_session, rng)
    qa = [item.model_copy(update={"evidence": [refs[k] for k in keys]}) for item, keys in questions]
    return Dataset(sessions=sessions, qa=qa)


def _layout(planned: Dict[int, List[PlannedTurn]], n_sessions: int, turns_per_session: Optional[int],
            rng: np.random.Generator) -> Tuple[List[Session], Dict[str, str]]:
    sessions: List[Session] = []
    refs: Dict[str, str] = {}
    for s in range(n_sessions):
        session_id = f"session_{s + 1}"
        date = BASE_DATE + s * DAY
        turns = [planned[s][i] for i in rng.permutation(len(planned[s]))]
        speakers = list(dict.fromkeys(speaker for _, speaker, _ in turns)) or ["Host"]

        opening = [("", speakers[0], FILLERS[s % len(FILLERS)])]
        closing = [("", speakers[-1], FILLERS[(s + 3) % len(FILLERS)])]
        padding = max(0, (turns_per_session or 0) - len(turns) - 2)
        extra = [("", speakers[n % len(speakers)], FILLERS[n % len(FILLERS)]) for n in range(padding)]
        turns = opening + turns + extra + closing

        session = Session(session_id=session_id, date=date, conversation_id=DEFAULT_CONVERSATION)
        for index, (key, speaker, text) in enumerate(turns):
            session.items.append(DialogueItem(
                speaker=speaker,
                text=text,
                timestamp=date + FIRST_TURN_OFFSET + index * TURN_SPACING,
                session_id=session_id,
                turn_index=index,
            ))
            if key:
                refs[key] = source_ref(session_id, index)
        sessions.append(session)
    return sessions, refs
