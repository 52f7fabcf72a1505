import re
import string
from collections import Counter
from typing import List

from nltk.translate.bleu_score import SmoothingFunction, sentence_bleu

_ARTICLES = re.compile(r"\b(?:a|an|the)\b")
_PUNCTUATION = str.maketrans({ch: " " for ch in string.punctuation})
_SMOOTHING = SmoothingFunction()


def normalize_answer(text: str) -> str:
    """Minúsculas, sem pontuação, sem artigos e com espaços colapsados"""
    text = str(text or "").lower().translate(_PUNCTUATION)
    text = _ARTICLES.sub(" ", text)
    return " ".join(text.split())


def answer_tokens(text: str) -> List[str]:
    return normalize_answer(text).split()


def token_f1(prediction: str, gold: str) -> float:
    predicted, expected = answer_tokens(prediction), answer_tokens(gold)
    if not predicted and not expected:
        return 1.0
    if not predicted or not expected:
        return 0.0
    common = sum((Counter(predicted) & Counter(expected)).values())
    if common == 0:
        return 0.0
    precision = common / len(predicted)
    recall = common / len(expected)
    return 2 * precision * recall / (precision + recall)


def bleu(prediction: str, gold: str) -> float:
    """BLEU de sentença até 4-gramas com suavização aditiva (method2)"""
    predicted, expected = answer_tokens(prediction), answer_tokens(gold)
    if not predicted and not expected:
        return 1.0
    if not predicted or not expected:
        return 0.0
    order = min(4, len(predicted))
    weights = tuple([1.0 / order] * order)
    score = sentence_bleu([expected], predicted, weights=weights, smoothing_function=_SMOOTHING.method2)
    return float(min(1.0, max(0.0, score)))
