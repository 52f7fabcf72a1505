import math
import threading
from collections import Counter
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from rank_bm25 import BM25Okapi

from memory.graph import GraphView
from memory.models import AtomicEntry
from utils.helpers import content_terms

BM25_K1 = 1.2
BM25_B = 0.75

Ranked = List[Tuple[str, float]]


class IndexDimensionError(ValueError):
    pass


def document_terms(entry: AtomicEntry) -> List[str]:
    """Termos indexados: statement + keywords"""
    terms = content_terms(entry.statement)
    for keyword in sorted(entry.keywords):
        terms.extend(content_terms(keyword))
    return terms


class DenseIndex:
    """Busca exata por cosseno (varredura completa)"""

    def __init__(self, dimension: Optional[int] = None):
        self.dimension = dimension
        self._vectors: Dict[str, np.ndarray] = {}
        self._ids: Optional[List[str]] = None
        self._matrix: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self._vectors)

    def __contains__(self, entry_id: object) -> bool:
        return entry_id in self._vectors

    def ids(self) -> List[str]:
        return sorted(self._vectors)

    def upsert(self, entry: AtomicEntry):
        if self.dimension is None:
            self.dimension = entry.embedding.size
        elif entry.embedding.size != self.dimension:
            raise IndexDimensionError(f"dimensão {entry.embedding.size} diferente de {self.dimension}")
        self._vectors[entry.id] = entry.embedding
        self._ids = self._matrix = None

    def remove(self, entry_id: str) -> bool:
        if self._vectors.pop(entry_id, None) is None:
            return False
        self._ids = self._matrix = None
        return True

    def _materialize(self) -> Tuple[List[str], np.ndarray]:
        if self._matrix is None:
            self._ids = sorted(self._vectors)
            if self._ids:
                self._matrix = np.vstack([self._vectors[i] for i in self._ids])
            else:
                self._matrix = np.zeros((0, self.dimension or 0))
        return self._ids, self._matrix

    def top_k(self, query: np.ndarray, k: int, exclude: Iterable[str] = ()) -> Ranked:
        if k < 1:
            raise ValueError("k deve ser >= 1")
        query = np.asarray(query, dtype=np.float64)
        if self.dimension is not None and query.shape != (self.dimension,):
            raise IndexDimensionError(f"consulta com dimensão {query.shape}, índice com {self.dimension}")
        ids, matrix = self._materialize()
        if not ids:
            return []
        scores = matrix @ query
        excluded = set(exclude)
        if excluded:
            keep = np.fromiter((i not in excluded for i in ids), dtype=bool, count=len(ids))
            candidates = np.flatnonzero(keep)
        else:
            candidates = np.arange(len(ids))
        # ids já estão em ordem crescente: argsort estável desempata por id
        order = candidates[np.argsort(-scores[candidates], kind="stable")]
        return [(ids[i], float(scores[i])) for i in order[:k]]


class _Okapi(BM25Okapi):
    """BM25Okapi com idf ln(1 + (N - df + 0.5) / (df + 0.5)), sempre positivo"""

    def _calc_idf(self, nd):
        for word, freq in nd.items():
            self.idf[word] = math.log(1.0 + (self.corpus_size - freq + 0.5) / (freq + 0.5))


class LexicalIndex:
    """Índice invertido; pontuação BM25 via rank_bm25, reconstruída sob demanda"""

    def __init__(self, k1: float = BM25_K1, b: float = BM25_B):
        self.k1 = k1
        self.b = b
        self._postings: Dict[str, Dict[str, int]] = {}
        self._doc_terms: Dict[str, List[str]] = {}
        self._ids: List[str] = []
        self._bm25: Optional[_Okapi] = None

    def __len__(self) -> int:
        return len(self._doc_terms)

    def __contains__(self, entry_id: object) -> bool:
        return entry_id in self._doc_terms

    def ids(self) -> List[str]:
        return sorted(self._doc_terms)

    def postings(self, term: str) -> List[Tuple[str, int]]:
        """Lista de (id, tf) ordenada por id"""
        return sorted(self._postings.get(term, {}).items())

    def vocabulary(self) -> List[str]:
        return sorted(self._postings)

    def upsert(self, entry: AtomicEntry):
        self.remove(entry.id)
        terms = document_terms(entry)
        self._doc_terms[entry.id] = terms
        for term, tf in Counter(terms).items():
            self._postings.setdefault(term, {})[entry.id] = tf
        self._bm25 = None

    def remove(self, entry_id: str) -> bool:
        terms = self._doc_terms.pop(entry_id, None)
        if terms is None:
            return False
        for term in set(terms):
            posting = self._postings[term]
            posting.pop(entry_id, None)
            if not posting:
                del self._postings[term]
        self._bm25 = None
        return True

    def idf(self, term: str) -> float:
        n_docs = len(self._doc_terms)
        df = len(self._postings.get(term, {}))
        return math.log(1.0 + (n_docs - df + 0.5) / (df + 0.5))

    def _scorer(self) -> _Okapi:
        if self._bm25 is None:
            self._ids = sorted(self._doc_terms)
            self._bm25 = _Okapi([self._doc_terms[i] for i in self._ids], k1=self.k1, b=self.b)
        return self._bm25

    def top_k(self, terms: Sequence[str], k: int, exclude: Iterable[str] = ()) -> Ranked:
        if k < 1:
            raise ValueError("k deve ser >= 1")
        excluded = set(exclude)
        unique_terms = [t for t in dict.fromkeys(t.lower() for t in terms if t) if t in self._postings]
        matching = {i for t in unique_terms for i in self._postings[t]} - excluded
        # matching não vazio garante avgdl > 0
        if not matching:
            return []
        scores = self._scorer().get_scores(unique_terms)
        ranked = sorted(((i, float(s)) for i, s in zip(self._ids, scores) if i in matching),
                        key=lambda item: (-item[1], item[0]))
        return ranked[:k]


class MultiViewIndex:
    """Índices denso e lexical mantidos em sincronia com o grafo"""

    def __init__(self, dimension: Optional[int] = None):
        self.dense = DenseIndex(dimension)
        self.lexical = LexicalIndex()
        self._lock = threading.RLock()

    @classmethod
    def from_view(cls, view: GraphView) -> "MultiViewIndex":
        index = cls(view.dimension)
        for entry in view.ordered_entries():
            index.upsert(entry)
        return index

    def __len__(self) -> int:
        return len(self.dense)

    def ids(self) -> List[str]:
        return self.dense.ids()

    def upsert(self, entry: AtomicEntry):
        with self._lock:
            self.dense.upsert(entry)
            self.lexical.upsert(entry)

    def remove(self, entry_id: str):
        with self._lock:
            found = self.dense.remove(entry_id)
            self.lexical.remove(entry_id)
        if not found:
            logger.warning(f"⚠️ Remoção ignorada, id fora do índice: {entry_id}")

    def top_k_dense(self, query: np.ndarray, k: int, exclude: Iterable[str] = ()) -> Ranked:
        with self._lock:
            return self.dense.top_k(query, k, exclude)

    def top_k_lexical(self, terms: Sequence[str], k: int, exclude: Iterable[str] = ()) -> Ranked:
        with self._lock:
            return self.lexical.top_k(terms, k, exclude)
