import hashlib
import os
import threading
from functools import lru_cache
from typing import List, Protocol, Sequence

import httpx
import numpy as np
from loguru import logger

from config.settings import EmbedderConfig
from utils.helpers import content_terms


class EmbeddingError(Exception):
    pass


class EmbeddingTransportError(EmbeddingError):
    """Falha de rede ou de protocolo no provedor remoto"""


class Embedder(Protocol):
    name: str
    dimension: int

    def embed(self, text: str) -> np.ndarray: ...

    def embed_many(self, texts: Sequence[str]) -> List[np.ndarray]: ...


def canonical_vector(dimension: int) -> np.ndarray:
    """Vetor unitário fixo para textos sem conteúdo"""
    vector = np.zeros(dimension, dtype=np.float64)
    vector[0] = 1.0
    vector.flags.writeable = False
    return vector


def normalize(vector: np.ndarray) -> np.ndarray:
    vector = np.asarray(vector, dtype=np.float64)
    norm = float(np.linalg.norm(vector))
    if norm == 0.0 or not np.isfinite(norm):
        return canonical_vector(vector.size)
    unit = vector / norm
    unit.flags.writeable = False
    return unit


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """Similaridade de cosseno em [-1, 1]"""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"dimensões diferentes: {u.shape} vs {v.shape}")
    denominator = float(np.linalg.norm(u) * np.linalg.norm(v))
    if denominator == 0.0:
        return 0.0
    return float(np.clip(np.dot(u, v) / denominator, -1.0, 1.0))


@lru_cache(maxsize=65536)
def _bucket(term: str, dimension: int) -> int:
    digest = hashlib.blake2b(term.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big") % dimension


class HashingEmbedder:
    """Bag-of-words com hashing em d baldes: determinístico e sem rede"""

    name = "offline-hashing"

    def __init__(self, dimension: int = 256):
        if dimension < 1:
            raise ValueError("dimensão deve ser positiva")
        self.dimension = dimension

    def embed(self, text: str) -> np.ndarray:
        terms = content_terms(text or "")
        if not terms:
            return canonical_vector(self.dimension)
        counts = np.zeros(self.dimension, dtype=np.float64)
        for term in terms:
            counts[_bucket(term, self.dimension)] += 1.0
        return normalize(counts)

    def embed_many(self, texts: Sequence[str]) -> List[np.ndarray]:
        return [self.embed(text) for text in texts]


class RemoteEmbedder:
    """Cliente para endpoints {input: [...]} → {vectors: [[...]]}"""

    name = "remote"

    def __init__(self, cfg: EmbedderConfig, client: httpx.Client = None):
        self.dimension = cfg.dimension
        self.model = cfg.model
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(cfg.api_key_env, "")
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        self.url = cfg.base_url
        self.client = client or httpx.Client(headers=headers, timeout=cfg.timeout)
        self._slots = threading.BoundedSemaphore(cfg.max_in_flight)

    def embed(self, text: str) -> np.ndarray:
        return self.embed_many([text])[0]

    def embed_many(self, texts: Sequence[str]) -> List[np.ndarray]:
        if not texts:
            return []
        payload = {"input": list(texts)}
        if self.model:
            payload["model"] = self.model
        with self._slots:
            try:
                response = self.client.post(self.url, json=payload)
                response.raise_for_status()
                body = response.json()
            except httpx.HTTPStatusError as e:
                logger.error(f"❌ Embedder remoto respondeu {e.response.status_code}")
                raise EmbeddingTransportError(f"HTTP {e.response.status_code}: {e.response.text[:200]}") from e
            except (httpx.HTTPError, ValueError) as e:
                logger.error(f"❌ Erro no embedder remoto: {e}")
                raise EmbeddingTransportError(str(e)) from e

        vectors = body.get("vectors") if isinstance(body, dict) else None
        if not isinstance(vectors, list) or len(vectors) != len(texts):
            raise EmbeddingTransportError("resposta sem 'vectors' compatível com a entrada")
        result = []
        for raw in vectors:
            vector = np.asarray(raw, dtype=np.float64)
            if vector.shape != (self.dimension,):
                raise EmbeddingTransportError(f"vetor com dimensão {vector.shape}, esperado ({self.dimension},)")
            result.append(normalize(vector))
        return result

    def close(self):
        self.client.close()


def build_embedder(cfg: EmbedderConfig) -> Embedder:
    """Instancia o embedder configurado"""
    if cfg.kind == "remote":
        logger.info(f"🌐 Embedder remoto: {cfg.base_url} ({cfg.model or 'modelo padrão'})")
        return RemoteEmbedder(cfg)
    return HashingEmbedder(cfg.dimension)
