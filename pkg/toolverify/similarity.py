# toolverify/similarity.py
# Text embeddings and cosine similarity for tool-pool rotation and dedup.
# Default provider: hashed character trigrams (word-boundary padded), L2 normalized.

import logging

import numpy as np
import requests
from sklearn.feature_extraction.text import HashingVectorizer

from toolverify.backend import TRANSIENT_ERRORS
from toolverify.errors import ProtocolError, SimilarityError, TransportError

logger = logging.getLogger(__name__)

DEFAULT_DIMENSION = 4096
DEFAULT_DEDUP_THRESHOLD = 0.9


class EmbeddingVector:
    """Fixed-length real vector produced by one provider."""

    __slots__ = ("values",)

    def __init__(self, values):
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim != 1 or arr.size == 0:
            raise SimilarityError("Embedding must be a non-empty 1-D vector")
        arr.setflags(write=False)
        self.values = arr

    @property
    def dimension(self) -> int:
        return int(self.values.size)

    def is_zero(self) -> bool:
        return not np.any(self.values)

    def __neg__(self) -> "EmbeddingVector":
        return EmbeddingVector(-self.values)

    def __eq__(self, other) -> bool:
        return isinstance(other, EmbeddingVector) and np.array_equal(self.values, other.values)

    def __repr__(self) -> str:
        return f"EmbeddingVector(dimension={self.dimension}, nnz={int(np.count_nonzero(self.values))})"


def cosine(a: EmbeddingVector, b: EmbeddingVector) -> float:
    """
    Cosine similarity in [-1, 1]; 0.0 when either vector is zero.

    Raises:
        SimilarityError: If dimensions differ
    """
    if a.dimension != b.dimension:
        raise SimilarityError(f"Dimension mismatch: {a.dimension} vs {b.dimension}")
    na = float(np.linalg.norm(a.values))
    nb = float(np.linalg.norm(b.values))
    if na == 0.0 or nb == 0.0:
        return 0.0
    value = float(np.dot(a.values, b.values)) / (na * nb)
    return max(-1.0, min(1.0, value))


class NgramEmbedder:
    """
    Character 3-gram term-frequency embedding hashed to a fixed dimension.

    Words are padded with a space on each side before slicing trigrams, so any
    non-blank text yields a nonzero vector. Stateless after construction.
    """

    def __init__(self, dimension: int = DEFAULT_DIMENSION):
        if dimension < 1:
            raise SimilarityError(f"dimension must be positive, got {dimension}")
        self.dimension = dimension
        self._vectorizer = HashingVectorizer(
            analyzer="char_wb",
            ngram_range=(3, 3),
            n_features=dimension,
            alternate_sign=False,
            norm="l2",
            lowercase=True,
        )

    def embed(self, text: str) -> EmbeddingVector:
        if not text or not text.strip():
            return EmbeddingVector(np.zeros(self.dimension))
        row = self._vectorizer.transform([text]).toarray()[0]
        return EmbeddingVector(row)

    def similarity(self, text_a: str, text_b: str) -> float:
        return cosine(self.embed(text_a), self.embed(text_b))


class RemoteEmbedder:
    """
    Embedding provider behind an HTTP endpoint sharing the backend wire shape.

    POST {text} -> {embedding: [floats]}
    """

    def __init__(self, url: str, token: str | None = None, timeout: float = 30.0):
        self.url = url
        self.token = token
        self.timeout = timeout
        self.dimension: int | None = None

    def embed(self, text: str) -> EmbeddingVector:
        headers = {"Content-Type": "application/json"}
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        try:
            r = requests.post(self.url, headers=headers, json={"text": text}, timeout=self.timeout)
        except TRANSIENT_ERRORS as e:
            raise TransportError(f"Embedding endpoint unreachable: {e}") from e
        except requests.RequestException as e:
            raise ProtocolError(f"Embedding request to {self.url} failed: {e}") from e
        if r.status_code >= 400:
            raise TransportError(f"HTTP {r.status_code} from {self.url}", status_code=r.status_code)
        try:
            values = r.json()["embedding"]
        except (ValueError, KeyError, TypeError) as e:
            raise ProtocolError(f"Embedding response lacks 'embedding': {e}") from e

        vector = EmbeddingVector(values)
        if self.dimension is None:
            self.dimension = vector.dimension
        elif vector.dimension != self.dimension:
            raise SimilarityError(f"Endpoint changed dimension: {self.dimension} -> {vector.dimension}")
        return vector

    def similarity(self, text_a: str, text_b: str) -> float:
        return cosine(self.embed(text_a), self.embed(text_b))


def tool_text(name: str, description: str, name_only: bool = False) -> str:
    """Text used to compare two tools."""
    return name if name_only else f"{name}: {description}"


def most_similar(embedder, query: str, texts: list[str]) -> tuple[int, float]:
    """
    Index and cosine of the text most similar to query (first wins on ties).

    Returns:
        (-1, 0.0) when texts is empty
    """
    best_idx, best_score = -1, -2.0
    q = embedder.embed(query)
    for i, text in enumerate(texts):
        score = cosine(q, embedder.embed(text))
        if score > best_score:
            best_idx, best_score = i, score
    if best_idx < 0:
        return -1, 0.0
    return best_idx, best_score


def is_near_duplicate(embedder, query: str, texts: list[str], threshold: float = DEFAULT_DEDUP_THRESHOLD) -> bool:
    """True when query's cosine with any text exceeds threshold."""
    _, score = most_similar(embedder, query, texts)
    return bool(texts) and score > threshold
