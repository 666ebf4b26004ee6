"""Embedding vectors, similarity measures, and embedding providers.

Embeddings are consumed from JSON corpus files or an HTTP embedding
service; a deterministic hash-based mock embedder stands in when no
external model is available, so the whole pipeline runs hermetically.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

__all__ = [
    "EmbeddingVector",
    "SafeCorpus",
    "PrecisionMatrix",
    "cosine_distance",
    "mahalanobis_distance",
    "compute_precision_matrix",
    "load_corpus",
    "dump_corpus",
    "mock_embed",
    "Embedder",
    "MockEmbedder",
    "CachingEmbedder",
    "HttpEmbedder",
    "CorpusSchemaError",
    "SingularCovarianceError",
    "EmbeddingServiceError",
]


class CorpusSchemaError(ValueError):
    """Raised when a corpus file does not conform to the JSON schema."""


class SingularCovarianceError(ValueError):
    """Raised when the (unregularized) sample covariance cannot be inverted."""


class EmbeddingServiceError(RuntimeError):
    """Raised when the remote embedding service fails or returns bad data."""


@dataclass(frozen=True)
class EmbeddingVector:
    """A dense real vector with strictly positive Euclidean norm."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=float)
        if arr.ndim != 1 or arr.size == 0:
            raise ValueError("embedding must be a non-empty 1-D vector")
        if not np.all(np.isfinite(arr)):
            raise ValueError("embedding contains non-finite values")
        if float(np.linalg.norm(arr)) <= 0.0:
            raise ValueError("embedding has zero norm")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)

    @property
    def dim(self) -> int:
        return int(self.values.size)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.values))


@dataclass(frozen=True)
class SafeCorpus:
    """Safe state descriptions paired with their embedding vectors."""

    entries: tuple[tuple[str, EmbeddingVector], ...]

    def __post_init__(self):
        entries = tuple(self.entries)
        if not entries:
            raise ValueError("corpus must contain at least one entry")
        dims = {vec.dim for _, vec in entries}
        if len(dims) != 1:
            raise ValueError(f"corpus embeddings have inconsistent dims: {sorted(dims)}")
        object.__setattr__(self, "entries", entries)

    @property
    def n(self) -> int:
        return len(self.entries)

    @property
    def dim(self) -> int:
        return self.entries[0][1].dim

    def matrix(self) -> np.ndarray:
        """Stack the embeddings into an (N, dim) array."""
        return np.stack([vec.values for _, vec in self.entries])

    @property
    def descriptions(self) -> tuple[str, ...]:
        return tuple(desc for desc, _ in self.entries)


@dataclass(frozen=True)
class PrecisionMatrix:
    """Symmetric positive-semidefinite matrix used as an inverse covariance."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("precision matrix must be square")
        if not np.allclose(m, m.T, atol=1e-8):
            raise ValueError("precision matrix is not symmetric within 1e-8")
        eigvals = np.linalg.eigvalsh(m)
        if eigvals.min() < -1e-8:
            raise ValueError(f"precision matrix is not PSD (min eigenvalue {eigvals.min():.3e})")
        m = m.copy()
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return int(self.matrix.shape[0])


def cosine_distance(a: EmbeddingVector, b: EmbeddingVector) -> float:
    """Cosine-based dissimilarity 1 - cos(a, b), in [0, 2].

    Symmetric and invariant to positive rescaling of either argument.
    """
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    cos = float(np.dot(a.values, b.values)) / (a.norm * b.norm)
    return 1.0 - cos


def compute_precision_matrix(corpus: SafeCorpus, regularizer: float = 1e-6) -> PrecisionMatrix:
    """Invert the (regularized) sample covariance of the corpus embeddings.

    Args:
        corpus: safe corpus with at least two entries.
        regularizer: nonnegative ridge added to the covariance diagonal;
            needed whenever N <= dim or the covariance is otherwise singular.
    """
    if corpus.n < 2:
        raise ValueError("need at least 2 corpus entries to estimate covariance")
    if regularizer < 0:
        raise ValueError("regularizer must be nonnegative")
    x = corpus.matrix()
    cov = np.cov(x, rowvar=False, ddof=1)
    cov = np.atleast_2d(cov)
    reg = cov + regularizer * np.eye(cov.shape[0])
    try:
        inv = np.linalg.inv(reg)
    except np.linalg.LinAlgError as exc:
        raise SingularCovarianceError(
            "covariance is singular; pass a positive regularizer"
        ) from exc
    if regularizer == 0.0:
        # np.linalg.inv can "succeed" on nearly singular input; reject those.
        if np.linalg.cond(reg) > 1e12:
            raise SingularCovarianceError(
                "covariance is numerically singular; pass a positive regularizer"
            )
    return PrecisionMatrix((inv + inv.T) / 2.0)


def mahalanobis_distance(
    e_t: EmbeddingVector, e_phi: EmbeddingVector, precision: PrecisionMatrix
) -> float:
    """Quadratic-form distance sqrt((e_t - e_phi)^T P (e_t - e_phi))."""
    if e_t.dim != e_phi.dim:
        raise ValueError(f"dimension mismatch: {e_t.dim} vs {e_phi.dim}")
    if precision.dim != e_t.dim:
        raise ValueError(f"precision dim {precision.dim} does not match vectors ({e_t.dim})")
    d = e_t.values - e_phi.values
    q = float(d @ precision.matrix @ d)
    if q < -1e-9:
        raise ValueError(f"quadratic form is negative ({q:.3e}); matrix invariants violated")
    return float(np.sqrt(max(q, 0.0)))


def load_corpus(path: str | os.PathLike) -> SafeCorpus:
    """Load an embedding corpus from its JSON file format.

    Schema: {"dim": int, "entries": [{"description": str, "embedding": [float, ...]}]}.
    """
    with open(path) as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as exc:
            raise CorpusSchemaError(f"invalid JSON in {path}: {exc}") from exc
    if not isinstance(doc, dict) or "dim" not in doc or "entries" not in doc:
        raise CorpusSchemaError("corpus file must be an object with 'dim' and 'entries'")
    dim = doc["dim"]
    if not isinstance(dim, int) or dim <= 0:
        raise CorpusSchemaError(f"'dim' must be a positive integer, got {dim!r}")
    records = doc["entries"]
    if not isinstance(records, list) or not records:
        raise CorpusSchemaError("'entries' must be a non-empty list")
    entries = []
    for i, rec in enumerate(records):
        if not isinstance(rec, dict) or "description" not in rec or "embedding" not in rec:
            raise CorpusSchemaError(f"record {i}: missing 'description' or 'embedding'")
        desc = rec["description"]
        if not isinstance(desc, str):
            raise CorpusSchemaError(f"record {i}: description must be a string")
        emb = rec["embedding"]
        if not isinstance(emb, list) or len(emb) != dim:
            raise CorpusSchemaError(
                f"record {i}: embedding length {len(emb) if isinstance(emb, list) else '?'} != dim {dim}"
            )
        try:
            vec = EmbeddingVector(np.asarray(emb, dtype=float))
        except ValueError as exc:
            raise CorpusSchemaError(f"record {i}: {exc}") from exc
        entries.append((desc, vec))
    return SafeCorpus(tuple(entries))


def dump_corpus(corpus: SafeCorpus, path: str | os.PathLike) -> None:
    """Serialize a corpus back to the JSON file format (float-exact)."""
    doc = {
        "dim": corpus.dim,
        "entries": [
            {"description": desc, "embedding": vec.values.tolist()}
            for desc, vec in corpus.entries
        ],
    }
    with open(path, "w") as f:
        json.dump(doc, f)


_TOKEN_RE = re.compile(r"[a-z0-9]+")


def _token_vector(token: str, dim: int, seed: int) -> np.ndarray:
    digest = hashlib.md5(f"{seed}:{token}".encode()).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
    return rng.standard_normal(dim)


def mock_embed(description: str, dim: int = 64, seed: int = 0) -> EmbeddingVector:
    """Deterministic bag-of-tokens hash embedding, unit norm.

    Each token maps to a fixed pseudo-random direction derived from
    (seed, token); the description embeds as the normalized token sum, so
    descriptions sharing tokens land near each other in the space.
    """
    if dim < 2:
        raise ValueError("dim must be >= 2")
    tokens = _TOKEN_RE.findall(description.lower())
    if not tokens:
        tokens = [description if description else "<empty>"]
    total = np.zeros(dim)
    for tok in tokens:
        total += _token_vector(tok, dim, seed)
    norm = np.linalg.norm(total)
    if norm < 1e-12:
        # Pathological cancellation; fall back to hashing the whole string.
        total = _token_vector("\x00".join(tokens), dim, seed)
        norm = np.linalg.norm(total)
    return EmbeddingVector(total / norm)


class Embedder(Protocol):
    """Anything that maps a text description to an embedding vector."""

    def embed(self, text: str) -> EmbeddingVector: ...


@dataclass(frozen=True)
class MockEmbedder:
    """Hermetic embedder backed by mock_embed."""

    dim: int = 64
    seed: int = 0

    def embed(self, text: str) -> EmbeddingVector:
        return mock_embed(text, self.dim, self.seed)


@dataclass
class CachingEmbedder:
    """Memoizes an inner embedder by exact description text."""

    inner: Embedder
    _cache: dict = field(default_factory=dict, repr=False)
    hits: int = 0
    misses: int = 0

    def embed(self, text: str) -> EmbeddingVector:
        cached = self._cache.get(text)
        if cached is not None:
            self.hits += 1
            return cached
        self.misses += 1
        vec = self.inner.embed(text)
        self._cache[text] = vec
        return vec


ENDPOINT_ENV_VAR = "SEMSAFE_EMBED_ENDPOINT"
TOKEN_ENV_VAR = "SEMSAFE_EMBED_TOKEN"


class HttpEmbedder:
    """Client for a single request/response embedding service.

    Wire format: POST {"texts": [str, ...]} -> {"embeddings": [[float, ...], ...]}.
    """

    def __init__(self, endpoint: str, token: str | None = None, client=None):
        import httpx

        self.endpoint = endpoint
        self.token = token
        self._client = client or httpx.Client()

    @classmethod
    def from_environment(cls) -> "HttpEmbedder":
        endpoint = os.environ.get(ENDPOINT_ENV_VAR)
        if not endpoint:
            raise EmbeddingServiceError(f"{ENDPOINT_ENV_VAR} is not set")
        return cls(endpoint, token=os.environ.get(TOKEN_ENV_VAR))

    def embed_batch(self, texts: list[str]) -> list[EmbeddingVector]:
        headers = {}
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        try:
            resp = self._client.post(self.endpoint, json={"texts": texts}, headers=headers)
            resp.raise_for_status()
            body = resp.json()
        except Exception as exc:
            raise EmbeddingServiceError(f"embedding request failed: {exc}") from exc
        embeddings = body.get("embeddings") if isinstance(body, dict) else None
        if not isinstance(embeddings, list) or len(embeddings) != len(texts):
            raise EmbeddingServiceError("malformed embedding service response")
        return [EmbeddingVector(np.asarray(e, dtype=float)) for e in embeddings]

    def embed(self, text: str) -> EmbeddingVector:
        return self.embed_batch([text])[0]
