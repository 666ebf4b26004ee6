"""Shared fixtures and independent oracles used across the test modules."""

import math

import numpy as np
import pytest

from semsafe.calibration import FailureMode, Metric, calibrate_mode_set
from semsafe.embeddings import EmbeddingVector, MockEmbedder, SafeCorpus


def unit(*vals) -> EmbeddingVector:
    arr = np.asarray(vals, dtype=float)
    return EmbeddingVector(arr / np.linalg.norm(arr))


def vector_with_score(score: float, dim: int = 2) -> EmbeddingVector:
    """A unit vector whose cosine dissimilarity to e1 = (1, 0, ...) is `score`.

    Lets tests choose calibration score sets exactly: sim = 1 - cos, so the
    vector (1 - score, sqrt(1 - (1 - score)^2), 0, ...) scores `score`
    against the first basis vector. Valid for score in [0, 2].
    """
    cos = 1.0 - score
    if not -1.0 <= cos <= 1.0:
        raise ValueError("score must lie in [0, 2]")
    sin = math.sqrt(max(0.0, 1.0 - cos * cos))
    vals = np.zeros(dim)
    vals[0] = cos
    vals[1] = sin
    return EmbeddingVector(vals if np.linalg.norm(vals) > 0 else np.eye(dim)[1])


E1 = EmbeddingVector(np.array([1.0, 0.0]))


def corpus_with_scores(scores) -> SafeCorpus:
    """Corpus whose cosine scores against E1 are exactly `scores`."""
    return SafeCorpus(
        tuple((f"entry {i}", vector_with_score(s)) for i, s in enumerate(scores))
    )


def brute_force_delta(scores, alpha: float) -> float:
    """Independent threshold oracle: largest candidate delta drawn from the
    score set such that at least (1 - alpha) * N scores lie at or above it.
    Deliberately avoids ceil/sort tricks shared with the implementation.
    """
    n = len(scores)
    feasible = [d for d in scores if sum(s >= d for s in scores) >= (1.0 - alpha) * n]
    return max(feasible)


class StubEmbedder:
    """Embedder returning canned vectors for exact description strings."""

    def __init__(self, table: dict, default: EmbeddingVector | None = None):
        self.table = dict(table)
        self.default = default

    def embed(self, text: str) -> EmbeddingVector:
        if text in self.table:
            return self.table[text]
        if self.default is not None:
            return self.default
        raise KeyError(f"no stub embedding for {text!r}")


@pytest.fixture
def mock_embedder():
    return MockEmbedder(dim=32, seed=3)


@pytest.fixture
def calibrated_pair(mock_embedder):
    """A tiny calibrated mode set plus the corpus it was calibrated on."""
    corpus = SafeCorpus(
        tuple(
            (text, mock_embedder.embed(text))
            for text in (
                "clear rooftop",
                "empty corridor",
                "parked forklift far away",
                "quiet loading dock",
                "open field",
            )
        )
    )
    modes = [
        FailureMode("fire", mock_embedder.embed("fire"), 4.0),
        FailureMode("person", mock_embedder.embed("person"), 4.0),
    ]
    mode_set = calibrate_mode_set(corpus, modes, alpha=0.0, metric=Metric.cosine())
    return corpus, mode_set
