"""Conformal calibration of per-failure-mode similarity thresholds.

Thresholds are order statistics of safe-data similarity scores: the
largest delta such that at least ceil((1 - alpha) * N) safe scores lie at
or above it. A description is unsafe for a mode when its similarity score
falls strictly below that mode's threshold.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .embeddings import (
    Embedder,
    EmbeddingVector,
    PrecisionMatrix,
    SafeCorpus,
    cosine_distance,
    mahalanobis_distance,
)

__all__ = [
    "FailureMode",
    "CalibratedThreshold",
    "ModeSet",
    "Metric",
    "ModeVerdict",
    "Classification",
    "RocPoint",
    "calibrate_threshold",
    "calibrate_mode_set",
    "classify_description",
    "sweep_alpha",
    "load_failure_modes",
    "dump_mode_set",
    "load_mode_set",
]

DEFAULT_ALPHA = 0.05


@dataclass(frozen=True)
class FailureMode:
    """A high-level hazard category with its embedding and physical radius."""

    label: str
    embedding: EmbeddingVector
    radius: float  # meters; neighborhood radius used by the semantic cost field

    def __post_init__(self):
        if not self.label:
            raise ValueError("failure mode label must be nonempty")
        if self.radius <= 0:
            raise ValueError("failure mode radius must be positive")


@dataclass(frozen=True)
class CalibratedThreshold:
    mode_label: str
    delta: float
    alpha: float
    n_calibration: int

    def __post_init__(self):
        if not (0.0 <= self.alpha < 1.0):
            raise ValueError("alpha must lie in [0, 1)")
        if self.n_calibration < 1:
            raise ValueError("n_calibration must be >= 1")


@dataclass(frozen=True)
class Metric:
    """Similarity-metric selector: cosine or Mahalanobis."""

    name: str
    precision: PrecisionMatrix | None = None

    @classmethod
    def cosine(cls) -> "Metric":
        return cls("cosine")

    @classmethod
    def mahalanobis(cls, precision: PrecisionMatrix) -> "Metric":
        return cls("mahalanobis", precision)

    def sim(self, a: EmbeddingVector, b: EmbeddingVector) -> float:
        """Dissimilarity score; smaller means semantically closer."""
        if self.name == "cosine":
            return cosine_distance(a, b)
        if self.name == "mahalanobis":
            if self.precision is None:
                raise ValueError("mahalanobis metric requires a precision matrix")
            return mahalanobis_distance(a, b, self.precision)
        raise ValueError(f"unknown metric {self.name!r}")


@dataclass(frozen=True)
class ModeSet:
    """Failure modes with (optionally) one calibrated threshold per mode."""

    modes: tuple[FailureMode, ...]
    thresholds: tuple[CalibratedThreshold, ...] = ()

    def __post_init__(self):
        modes = tuple(self.modes)
        thresholds = tuple(self.thresholds)
        labels = [m.label for m in modes]
        if len(set(labels)) != len(labels):
            raise ValueError("duplicate failure mode labels")
        if thresholds:
            if [t.mode_label for t in thresholds] != labels:
                raise ValueError("thresholds must align one-to-one with modes by label")
        object.__setattr__(self, "modes", modes)
        object.__setattr__(self, "thresholds", thresholds)

    @property
    def calibrated(self) -> bool:
        return bool(self.thresholds)

    def threshold_for(self, label: str) -> CalibratedThreshold:
        for t in self.thresholds:
            if t.mode_label == label:
                return t
        raise KeyError(label)

    def pairs(self) -> list[tuple[FailureMode, CalibratedThreshold]]:
        if not self.calibrated:
            raise RuntimeError("mode set is not calibrated")
        return list(zip(self.modes, self.thresholds))


def conformal_quantile_index(n: int, alpha: float) -> int:
    """k such that the k-th largest score is the calibrated threshold."""
    return math.ceil((1.0 - alpha) * n)


def calibrate_threshold(
    corpus: SafeCorpus,
    mode: FailureMode,
    alpha: float = DEFAULT_ALPHA,
    metric: Metric = Metric.cosine(),
) -> CalibratedThreshold:
    """Calibrate one mode's threshold as the k-th largest safe score.

    k = ceil((1 - alpha) * N); ties are kept under the descending sort,
    which realizes the sup-over-delta definition exactly.
    """
    if not (0.0 <= alpha < 1.0):
        raise ValueError("alpha must lie in [0, 1)")
    scores = np.array([metric.sim(vec, mode.embedding) for _, vec in corpus.entries])
    k = conformal_quantile_index(corpus.n, alpha)
    delta = float(np.sort(scores)[::-1][k - 1])
    return CalibratedThreshold(mode.label, delta, alpha, corpus.n)


def calibrate_mode_set(
    corpus: SafeCorpus,
    modes: list[FailureMode],
    alpha: float = DEFAULT_ALPHA,
    metric: Metric = Metric.cosine(),
) -> ModeSet:
    """Independently calibrate every mode against the same safe corpus."""
    mode_set = ModeSet(tuple(modes))  # validates unique labels
    thresholds = tuple(calibrate_threshold(corpus, m, alpha, metric) for m in mode_set.modes)
    return ModeSet(mode_set.modes, thresholds)


@dataclass(frozen=True)
class ModeVerdict:
    mode_label: str
    sim: float
    margin: float  # delta - sim; unsafe iff strictly positive
    unsafe: bool


@dataclass(frozen=True)
class Classification:
    verdicts: tuple[ModeVerdict, ...]
    unsafe: bool


def classify_description(
    embedding: EmbeddingVector,
    mode_set: ModeSet,
    metric: Metric = Metric.cosine(),
) -> Classification:
    """Per-mode and overall safe/unsafe verdicts for one description embedding.

    A mode fires iff sim < delta (strict: a score exactly at the threshold
    is safe); the overall verdict is the disjunction over modes.
    """
    if not mode_set.calibrated:
        raise RuntimeError("mode set is not calibrated")
    verdicts = []
    for mode, thr in mode_set.pairs():
        s = metric.sim(embedding, mode.embedding)
        margin = thr.delta - s
        verdicts.append(ModeVerdict(mode.label, s, margin, margin > 0.0))
    return Classification(tuple(verdicts), any(v.unsafe for v in verdicts))


@dataclass(frozen=True)
class RocPoint:
    alpha: float
    fpr: float
    tpr: float


def sweep_alpha(
    corpus: SafeCorpus,
    modes: list[FailureMode],
    alphas: list[float],
    safe_test: list[EmbeddingVector],
    unsafe_test: list[EmbeddingVector],
    metric: Metric = Metric.cosine(),
) -> list[RocPoint]:
    """Recalibrate at each alpha and report (FPR, TPR) on the labeled test set.

    Positives are the unsafe test embeddings; a test point counts as flagged
    when any mode's score falls strictly below that mode's threshold.
    """
    if not safe_test or not unsafe_test:
        raise ValueError("test sets must be nonempty")
    if not alphas:
        raise ValueError("alphas must be nonempty")
    if any(not (0.0 <= a < 1.0) for a in alphas):
        raise ValueError("every alpha must lie in [0, 1)")
    if list(alphas) != sorted(alphas):
        raise ValueError("alphas must be sorted ascending")

    mode_set = ModeSet(tuple(modes))
    # Score matrices computed once; thresholds per alpha are order statistics.
    calib = np.stack(
        [
            np.sort([metric.sim(vec, m.embedding) for _, vec in corpus.entries])[::-1]
            for m in mode_set.modes
        ]
    )  # (M, N) descending
    safe_scores = np.stack(
        [[metric.sim(e, m.embedding) for m in mode_set.modes] for e in safe_test]
    )  # (S, M)
    unsafe_scores = np.stack(
        [[metric.sim(e, m.embedding) for m in mode_set.modes] for e in unsafe_test]
    )

    points = []
    n = corpus.n
    for alpha in alphas:
        k = conformal_quantile_index(n, alpha)
        deltas = calib[:, k - 1]  # (M,)
        fpr = float(np.mean(np.any(safe_scores < deltas, axis=1)))
        tpr = float(np.mean(np.any(unsafe_scores < deltas, axis=1)))
        points.append(RocPoint(alpha, fpr, tpr))
    return points


def load_failure_modes(path: str | os.PathLike, embedder: Embedder) -> list[FailureMode]:
    """Load a failure-mode list file and embed each label.

    Schema: {"modes": [{"label": str, "radius_m": float}]}. Records that
    already carry an "embedding" field reuse it instead of calling the
    embedder.
    """
    with open(path) as f:
        doc = json.load(f)
    records = doc.get("modes") if isinstance(doc, dict) else None
    if not isinstance(records, list) or not records:
        raise ValueError("mode file must be an object with a non-empty 'modes' list")
    modes = []
    for i, rec in enumerate(records):
        if not isinstance(rec, dict) or "label" not in rec or "radius_m" not in rec:
            raise ValueError(f"mode record {i}: missing 'label' or 'radius_m'")
        if "embedding" in rec and rec["embedding"] is not None:
            vec = EmbeddingVector(np.asarray(rec["embedding"], dtype=float))
        else:
            vec = embedder.embed(rec["label"])
        modes.append(FailureMode(rec["label"], vec, float(rec["radius_m"])))
    return modes


def dump_mode_set(mode_set: ModeSet, path: str | os.PathLike) -> None:
    """Serialize a calibrated mode set, embeddings included."""
    doc = {
        "modes": [
            {
                "label": m.label,
                "radius_m": m.radius,
                "embedding": m.embedding.values.tolist(),
                "delta": t.delta,
                "alpha": t.alpha,
                "n_calibration": t.n_calibration,
            }
            for m, t in mode_set.pairs()
        ]
    }
    with open(path, "w") as f:
        json.dump(doc, f)


def load_mode_set(path: str | os.PathLike) -> ModeSet:
    with open(path) as f:
        doc = json.load(f)
    modes, thresholds = [], []
    for rec in doc["modes"]:
        vec = EmbeddingVector(np.asarray(rec["embedding"], dtype=float))
        modes.append(FailureMode(rec["label"], vec, float(rec["radius_m"])))
        thresholds.append(
            CalibratedThreshold(
                rec["label"], float(rec["delta"]), float(rec["alpha"]), int(rec["n_calibration"])
            )
        )
    return ModeSet(tuple(modes), tuple(thresholds))
