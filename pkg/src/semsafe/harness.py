"""Evaluation harness: classification metrics, synthetic data, benchmarks.

Everything here is deterministic given a seed, so reported numbers are
reproducible bit-for-bit. Classification metrics follow the usual
convention that unsafe descriptions are the positive class.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, replace

import numpy as np

from .calibration import (
    DEFAULT_ALPHA,
    FailureMode,
    Metric,
    ModeSet,
    RocPoint,
    calibrate_mode_set,
    classify_description,
    conformal_quantile_index,
    sweep_alpha,
)
from .embeddings import (
    CachingEmbedder,
    Embedder,
    EmbeddingVector,
    MockEmbedder,
    SafeCorpus,
    mock_embed,
)
from .planner import PlannerConfig
from .tracker import RobotState, TrackerConfig, execute_fallback
from .world import (
    Bounds,
    Concept,
    GoalSet,
    WorldModel,
    validate_goals,
    worst_hazard,
)

__all__ = [
    "LabeledDataset",
    "ClassificationReport",
    "PlanningReport",
    "SyntheticSpec",
    "BenchmarkConfig",
    "METHODS",
    "evaluate_classification",
    "ablation_safe_mode",
    "generate_synthetic_corpus",
    "generate_benchmark_scene",
    "benchmark_mode_set",
    "benchmark_calibration_corpus",
    "run_planning_benchmark",
    "score_auroc",
    "auroc_from_roc",
    "emit_plot_data",
    "default_alpha_grid",
]

METHODS = ("semantic", "no-semantic", "blanket")


def default_alpha_grid() -> list[float]:
    return [i / 50.0 for i in range(50)]  # 0.00, 0.02, ..., 0.98


@dataclass(frozen=True)
class LabeledDataset:
    """Calibration corpus plus held-out safe and unsafe test descriptions."""

    calibration: SafeCorpus
    safe_test: tuple[tuple[str, EmbeddingVector], ...]
    unsafe_test: tuple[tuple[str, EmbeddingVector], ...]

    def __post_init__(self):
        safe_test = tuple(self.safe_test)
        unsafe_test = tuple(self.unsafe_test)
        overlap = set(self.calibration.descriptions) & {d for d, _ in safe_test}
        if overlap:
            raise ValueError(
                f"calibration and safe_test descriptions overlap: {sorted(overlap)[:3]}"
            )
        object.__setattr__(self, "safe_test", safe_test)
        object.__setattr__(self, "unsafe_test", unsafe_test)

    @property
    def safe_embeddings(self) -> list[EmbeddingVector]:
        return [v for _, v in self.safe_test]

    @property
    def unsafe_embeddings(self) -> list[EmbeddingVector]:
        return [v for _, v in self.unsafe_test]


@dataclass(frozen=True)
class ClassificationReport:
    tpr: float
    tnr: float
    balanced_accuracy: float
    tp: int
    fn: int
    tn: int
    fp: int
    roc_points: tuple[RocPoint, ...]
    auroc: float

    def __post_init__(self):
        if abs(self.balanced_accuracy - (self.tpr + self.tnr) / 2.0) > 1e-12:
            raise ValueError("balanced_accuracy must equal (tpr + tnr) / 2")


@dataclass(frozen=True)
class PlanningReport:
    method: str
    n_runs: int
    safe_count: int
    unsafe_count: int
    noplan_count: int
    seeds: tuple[int, ...] = ()

    def __post_init__(self):
        if self.safe_count + self.unsafe_count + self.noplan_count != self.n_runs:
            raise ValueError("outcome counts must partition the runs")

    @property
    def safe_rate(self) -> float:
        return self.safe_count / self.n_runs

    @property
    def unsafe_rate(self) -> float:
        return self.unsafe_count / self.n_runs

    @property
    def noplan_rate(self) -> float:
        return self.noplan_count / self.n_runs


def auroc_from_roc(points: list[RocPoint]) -> float:
    """Trapezoidal area under (fpr, tpr) points, closed at (0,0) and (1,1)."""
    pts = sorted({(p.fpr, p.tpr) for p in points} | {(0.0, 0.0), (1.0, 1.0)})
    fpr = np.array([p[0] for p in pts])
    tpr = np.array([p[1] for p in pts])
    return float(np.trapezoid(tpr, fpr))


def score_auroc(positive_scores, negative_scores) -> float:
    """Rank-based AUROC: P(positive score > negative score), ties half-counted."""
    pos = np.asarray(positive_scores, dtype=float)
    neg = np.asarray(negative_scores, dtype=float)
    if pos.size == 0 or neg.size == 0:
        raise ValueError("both score lists must be nonempty")
    diff = pos[:, None] - neg[None, :]
    return float((np.sum(diff > 0) + 0.5 * np.sum(diff == 0)) / (pos.size * neg.size))


def evaluate_classification(
    dataset: LabeledDataset,
    mode_set: ModeSet,
    metric: Metric = Metric.cosine(),
    alphas: list[float] | None = None,
) -> ClassificationReport:
    """Confusion metrics at the calibrated operating point plus a full ROC sweep."""
    if not dataset.safe_test or not dataset.unsafe_test:
        raise ValueError("test partitions must be nonempty")
    if not mode_set.calibrated:
        raise RuntimeError("mode set is not calibrated")
    tp = sum(
        classify_description(e, mode_set, metric).unsafe for e in dataset.unsafe_embeddings
    )
    fp = sum(
        classify_description(e, mode_set, metric).unsafe for e in dataset.safe_embeddings
    )
    fn = len(dataset.unsafe_test) - tp
    tn = len(dataset.safe_test) - fp
    tpr = tp / (tp + fn)
    tnr = tn / (tn + fp)
    roc = sweep_alpha(
        dataset.calibration,
        list(mode_set.modes),
        alphas if alphas is not None else default_alpha_grid(),
        dataset.safe_embeddings,
        dataset.unsafe_embeddings,
        metric,
    )
    return ClassificationReport(
        tpr=tpr,
        tnr=tnr,
        balanced_accuracy=(tpr + tnr) / 2.0,
        tp=tp,
        fn=fn,
        tn=tn,
        fp=fp,
        roc_points=tuple(roc),
        auroc=auroc_from_roc(roc),
    )


def ablation_safe_mode(
    dataset: LabeledDataset,
    embedder: Embedder,
    metric: Metric = Metric.cosine(),
    alpha: float = DEFAULT_ALPHA,
    alphas: list[float] | None = None,
    safe_label: str = "Safe",
) -> ClassificationReport:
    """Single-mode ablation with the inverted decision direction.

    Calibrates against the distance to one "Safe" embedding and flags a
    description as unsafe when it sits strictly *farther* from "Safe" than
    the (1 - alpha) upper quantile of the calibration scores.
    """
    if not dataset.safe_test or not dataset.unsafe_test:
        raise ValueError("test partitions must be nonempty")
    e_safe = embedder.embed(safe_label)
    calib = np.sort([metric.sim(v, e_safe) for _, v in dataset.calibration.entries])
    n = dataset.calibration.n

    def delta_at(a: float) -> float:
        return float(calib[conformal_quantile_index(n, a) - 1])  # k-th smallest

    safe_scores = np.array([metric.sim(v, e_safe) for v in dataset.safe_embeddings])
    unsafe_scores = np.array([metric.sim(v, e_safe) for v in dataset.unsafe_embeddings])

    delta = delta_at(alpha)
    tp = int(np.sum(unsafe_scores > delta))
    fp = int(np.sum(safe_scores > delta))
    fn = len(unsafe_scores) - tp
    tn = len(safe_scores) - fp
    tpr = tp / (tp + fn)
    tnr = tn / (tn + fp)

    grid = alphas if alphas is not None else default_alpha_grid()
    roc = [
        RocPoint(a, float(np.mean(safe_scores > delta_at(a))), float(np.mean(unsafe_scores > delta_at(a))))
        for a in grid
    ]
    return ClassificationReport(
        tpr=tpr,
        tnr=tnr,
        balanced_accuracy=(tpr + tnr) / 2.0,
        tp=tp,
        fn=fn,
        tn=tn,
        fp=fp,
        roc_points=tuple(roc),
        auroc=auroc_from_roc(roc),
    )


DEFAULT_MODE_LABELS = (
    "Near Human",
    "High Temperature",
    "Strong Wind",
    "Unstable Surface",
    "Chemical Spill",
    "Worker Injury",
    "Power Lines",
    "Moving Vehicle",
    "Low Visibility",
    "Unauthorized Access",
)


@dataclass(frozen=True)
class SyntheticSpec:
    """Generator settings for the synthetic classification dataset."""

    mode_labels: tuple[str, ...] = DEFAULT_MODE_LABELS
    n_calibration: int = 200
    n_safe_test: int = 200
    n_unsafe_test: int = 200
    dim: int = 64
    separation: float = 0.8  # 0: unsafe ~ safe; 1: unsafe sits on a mode embedding
    mode_radius: float = 4.0

    def __post_init__(self):
        if not self.mode_labels:
            raise ValueError("mode_labels must be nonempty")
        if self.separation < 0:
            raise ValueError("separation must be nonnegative")
        if min(self.n_calibration, self.n_safe_test, self.n_unsafe_test) < 1:
            raise ValueError("all dataset sizes must be positive")


def generate_synthetic_corpus(
    spec: SyntheticSpec, seed: int = 0
) -> tuple[LabeledDataset, list[FailureMode]]:
    """Desk-scale synthetic dataset with a controllable safe/unsafe separation.

    Safe descriptions embed as (hash-derived) random unit vectors scattered
    away from the mode embeddings; each unsafe description starts from such
    a vector and is displaced toward one randomly chosen mode by the
    separation fraction along the connecting direction.
    """
    rng = np.random.default_rng(seed)
    modes = [
        FailureMode(label, mock_embed(label, spec.dim, seed), spec.mode_radius)
        for label in spec.mode_labels
    ]

    def fresh_description(prefix: str) -> str:
        # One unique random token per description, so the hash embedder
        # yields effectively independent directions for every entry.
        return f"{prefix}{rng.integers(1 << 48):012x}"

    def embed_one(desc: str) -> EmbeddingVector:
        return mock_embed(desc, spec.dim, seed)

    calib = []
    for _ in range(spec.n_calibration):
        d = fresh_description("scene c")
        calib.append((d, embed_one(d)))
    safe_test = []
    for _ in range(spec.n_safe_test):
        d = fresh_description("scene s")
        safe_test.append((d, embed_one(d)))
    unsafe_test = []
    for _ in range(spec.n_unsafe_test):
        d = fresh_description("scene u")
        base = embed_one(d).values
        target = modes[int(rng.integers(len(modes)))].embedding.values
        v = base + spec.separation * (target - base)
        norm = np.linalg.norm(v)
        if norm < 1e-12:
            v, norm = target, 1.0
        unsafe_test.append((d, EmbeddingVector(v / norm)))
    dataset = LabeledDataset(SafeCorpus(tuple(calib)), tuple(safe_test), tuple(unsafe_test))
    return dataset, modes


# ---------------------------------------------------------------------------
# Planning benchmark: rooftop scenes with safe / unsafe concept clusters.


@dataclass(frozen=True)
class BenchmarkConfig:
    """Scene generator settings for the planning-rate comparison."""

    roof_centers: tuple[tuple[float, float, float], ...] = (
        (-12.0, -12.0, 5.0),
        (-12.0, 12.0, 5.0),
        (12.0, -12.0, 5.0),
        (12.0, 12.0, 5.0),
        (0.0, 0.0, 5.0),
    )
    bounds_lower: tuple[float, float, float] = (-20.0, -20.0, 0.0)
    bounds_upper: tuple[float, float, float] = (20.0, 20.0, 25.0)
    start_position: tuple[float, float, float] = (0.0, 0.0, 18.0)
    p_empty: float = 0.25
    p_safe: float = 0.35  # remainder is p_unsafe
    collision_radius: float = 2.0  # l_c, simulator preset
    blanket_radius: float = 4.0  # naive keep-away distance for the blanket baseline
    mode_radius: float = 4.0  # l_phi for every mode
    reach_radius: float = 1.0
    cluster_size: int = 2
    concept_distance: tuple[float, float] = (2.7, 3.5)  # from roof center, meters
    safe_labels: tuple[str, ...] = ("tree", "antenna", "skylight", "garden", "chimney")
    unsafe_labels: tuple[str, ...] = ("fire", "person", "firetruck", "crane")
    embed_dim: int = 128
    embed_seed: int = 7

    def __post_init__(self):
        if not (0 <= self.p_empty and 0 <= self.p_safe and self.p_empty + self.p_safe <= 1):
            raise ValueError("occupancy probabilities must be valid")

    @property
    def p_unsafe(self) -> float:
        return 1.0 - self.p_empty - self.p_safe

    def embedder(self) -> CachingEmbedder:
        return CachingEmbedder(MockEmbedder(self.embed_dim, self.embed_seed))


def benchmark_calibration_corpus(config: BenchmarkConfig, embedder: Embedder) -> SafeCorpus:
    """All safe singleton and pair descriptions, as the planner will see them.

    Covering every neighborhood the generator can produce lets alpha = 0
    calibration guarantee no false alarms on safe rooftops.
    """
    labels = sorted(config.safe_labels)
    texts = [f"surroundings include: {l}" for l in labels]
    for i, a in enumerate(labels):
        for b in labels[i + 1 :]:
            texts.append(f"surroundings include: {a}, {b}")
            texts.append(f"surroundings include: {b}, {a}")
    return SafeCorpus(tuple((t, embedder.embed(t)) for t in texts))


def benchmark_mode_set(config: BenchmarkConfig, embedder: Embedder) -> ModeSet:
    """Failure modes named after the unsafe concept classes, alpha = 0."""
    modes = [
        FailureMode(label, embedder.embed(label), config.mode_radius)
        for label in config.unsafe_labels
    ]
    corpus = benchmark_calibration_corpus(config, embedder)
    return calibrate_mode_set(corpus, modes, alpha=0.0)


def generate_benchmark_scene(
    config: BenchmarkConfig, rng: np.random.Generator
) -> tuple[WorldModel, GoalSet, list[str]]:
    """One rooftop scene: occupancy per roof, goals at roof centers.

    Returns the world, a single landing strategy with shuffled goal order,
    and the ground-truth occupancy label per goal ("empty"/"safe"/"unsafe").
    """
    concepts = []
    roof_kinds = []
    centers = [np.asarray(c, dtype=float) for c in config.roof_centers]
    lo, hi = config.concept_distance
    for center in centers:
        u = rng.random()
        if u < config.p_empty:
            kind = "empty"
        elif u < config.p_empty + config.p_safe:
            kind = "safe"
        else:
            kind = "unsafe"
        roof_kinds.append(kind)
        if kind == "empty":
            continue
        pool = config.safe_labels if kind == "safe" else config.unsafe_labels
        labels = rng.choice(len(pool), size=min(config.cluster_size, len(pool)), replace=False)
        for li in labels:
            angle = rng.uniform(0.0, 2.0 * np.pi)
            dist = rng.uniform(lo, hi)
            pos = center + np.array([dist * np.cos(angle), dist * np.sin(angle), 0.0])
            concepts.append(Concept(pool[li], pos))
    bounds = Bounds(np.asarray(config.bounds_lower), np.asarray(config.bounds_upper))
    world = WorldModel(tuple(concepts), bounds, config.collision_radius)
    order = rng.permutation(len(centers))
    goals = tuple(centers[i] for i in order)
    kinds = [roof_kinds[i] for i in order]
    return world, GoalSet("land on rooftops", goals, config.reach_radius), kinds


def default_benchmark_planner_config(
    config: BenchmarkConfig, method: str, seed: int = 0
) -> PlannerConfig:
    if method == "blanket":
        radii = (config.blanket_radius,)
    elif method == "no-semantic":
        radii = (config.collision_radius,)
    else:
        radii = (config.collision_radius, config.mode_radius)
    return PlannerConfig(
        step_size=0.5,
        reach_radius=config.reach_radius,
        tracking_error=0.3,
        inflation=0.5,
        hazard_radii=radii,
        goal_bias=0.1,
        max_iterations=3000,
        seed=seed,
    )


def run_planning_benchmark(
    config: BenchmarkConfig,
    n_runs: int,
    method: str,
    planner_config: PlannerConfig | None = None,
    tracker_config: TrackerConfig | None = None,
    seed: int = 0,
) -> PlanningReport:
    """Seeded planning runs for one method, judged against the true hazards.

    The method only controls what the *planner* sees (full semantic fields,
    collision only, or a blanket keep-away radius); every executed trace is
    audited with the true semantic cost field, so a baseline that plans
    into a semantically unsafe region is counted as an unsafe plan.
    """
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}")
    embedder = config.embedder()
    metric = Metric.cosine()
    true_modes = benchmark_mode_set(config, embedder)
    tracker_config = tracker_config or TrackerConfig()

    safe = unsafe = noplan = 0
    seeds = []
    for run in range(n_runs):
        run_seed = seed + run
        seeds.append(run_seed)
        rng = np.random.default_rng(run_seed)
        world, goal_set, _ = generate_benchmark_scene(config, rng)

        if method == "semantic":
            plan_modes: ModeSet | None = true_modes
            plan_world = world
        elif method == "no-semantic":
            plan_modes = None
            plan_world = world
        else:  # blanket: every concept is a 4 m avoid region, nothing semantic
            plan_modes = None
            plan_world = replace(world, collision_radius=config.blanket_radius)

        pc = planner_config or default_benchmark_planner_config(config, method)
        pc = replace(pc, seed=run_seed)

        filtered = validate_goals(
            plan_world, goal_set, plan_modes, embedder, metric, inflation=pc.inflation
        )
        if not filtered.goals:
            noplan += 1
            continue
        initial = RobotState(np.asarray(config.start_position, dtype=float), np.zeros(3))
        trace, _ = execute_fallback(
            plan_world, initial, [filtered], pc, tracker_config, plan_modes, embedder, metric
        )
        if trace is None:
            noplan += 1
            continue
        true_worst = max(
            worst_hazard(world, s.position, true_modes, embedder, metric)[0]
            for s in trace.states
        )
        if true_worst > 0.0:
            unsafe += 1
        else:
            safe += 1
    return PlanningReport(method, n_runs, safe, unsafe, noplan, tuple(seeds))


def emit_plot_data(report, path: str | os.PathLike) -> None:
    """Write a report as CSV plot data.

    ClassificationReport -> rows of alpha,fpr,tpr; PlanningReport -> one
    row of method,safe,unsafe,noplan rates. Values round-trip exactly.
    """
    if isinstance(report, ClassificationReport):
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["alpha", "fpr", "tpr"])
            for p in report.roc_points:
                writer.writerow([repr(p.alpha), repr(p.fpr), repr(p.tpr)])
    elif isinstance(report, PlanningReport):
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["method", "safe", "unsafe", "noplan"])
            writer.writerow(
                [
                    report.method,
                    repr(report.safe_rate),
                    repr(report.unsafe_rate),
                    repr(report.noplan_rate),
                ]
            )
    else:
        raise TypeError(f"cannot emit plot data for {type(report).__name__}")
