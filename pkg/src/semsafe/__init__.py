"""Semantic safety calibration, reach-avoid fallback planning, and tracked execution."""

from .calibration import (
    CalibratedThreshold,
    Classification,
    FailureMode,
    Metric,
    ModeSet,
    calibrate_mode_set,
    calibrate_threshold,
    classify_description,
    sweep_alpha,
)
from .embeddings import (
    CachingEmbedder,
    EmbeddingVector,
    HttpEmbedder,
    MockEmbedder,
    PrecisionMatrix,
    SafeCorpus,
    compute_precision_matrix,
    cosine_distance,
    load_corpus,
    mahalanobis_distance,
    mock_embed,
)
from .planner import (
    FallbackOutcome,
    PlannerConfig,
    TrajectoryPlan,
    evaluate_objective,
    max_step_size,
    plan_fallback,
    plan_rrt,
)
from .tracker import (
    ControlInput,
    ExecutionTrace,
    RobotState,
    TrackerConfig,
    execute_fallback,
    replan_loop,
    step_dynamics,
    track_plan,
)
from .world import (
    Bounds,
    CameraModel,
    Concept,
    GoalSet,
    WorldModel,
    advance_world,
    collision_cost,
    nearby,
    pixel_to_world,
    semantic_cost,
    validate_goals,
    worst_hazard,
)

__version__ = "0.1.0"
