"""Reach-avoid planning with an RRT over the inflated-safe state space.

Plans minimize worst-case hazard exposure: the tree only ever contains
states whose inflated hazard costs are all nonpositive, so any returned
plan already satisfies the minimaximax objective with value <= 0 on the
base costs. Strategy iteration tries fallback goal sets in order until
one admits a safe plan.
"""

from __future__ import annotations

import json
import math
import os
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .calibration import Metric, ModeSet
from .embeddings import Embedder
from .world import GoalSet, WorldModel, worst_hazard

__all__ = [
    "PlannerConfig",
    "TrajectoryPlan",
    "PlanResult",
    "FallbackOutcome",
    "AttemptRecord",
    "max_step_size",
    "inflated_cost",
    "plan_rrt",
    "evaluate_objective",
    "plan_fallback",
    "dump_plan",
]


def max_step_size(
    rho: float, eta: float, eta_prime: float, hazard_radii: list[float]
) -> float:
    """Largest admissible planner step for the given tracking-error margins.

    min(rho - eta, min_h 2 * sqrt((eta' - eta)^2 + 2 * (l_h + eta) * (eta' - eta))).
    Any step strictly below this keeps a tracked path (error <= eta) clear of
    hazards that the inflated-radius planner avoided, and guarantees goal capture.
    """
    if eta <= 0:
        raise ValueError("eta must be positive")
    if eta_prime <= eta:
        raise ValueError("eta_prime must exceed eta")
    if rho <= eta:
        raise ValueError("rho must exceed eta")
    if not hazard_radii or any(l <= 0 for l in hazard_radii):
        raise ValueError("hazard radii must be positive and nonempty")
    margin = eta_prime - eta
    hazard_terms = [
        2.0 * math.sqrt(margin * margin + 2.0 * (l + eta) * margin) for l in hazard_radii
    ]
    return min(rho - eta, min(hazard_terms))


@dataclass(frozen=True)
class PlannerConfig:
    """RRT parameters, gated by the step-size bound at construction.

    hazard_radii must list the active avoidance radii (collision radius
    plus every mode radius); step_size is rejected unless strictly below
    the bound they imply.
    """

    step_size: float
    reach_radius: float  # rho
    tracking_error: float  # eta
    inflation: float  # eta'
    hazard_radii: tuple[float, ...]
    goal_bias: float = 0.1
    max_iterations: int = 5000
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hazard_radii", tuple(self.hazard_radii))
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if not (0.0 <= self.goal_bias <= 1.0):
            raise ValueError("goal_bias must lie in [0, 1]")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        bound = max_step_size(
            self.reach_radius, self.tracking_error, self.inflation, list(self.hazard_radii)
        )
        if self.step_size >= bound:
            raise ValueError(
                f"step_size {self.step_size} violates the tracking bound {bound:.6g}"
            )


@dataclass(frozen=True)
class TrajectoryPlan:
    """Waypoint plan with its objective value and per-waypoint hazard log."""

    waypoints: tuple[np.ndarray, ...]
    objective: float
    hazard_log: tuple[tuple[int, str, float], ...]
    goal: np.ndarray
    strategy_label: str

    def __post_init__(self):
        wps = tuple(np.asarray(w, dtype=float) for w in self.waypoints)
        if not wps:
            raise ValueError("plan must contain at least one waypoint")
        object.__setattr__(self, "waypoints", wps)
        object.__setattr__(self, "goal", np.asarray(self.goal, dtype=float))

    def max_gap(self) -> float:
        if len(self.waypoints) < 2:
            return 0.0
        pts = np.stack(self.waypoints)
        return float(np.linalg.norm(np.diff(pts, axis=0), axis=1).max())


@dataclass(frozen=True)
class PlanResult:
    """Outcome of one RRT query: a plan or a diagnosed failure."""

    plan: TrajectoryPlan | None
    status: str  # "ok" | "start-unsafe" | "exhausted"
    iterations: int
    rejection_counts: dict[str, int] = field(default_factory=dict)


@dataclass(frozen=True)
class AttemptRecord:
    strategy_label: str
    goal: np.ndarray
    status: str
    blocking_hazards: dict[str, int]


@dataclass(frozen=True)
class FallbackOutcome:
    """Result of strategy iteration: first safe plan, plus what was tried."""

    plan: TrajectoryPlan | None
    attempted: tuple[AttemptRecord, ...]

    def __post_init__(self):
        if self.plan is not None and self.plan.objective > 0.0:
            raise ValueError("fallback outcome may not carry an unsafe plan")


def inflated_cost(
    world: WorldModel,
    x: np.ndarray,
    mode_set: ModeSet | None,
    embedder: Embedder | None,
    metric: Metric = Metric.cosine(),
    eta_prime: float = 0.0,
) -> tuple[float, str]:
    """Worst hazard with every avoidance radius enlarged by eta_prime."""
    return worst_hazard(world, x, mode_set, embedder, metric, inflation=eta_prime)


def evaluate_objective(
    world: WorldModel,
    plan: TrajectoryPlan,
    mode_set: ModeSet | None,
    embedder: Embedder | None,
    metric: Metric = Metric.cosine(),
) -> tuple[float, tuple[int, str]]:
    """Max of the base (uninflated) hazard costs over the plan's waypoints."""
    best = -math.inf
    argmax = (0, "collision")
    for i, wp in enumerate(plan.waypoints):
        value, culprit = worst_hazard(world, wp, mode_set, embedder, metric)
        if value > best:
            best = value
            argmax = (i, culprit)
    return best, argmax


def plan_rrt(
    world: WorldModel,
    start: np.ndarray,
    goal: np.ndarray,
    config: PlannerConfig,
    mode_set: ModeSet | None,
    embedder: Embedder | None = None,
    metric: Metric = Metric.cosine(),
    strategy_label: str = "",
) -> PlanResult:
    """Grow a goal-biased RRT in the inflated-safe space toward B_rho(goal).

    New nodes extend a fixed step from their nearest neighbor; the node and
    the extension midpoint must both have nonpositive inflated hazard or
    the sample is rejected (the worst hazard at the failing point is
    tallied for interpretability). Deterministic for a fixed seed.
    """
    start = np.asarray(start, dtype=float)
    goal = np.asarray(goal, dtype=float)
    eta_prime = config.inflation

    def safe(x: np.ndarray) -> tuple[bool, str]:
        value, culprit = worst_hazard(world, x, mode_set, embedder, metric, inflation=eta_prime)
        return value <= 0.0, culprit

    start_ok, culprit = safe(start)
    if not start_ok:
        return PlanResult(None, "start-unsafe", 0, {culprit: 1})

    def finish(waypoints: list[np.ndarray], iterations: int, rejections: Counter) -> PlanResult:
        log = []
        best = -math.inf
        for i, wp in enumerate(waypoints):
            value, who = worst_hazard(world, wp, mode_set, embedder, metric)
            log.append((i, who, value))
            best = max(best, value)
        plan = TrajectoryPlan(tuple(waypoints), best, tuple(log), goal, strategy_label)
        return PlanResult(plan, "ok", iterations, dict(rejections))

    rejections: Counter = Counter()
    if np.linalg.norm(start - goal) <= config.reach_radius:
        return finish([start], 0, rejections)

    rng = np.random.default_rng(config.seed)
    nodes = [start]
    parents = [-1]
    positions = np.empty((config.max_iterations + 1, 3))
    positions[0] = start
    n_nodes = 1
    # Terminate inside rho - eta so the tracked endpoint stays in B_rho(goal).
    capture = config.reach_radius - config.tracking_error

    for iteration in range(1, config.max_iterations + 1):
        if rng.random() < config.goal_bias:
            sample = goal
        else:
            sample = world.bounds.sample(rng)
        dists = np.linalg.norm(positions[:n_nodes] - sample, axis=1)
        nearest_idx = int(np.argmin(dists))
        nearest = positions[nearest_idx]
        gap = float(dists[nearest_idx])
        if gap < 1e-12:
            continue
        if gap <= config.step_size:
            new = sample.copy()
        else:
            new = nearest + (sample - nearest) * (config.step_size / gap)
        if not world.bounds.contains(new):
            continue
        midpoint = (nearest + new) / 2.0
        ok, culprit = safe(new)
        if not ok:
            rejections[culprit] += 1
            continue
        ok, culprit = safe(midpoint)
        if not ok:
            rejections[culprit] += 1
            continue
        positions[n_nodes] = new
        nodes.append(new)
        parents.append(nearest_idx)
        n_nodes += 1
        if np.linalg.norm(new - goal) <= capture:
            waypoints = []
            idx = n_nodes - 1
            while idx >= 0:
                waypoints.append(nodes[idx])
                idx = parents[idx]
            waypoints.reverse()
            return finish(waypoints, iteration, rejections)

    return PlanResult(None, "exhausted", config.max_iterations, dict(rejections))


def plan_fallback(
    world: WorldModel,
    start: np.ndarray,
    strategies: list[GoalSet],
    config: PlannerConfig,
    mode_set: ModeSet | None,
    embedder: Embedder | None = None,
    metric: Metric = Metric.cosine(),
) -> FallbackOutcome:
    """Iterate strategies and goals in order until a safe plan appears.

    The first plan whose base objective is nonpositive wins; every failed
    attempt is recorded with the hazards that blocked it. A fully blocked
    strategy list yields an outcome without a plan, not an error.
    """
    if not strategies:
        raise ValueError("strategies must be nonempty")
    attempted = []
    for goal_set in strategies:
        for goal in goal_set.goals:
            # Goal-point validation first: a goal sitting inside an inflated
            # hazard region is rejected without spending the RRT budget.
            value, culprit = worst_hazard(
                world, goal, mode_set, embedder, metric, inflation=config.inflation
            )
            if value > 0.0:
                attempted.append(
                    AttemptRecord(goal_set.strategy_label, goal, "goal-unsafe", {culprit: 1})
                )
                continue
            result = plan_rrt(
                world,
                start,
                goal,
                config,
                mode_set,
                embedder,
                metric,
                strategy_label=goal_set.strategy_label,
            )
            if result.plan is not None and result.plan.objective <= 0.0:
                return FallbackOutcome(result.plan, tuple(attempted))
            status = result.status if result.plan is None else "unsafe-objective"
            attempted.append(
                AttemptRecord(goal_set.strategy_label, goal, status, result.rejection_counts)
            )
    return FallbackOutcome(None, tuple(attempted))


def dump_plan(outcome: FallbackOutcome, path: str | os.PathLike) -> None:
    """Write a fallback outcome (plan + attempt log) as JSON."""
    plan = outcome.plan
    doc = {
        "plan": None
        if plan is None
        else {
            "strategy": plan.strategy_label,
            "goal": plan.goal.tolist(),
            "objective": plan.objective,
            "waypoints": [w.tolist() for w in plan.waypoints],
            "hazard_log": [
                {"waypoint": i, "hazard": h, "cost": v} for i, h, v in plan.hazard_log
            ],
        },
        "attempted": [
            {
                "strategy": a.strategy_label,
                "goal": a.goal.tolist(),
                "status": a.status,
                "blocking_hazards": a.blocking_hazards,
            }
            for a in outcome.attempted
        ],
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=2)
