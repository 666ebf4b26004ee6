"""Double-integrator simulation, plan tracking, and the replan-execute loop.

The robot is a 3-D double integrator advanced exactly per step. A
per-axis regulator (infinite-horizon LQR by default, receding-horizon
gains in "mpc" mode) drives the robot along RRT waypoint plans; waypoints
advance when captured within min(step/2, eta). The replan loop adds
moving-concept worlds with periodic replanning and strategy switching.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import solve_discrete_are

from .calibration import Metric, ModeSet
from .embeddings import Embedder
from .planner import FallbackOutcome, PlannerConfig, TrajectoryPlan, plan_fallback
from .world import GoalSet, WorldModel, advance_world, inflate_for_motion, worst_hazard

__all__ = [
    "RobotState",
    "ControlInput",
    "TrackerConfig",
    "ExecutionTrace",
    "ReplanEvent",
    "step_dynamics",
    "track_plan",
    "execute_fallback",
    "replan_loop",
    "dump_trace",
]


@dataclass(frozen=True)
class RobotState:
    position: np.ndarray
    velocity: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=float)
        vel = np.asarray(self.velocity, dtype=float)
        if pos.shape != (3,) or vel.shape != (3,):
            raise ValueError("state position and velocity must be 3-vectors")
        if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(vel))):
            raise ValueError("state components must be finite")
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "velocity", vel)


@dataclass(frozen=True)
class ControlInput:
    acceleration: np.ndarray

    def __post_init__(self):
        acc = np.asarray(self.acceleration, dtype=float)
        if acc.shape != (3,):
            raise ValueError("acceleration must be a 3-vector")
        object.__setattr__(self, "acceleration", acc)


@dataclass(frozen=True)
class TrackerConfig:
    """Regulator and simulation parameters.

    error_bound (eta) is a declared contract, not a derived quantity: the
    stress-calibration helper in the test suite measures worst deviation
    for a gain set and the planner consumes eta as a theorem premise.
    """

    dt: float = 0.1
    accel_bound: float = 5.0  # per-axis |a| limit, m/s^2
    position_weight: float = 8.0
    velocity_weight: float = 2.0
    control_weight: float = 0.1
    horizon: int = 20
    error_bound: float = 0.3  # eta, meters
    controller: str = "lqr"  # "lqr" | "mpc"

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.accel_bound <= 0 or self.error_bound <= 0:
            raise ValueError("accel_bound and error_bound must be positive")
        if min(self.position_weight, self.velocity_weight, self.control_weight) <= 0:
            raise ValueError("cost weights must be positive")
        if self.controller not in ("lqr", "mpc"):
            raise ValueError("controller must be 'lqr' or 'mpc'")


@dataclass
class ExecutionTrace:
    """Executed states/controls with safety and tracking diagnostics."""

    states: list[RobotState]
    controls: list[ControlInput]
    worst_base_cost: float
    reached: bool
    max_tracking_deviation: float
    error_bound_violated: bool = False

    def __post_init__(self):
        if len(self.states) != len(self.controls) + 1:
            raise ValueError("states must be one longer than controls")


def step_dynamics(
    state: RobotState, control: ControlInput, dt: float, accel_bound: float | None = None
) -> RobotState:
    """Exact one-step update of the per-axis double integrator."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    a = control.acceleration
    if accel_bound is not None and np.any(np.abs(a) > accel_bound + 1e-9):
        raise ValueError("control exceeds the acceleration bound")
    pos = state.position + state.velocity * dt + 0.5 * a * dt * dt
    vel = state.velocity + a * dt
    return RobotState(pos, vel)


def _axis_matrices(dt: float) -> tuple[np.ndarray, np.ndarray]:
    a = np.array([[1.0, dt], [0.0, 1.0]])
    b = np.array([[0.5 * dt * dt], [dt]])
    return a, b


@lru_cache(maxsize=None)
def _regulator_gains(
    dt: float, qp: float, qv: float, r: float, controller: str, horizon: int
) -> tuple[float, float]:
    """Per-axis feedback gains (k_pos, k_vel) for u = -k_p e_p - k_v e_v."""
    a, b = _axis_matrices(dt)
    q = np.diag([qp, qv])
    rr = np.array([[r]])
    if controller == "lqr":
        p = solve_discrete_are(a, b, q, rr)
    else:
        # Receding horizon: backward Riccati recursion, first-step gain.
        p = q
        for _ in range(horizon):
            p = q + a.T @ p @ a - a.T @ p @ b @ np.linalg.inv(rr + b.T @ p @ b) @ b.T @ p @ a
    k = np.linalg.inv(rr + b.T @ p @ b) @ b.T @ p @ a
    return float(k[0, 0]), float(k[0, 1])


def _polyline_distance(point: np.ndarray, waypoints: tuple[np.ndarray, ...]) -> float:
    """Distance from a point to the piecewise-linear path through waypoints."""
    if len(waypoints) == 1:
        return float(np.linalg.norm(point - waypoints[0]))
    best = math.inf
    for a, b in zip(waypoints[:-1], waypoints[1:]):
        seg = b - a
        denom = float(seg @ seg)
        t = 0.0 if denom == 0.0 else float(np.clip((point - a) @ seg / denom, 0.0, 1.0))
        best = min(best, float(np.linalg.norm(point - (a + t * seg))))
    return best


class WaypointTracker:
    """Stateful regulator stepping a robot along one plan's waypoints."""

    def __init__(self, plan: TrajectoryPlan, config: TrackerConfig):
        self.plan = plan
        self.config = config
        self.gains = _regulator_gains(
            config.dt,
            config.position_weight,
            config.velocity_weight,
            config.control_weight,
            config.controller,
            config.horizon,
        )
        gap = plan.max_gap()
        self.capture = min(gap / 2.0, config.error_bound) if gap > 0 else config.error_bound
        self.index = 0
        self.done = False
        self.max_deviation = 0.0

    def observe(self, state: RobotState) -> None:
        """Advance waypoint capture and deviation bookkeeping for a state."""
        self.max_deviation = max(
            self.max_deviation, _polyline_distance(state.position, self.plan.waypoints)
        )
        while (
            self.index < len(self.plan.waypoints)
            and np.linalg.norm(state.position - self.plan.waypoints[self.index]) <= self.capture
        ):
            self.index += 1
        if self.index >= len(self.plan.waypoints):
            self.done = True

    def control(self, state: RobotState) -> ControlInput:
        """Regulate toward the current target waypoint with zero target velocity."""
        # After the final capture, hold position at the last waypoint.
        target = self.plan.waypoints[min(self.index, len(self.plan.waypoints) - 1)]
        kp, kv = self.gains
        a = -kp * (state.position - target) - kv * state.velocity
        a = np.clip(a, -self.config.accel_bound, self.config.accel_bound)
        return ControlInput(a)

    def step(self, state: RobotState) -> tuple[RobotState, ControlInput]:
        u = self.control(state)
        nxt = step_dynamics(state, u, self.config.dt, self.config.accel_bound)
        self.observe(nxt)
        return nxt, u


def _default_step_budget(plan: TrajectoryPlan, config: TrackerConfig) -> int:
    return 400 + 200 * len(plan.waypoints)


def track_plan(
    plan: TrajectoryPlan,
    initial: RobotState,
    config: TrackerConfig,
    max_steps: int | None = None,
) -> ExecutionTrace:
    """Track a waypoint plan from an initial state near its start.

    Terminates when the final waypoint is captured or the step budget runs
    out; a deviation beyond error_bound flags the trace rather than
    aborting, so callers can treat it as a failed theorem premise.
    """
    if np.linalg.norm(initial.position - plan.waypoints[0]) > config.error_bound:
        raise ValueError("initial position is farther than error_bound from the plan start")
    tracker = WaypointTracker(plan, config)
    tracker.observe(initial)
    states = [initial]
    controls = []
    budget = max_steps if max_steps is not None else _default_step_budget(plan, config)
    state = initial
    for _ in range(budget):
        if tracker.done:
            break
        state, u = tracker.step(state)
        states.append(state)
        controls.append(u)
    return ExecutionTrace(
        states=states,
        controls=controls,
        worst_base_cost=math.nan,
        reached=tracker.done,
        max_tracking_deviation=tracker.max_deviation,
        error_bound_violated=tracker.max_deviation > config.error_bound,
    )


def _trace_worst_cost(
    states: list[RobotState],
    world: WorldModel,
    mode_set: ModeSet | None,
    embedder: Embedder | None,
    metric: Metric,
) -> float:
    return max(
        worst_hazard(world, s.position, mode_set, embedder, metric)[0] for s in states
    )


def execute_fallback(
    world: WorldModel,
    initial: RobotState,
    strategies: list[GoalSet],
    planner_config: PlannerConfig,
    tracker_config: TrackerConfig,
    mode_set: ModeSet | None,
    embedder: Embedder | None = None,
    metric: Metric = Metric.cosine(),
) -> tuple[ExecutionTrace | None, FallbackOutcome]:
    """Plan a fallback, track it, and audit the executed states' base costs."""
    if planner_config.inflation <= tracker_config.error_bound:
        raise ValueError("planner inflation (eta') must exceed tracker error_bound (eta)")
    outcome = plan_fallback(
        world, initial.position, strategies, planner_config, mode_set, embedder, metric
    )
    if outcome.plan is None:
        return None, outcome
    trace = track_plan(outcome.plan, initial, tracker_config)
    trace.worst_base_cost = _trace_worst_cost(trace.states, world, mode_set, embedder, metric)
    if trace.reached:
        final = trace.states[-1].position
        trace.reached = bool(
            np.linalg.norm(final - outcome.plan.goal) <= planner_config.reach_radius
        )
    return trace, outcome


@dataclass(frozen=True)
class ReplanEvent:
    step: int
    trigger: str  # "initial" | "periodic" | "strategy-switch" | "no-plan"
    strategy_label: str | None
    goal: np.ndarray | None


def replan_loop(
    world: WorldModel,
    initial: RobotState,
    strategies: list[GoalSet],
    planner_config: PlannerConfig,
    tracker_config: TrackerConfig,
    mode_set: ModeSet | None,
    embedder: Embedder | None = None,
    metric: Metric = Metric.cosine(),
    replan_period: int = 10,
    max_steps: int = 5000,
) -> tuple[ExecutionTrace | None, list[ReplanEvent]]:
    """Closed loop: track, advance the world, periodically replan.

    Moving concepts get their hazard radii padded by worst-case travel over
    one replanning period, and every period the fallback is re-solved from
    the robot's current position (switching strategies when the current
    goal becomes infeasible). A static world never triggers a replan, so
    the loop reduces exactly to execute_fallback's behavior.
    """
    if replan_period < 1:
        raise ValueError("replan_period must be >= 1")
    dynamic = any(
        c.velocity is not None and float(np.linalg.norm(c.velocity)) > 0.0
        for c in world.concepts
    )
    tau = replan_period * tracker_config.dt

    def solve(current_world: WorldModel, start: np.ndarray) -> FallbackOutcome:
        plan_world = inflate_for_motion(current_world, tau) if dynamic else current_world
        return plan_fallback(
            plan_world, start, strategies, planner_config, mode_set, embedder, metric
        )

    events: list[ReplanEvent] = []
    outcome = solve(world, initial.position)
    if outcome.plan is None:
        events.append(ReplanEvent(0, "no-plan", None, None))
        return None, events
    events.append(
        ReplanEvent(0, "initial", outcome.plan.strategy_label, outcome.plan.goal)
    )

    tracker = WaypointTracker(outcome.plan, tracker_config)
    tracker.observe(initial)
    state = initial
    states = [initial]
    controls: list[ControlInput] = []
    worst = worst_hazard(world, state.position, mode_set, embedder, metric)[0]
    max_deviation = tracker.max_deviation
    step = 0

    while not tracker.done and step < max_steps:
        for _ in range(replan_period):
            if tracker.done or step >= max_steps:
                break
            if dynamic:
                world = advance_world(world, tracker_config.dt)
            state, u = tracker.step(state)
            states.append(state)
            controls.append(u)
            worst = max(
                worst, worst_hazard(world, state.position, mode_set, embedder, metric)[0]
            )
            step += 1
        max_deviation = max(max_deviation, tracker.max_deviation)
        if tracker.done or not dynamic:
            continue
        new_outcome = solve(world, state.position)
        if new_outcome.plan is None:
            events.append(ReplanEvent(step, "no-plan", None, None))
            continue  # keep tracking the previous plan
        trigger = (
            "strategy-switch"
            if new_outcome.plan.strategy_label != outcome.plan.strategy_label
            else "periodic"
        )
        events.append(
            ReplanEvent(step, trigger, new_outcome.plan.strategy_label, new_outcome.plan.goal)
        )
        outcome = new_outcome
        tracker = WaypointTracker(outcome.plan, tracker_config)
        tracker.observe(state)

    max_deviation = max(max_deviation, tracker.max_deviation)
    reached = tracker.done and bool(
        np.linalg.norm(states[-1].position - outcome.plan.goal)
        <= planner_config.reach_radius
    )
    trace = ExecutionTrace(
        states=states,
        controls=controls,
        worst_base_cost=worst,
        reached=reached,
        max_tracking_deviation=max_deviation,
        error_bound_violated=max_deviation > tracker_config.error_bound,
    )
    return trace, events


def dump_trace(
    trace: ExecutionTrace, path: str | os.PathLike, events: list[ReplanEvent] | None = None
) -> None:
    """Write an execution trace (and any replan events) as JSON."""
    doc = {
        "states": [
            {"position": s.position.tolist(), "velocity": s.velocity.tolist()}
            for s in trace.states
        ],
        "controls": [c.acceleration.tolist() for c in trace.controls],
        "worst_base_cost": trace.worst_base_cost,
        "reached": trace.reached,
        "max_tracking_deviation": trace.max_tracking_deviation,
        "error_bound_violated": trace.error_bound_violated,
        "replan_events": [
            {
                "step": e.step,
                "trigger": e.trigger,
                "strategy": e.strategy_label,
                "goal": None if e.goal is None else np.asarray(e.goal).tolist(),
            }
            for e in (events or [])
        ],
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=2)
