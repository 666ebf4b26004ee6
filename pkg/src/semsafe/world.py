"""Scene model: labeled 3-D concepts, hazard cost fields, and goal handling.

The two cost fields share a sign convention: a point is hazardous for a
cost iff the cost is strictly positive. A world with no concepts yields a
large negative sentinel (minus the bounds diagonal) for every cost.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, replace

import numpy as np

from .calibration import CalibratedThreshold, FailureMode, Metric, ModeSet
from .embeddings import Embedder

__all__ = [
    "Concept",
    "Bounds",
    "WorldModel",
    "GoalSet",
    "CameraModel",
    "COLLISION_HAZARD",
    "nearby",
    "collision_cost",
    "semantic_cost",
    "worst_hazard",
    "pixel_to_world",
    "world_to_pixel",
    "validate_goals",
    "advance_world",
    "inflate_for_motion",
    "load_scene",
    "load_camera",
    "load_goal_sets",
]

COLLISION_HAZARD = "collision"

DESCRIPTION_PREFIX = "surroundings include: "
EMPTY_DESCRIPTION = ""


def _vec3(x) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.shape != (3,):
        raise ValueError(f"expected a 3-vector, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class Concept:
    """A labeled point object, optionally moving, optionally padded.

    padding enlarges the concept's effective reach; the dynamic-obstacle
    replanner uses it to account for worst-case motion between replans.
    """

    label: str
    position: np.ndarray
    velocity: np.ndarray | None = None
    padding: float = 0.0

    def __post_init__(self):
        if not self.label:
            raise ValueError("concept label must be nonempty")
        object.__setattr__(self, "position", _vec3(self.position))
        if self.velocity is not None:
            vel = _vec3(self.velocity)
            if not np.all(np.isfinite(vel)):
                raise ValueError("concept velocity must be finite")
            object.__setattr__(self, "velocity", vel)
        if self.padding < 0:
            raise ValueError("concept padding must be nonnegative")


@dataclass(frozen=True)
class Bounds:
    """Axis-aligned box in world coordinates."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo, hi = _vec3(self.lower), _vec3(self.upper)
        if not np.all(hi > lo):
            raise ValueError("bounds upper must exceed lower on every axis")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    def contains(self, x: np.ndarray) -> bool:
        return bool(np.all(x >= self.lower) and np.all(x <= self.upper))

    def clamp(self, x: np.ndarray) -> np.ndarray:
        return np.clip(x, self.lower, self.upper)

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.upper - self.lower))

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(self.lower, self.upper)


@dataclass(frozen=True)
class WorldModel:
    """Immutable snapshot of the environment at one timestamp."""

    concepts: tuple[Concept, ...]
    bounds: Bounds
    collision_radius: float  # meters
    timestamp: float = 0.0
    description_prefix: str = DESCRIPTION_PREFIX

    def __post_init__(self):
        concepts = tuple(self.concepts)
        if self.collision_radius <= 0:
            raise ValueError("collision_radius must be positive")
        for c in concepts:
            if not self.bounds.contains(c.position):
                raise ValueError(f"concept {c.label!r} lies outside world bounds")
        object.__setattr__(self, "concepts", concepts)

    @property
    def sentinel(self) -> float:
        """Cost value meaning "no hazard anywhere near": minus the bounds diagonal."""
        return -self.bounds.diagonal


@dataclass(frozen=True)
class GoalSet:
    """Concrete goal locations realizing one fallback strategy."""

    strategy_label: str
    goals: tuple[np.ndarray, ...]
    reach_radius: float

    def __post_init__(self):
        if self.reach_radius <= 0:
            raise ValueError("reach_radius must be positive")
        object.__setattr__(self, "goals", tuple(_vec3(g) for g in self.goals))


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera: intrinsics plus a camera-to-world rigid transform."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray  # 3x3 camera-to-world
    translation: np.ndarray

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx <= self.width and 0 <= self.cy <= self.height):
            raise ValueError("principal point must lie inside the image")
        r = np.asarray(self.rotation, dtype=float)
        if r.shape != (3, 3):
            raise ValueError("rotation must be 3x3")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", _vec3(self.translation))


def _effective_distances(world: WorldModel, x: np.ndarray) -> np.ndarray:
    """Distance from x to each concept, reduced by that concept's padding."""
    if not world.concepts:
        return np.empty(0)
    positions = np.stack([c.position for c in world.concepts])
    dists = np.linalg.norm(positions - x, axis=1)
    paddings = np.array([c.padding for c in world.concepts])
    return dists - paddings


def nearby(
    world: WorldModel, x: np.ndarray, l: float
) -> tuple[str, list[Concept]]:
    """Concepts within distance l of x (closed ball) and their description.

    Concepts sort by ascending distance (labels break ties) so the
    description text is deterministic; an empty neighborhood yields the
    designated empty description.
    """
    if l <= 0:
        raise ValueError("neighborhood radius must be positive")
    x = _vec3(x)
    dists = _effective_distances(world, x)
    hits = [
        (d, c.label, c)
        for d, c in zip(dists, world.concepts)
        if d <= l
    ]
    hits.sort(key=lambda t: (t[0], t[1]))
    concepts = [c for _, _, c in hits]
    if not concepts:
        return EMPTY_DESCRIPTION, []
    description = world.description_prefix + ", ".join(c.label for c in concepts)
    return description, concepts


def collision_cost(world: WorldModel, x: np.ndarray, inflation: float = 0.0) -> float:
    """(l_c + inflation) minus the distance to the nearest concept.

    Positive iff x is within the (inflated) collision radius of some
    concept; the sentinel when the world is empty.
    """
    dists = _effective_distances(world, _vec3(x))
    if dists.size == 0:
        return world.sentinel
    return (world.collision_radius + inflation) - float(dists.min())


def semantic_cost(
    world: WorldModel,
    x: np.ndarray,
    mode: FailureMode,
    threshold: CalibratedThreshold,
    embedder: Embedder,
    metric: Metric = Metric.cosine(),
    inflation: float = 0.0,
) -> float:
    """delta_phi minus the similarity score of the local scene description.

    Looks up concepts within (l_phi + inflation) of x, embeds the canonical
    description, and compares against the mode's calibrated threshold. An
    empty neighborhood is safe by fiat: no concepts, no semantic hazard.
    """
    if threshold.mode_label != mode.label:
        raise ValueError(
            f"threshold for {threshold.mode_label!r} does not match mode {mode.label!r}"
        )
    description, concepts = nearby(world, x, mode.radius + inflation)
    if not concepts:
        return world.sentinel
    e = embedder.embed(description)
    return threshold.delta - metric.sim(e, mode.embedding)


def worst_hazard(
    world: WorldModel,
    x: np.ndarray,
    mode_set: ModeSet | None,
    embedder: Embedder | None = None,
    metric: Metric = Metric.cosine(),
    inflation: float = 0.0,
) -> tuple[float, str]:
    """Max over the collision cost and every semantic cost, with its culprit.

    Ties break toward the collision hazard. mode_set may be None (or empty)
    for purely geometric evaluation.
    """
    x = _vec3(x)
    best = collision_cost(world, x, inflation)
    culprit = COLLISION_HAZARD
    if mode_set is not None and mode_set.modes:
        if not mode_set.calibrated:
            raise RuntimeError("mode set is not calibrated")
        if embedder is None:
            raise ValueError("embedder required when evaluating semantic modes")
        # Modes sharing a radius share one neighborhood lookup and one
        # embedding call; RRT queries hit this path heavily.
        by_radius: dict[float, list] = {}
        for mode, thr in mode_set.pairs():
            by_radius.setdefault(mode.radius, []).append((mode, thr))
        for radius, pairs in by_radius.items():
            description, concepts = nearby(world, x, radius + inflation)
            if not concepts:
                continue  # sentinel can never beat the collision term
            e = embedder.embed(description)
            for mode, thr in pairs:
                value = thr.delta - metric.sim(e, mode.embedding)
                if value > best:
                    best = value
                    culprit = mode.label
    return best, culprit


def pixel_to_world(camera: CameraModel, point, depth: float) -> np.ndarray:
    """Back-project a normalized pixel (coords in [0, 100]) at a given depth.

    Denormalizes to pixel units, applies the inverse pinhole model, then
    the camera-to-world transform.
    """
    px, py = float(point[0]), float(point[1])
    if depth <= 0:
        raise ValueError("depth must be positive")
    if not (0.0 <= px <= 100.0 and 0.0 <= py <= 100.0):
        raise ValueError("normalized pixel coordinates must lie in [0, 100]^2")
    u = px / 100.0 * camera.width
    v = py / 100.0 * camera.height
    cam = np.array(
        [
            depth * (u - camera.cx) / camera.fx,
            depth * (v - camera.cy) / camera.fy,
            depth,
        ]
    )
    return camera.rotation @ cam + camera.translation


def world_to_pixel(camera: CameraModel, point: np.ndarray) -> tuple[np.ndarray, float]:
    """Forward-project a world point to normalized pixel coords and depth."""
    cam = camera.rotation.T @ (_vec3(point) - camera.translation)
    depth = float(cam[2])
    if depth <= 0:
        raise ValueError("point is behind the camera")
    u = camera.fx * cam[0] / depth + camera.cx
    v = camera.fy * cam[1] / depth + camera.cy
    return np.array([u / camera.width * 100.0, v / camera.height * 100.0]), depth


def validate_goals(
    world: WorldModel,
    goal_set: GoalSet,
    mode_set: ModeSet | None,
    embedder: Embedder | None = None,
    metric: Metric = Metric.cosine(),
    inflation: float = 0.0,
) -> GoalSet:
    """Drop goals whose worst hazard, with radii inflated, is positive.

    Order is preserved; the result may be empty.
    """
    if inflation < 0:
        raise ValueError("inflation must be nonnegative")
    kept = tuple(
        g
        for g in goal_set.goals
        if worst_hazard(world, g, mode_set, embedder, metric, inflation)[0] <= 0.0
    )
    return replace(goal_set, goals=kept)


def advance_world(world: WorldModel, dt: float) -> WorldModel:
    """Move every concept by velocity * dt, clamping to the world bounds."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    moved = []
    for c in world.concepts:
        if c.velocity is None:
            moved.append(c)
        else:
            moved.append(replace(c, position=world.bounds.clamp(c.position + c.velocity * dt)))
    return replace(world, concepts=tuple(moved), timestamp=world.timestamp + dt)


def inflate_for_motion(world: WorldModel, horizon: float) -> WorldModel:
    """Pad moving concepts by their worst-case travel over one replan period."""
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    padded = tuple(
        replace(c, padding=c.padding + float(np.linalg.norm(c.velocity)) * horizon)
        if c.velocity is not None
        else c
        for c in world.concepts
    )
    return replace(world, concepts=padded)


def load_scene(path: str | os.PathLike) -> WorldModel:
    """Load a scene JSON file.

    Schema: {"bounds": {"min": [..], "max": [..]}, "collision_radius_m": float,
    "concepts": [{"label": str, "position": [..], "velocity": [..] | null}]}.
    """
    with open(path) as f:
        doc = json.load(f)
    bounds = Bounds(np.asarray(doc["bounds"]["min"]), np.asarray(doc["bounds"]["max"]))
    concepts = tuple(
        Concept(
            rec["label"],
            np.asarray(rec["position"]),
            None if rec.get("velocity") is None else np.asarray(rec["velocity"]),
        )
        for rec in doc.get("concepts", [])
    )
    return WorldModel(concepts, bounds, float(doc["collision_radius_m"]))


def load_camera(path: str | os.PathLike) -> CameraModel:
    with open(path) as f:
        doc = json.load(f)
    return CameraModel(
        fx=float(doc["fx"]),
        fy=float(doc["fy"]),
        cx=float(doc["cx"]),
        cy=float(doc["cy"]),
        width=int(doc["width"]),
        height=int(doc["height"]),
        rotation=np.asarray(doc.get("rotation", np.eye(3).tolist())),
        translation=np.asarray(doc.get("translation", [0.0, 0.0, 0.0])),
    )


def load_goal_sets(
    path: str | os.PathLike, camera: CameraModel | None = None
) -> list[GoalSet]:
    """Load goal-cache JSON: one or more strategies with world or pixel points.

    Pixel entries ({"pixel": [x, y], "depth_m": d}) require a camera model
    for back-projection; world entries ({"world": [x, y, z]}) load directly.
    """
    with open(path) as f:
        doc = json.load(f)
    strategies = doc["strategies"] if "strategies" in doc else [doc]
    goal_sets = []
    for strat in strategies:
        points = []
        for rec in strat["points"]:
            if "world" in rec:
                points.append(np.asarray(rec["world"], dtype=float))
            elif "pixel" in rec:
                if camera is None:
                    raise ValueError("pixel goal entries require a camera model")
                points.append(pixel_to_world(camera, rec["pixel"], float(rec["depth_m"])))
            else:
                raise ValueError("goal entry must have 'world' or 'pixel'")
        goal_sets.append(
            GoalSet(strat["strategy"], tuple(points), float(strat["reach_radius_m"]))
        )
    return goal_sets
