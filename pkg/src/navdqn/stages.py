"""Randomized training stages and the motion of dynamic obstacles."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import yaml

from .geometry import (
    Circle,
    Obstacle,
    ObstacleClass,
    Polygon,
    Pose,
    WorldGeometry,
    _shape_clearance,
)

MAX_PLACEMENT_ATTEMPTS = 1000


class StageError(ValueError):
    pass


class StageKind(str, Enum):
    STATIC = "static"
    DYNAMIC = "dynamic"
    SEMANTIC = "semantic"


# obstacle counts used when a stage is requested by kind only
KIND_DEFAULTS: dict[StageKind, dict[str, int]] = {
    StageKind.STATIC: {"n_static": 3, "n_dynamic": 0, "n_humans": 0},
    StageKind.DYNAMIC: {"n_static": 3, "n_dynamic": 2, "n_humans": 0},
    StageKind.SEMANTIC: {"n_static": 3, "n_dynamic": 1, "n_humans": 1},
}


@dataclass(frozen=True)
class StageSpec:
    kind: StageKind = StageKind.STATIC
    arena_size: float = 4.0
    n_static: int = 3
    n_dynamic: int = 0
    n_humans: int = 0
    seed: int = 0
    obstacle_speed: float = 0.1
    stop_rate: float = 0.01
    stop_duration: float = 2.0
    goal_radius: float = 0.15
    robot_radius: float = 0.11
    spawn_clearance: float = 0.3
    static_size_min: float = 0.1
    static_size_max: float = 0.25
    dynamic_radius: float = 0.1
    human_radius: float = 0.2

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", StageKind(self.kind))
        if min(self.n_static, self.n_dynamic, self.n_humans) < 0:
            raise StageError("obstacle counts must be non-negative")
        if self.kind is StageKind.STATIC and (self.n_dynamic or self.n_humans):
            raise StageError("static stages cannot hold dynamic obstacles")
        if self.kind is StageKind.DYNAMIC and self.n_humans:
            raise StageError("humans only appear in semantic stages")
        if self.kind is StageKind.SEMANTIC and self.n_humans < 1:
            raise StageError("semantic stages need at least one human")
        if self.arena_size <= 0 or self.goal_radius <= 0 or self.robot_radius <= 0:
            raise StageError("arena size, goal radius and robot radius must be positive")
        if not 0.0 <= self.stop_rate <= 1.0:
            raise StageError("stop_rate must be a probability")
        if not 0 < self.static_size_min <= self.static_size_max:
            raise StageError("static obstacle size range is invalid")

    @classmethod
    def for_kind(cls, kind: StageKind | str, **overrides: Any) -> "StageSpec":
        kind = StageKind(kind)
        return cls(kind=kind, **{**KIND_DEFAULTS[kind], **overrides})

    @property
    def semantic(self) -> bool:
        return self.kind is StageKind.SEMANTIC

    def to_dict(self) -> dict[str, Any]:
        out = dataclasses.asdict(self)
        out["kind"] = self.kind.value
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "StageSpec":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise StageError(f"unknown stage keys: {sorted(unknown)}")
        if "kind" in data:
            return cls.for_kind(data["kind"], **{k: v for k, v in data.items() if k != "kind"})
        return cls(**data)


def load_stage_file(path: str | Path) -> StageSpec:
    data = yaml.safe_load(Path(path).read_text()) or {}
    if not isinstance(data, dict):
        raise StageError(f"{path}: expected a key-value document")
    return StageSpec.from_dict(data)


def save_stage_file(spec: StageSpec, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(spec.to_dict(), sort_keys=False))


@dataclass(frozen=True)
class DynamicObstacle:
    center: tuple[float, float]
    radius: float
    cls: ObstacleClass
    speed: float
    heading: float
    stop_rate: float = 0.0
    stop_timer: float = 0.0

    def __post_init__(self) -> None:
        if self.cls not in (ObstacleClass.HUMAN, ObstacleClass.ROBOT):
            raise StageError("dynamic obstacles are humans or robots")
        if self.cls is ObstacleClass.ROBOT and self.stop_rate != 0.0:
            raise StageError("robot obstacles never stop")
        if self.stop_timer < 0:
            raise StageError("stop_timer must be non-negative")

    @property
    def shape(self) -> Circle:
        return Circle(self.center, self.radius)

    def as_obstacle(self) -> Obstacle:
        return Obstacle(self.shape, self.cls)


@dataclass(frozen=True)
class GoalSpec:
    position: tuple[float, float]
    radius: float


@dataclass(frozen=True)
class WorldState:
    spec: StageSpec
    geometry: WorldGeometry  # walls + static obstacles
    dynamic: tuple[DynamicObstacle, ...]
    goal: GoalSpec
    robot: Pose
    keep_clear: tuple[tuple[float, float], ...] = field(default=())

    @property
    def half_size(self) -> float:
        return self.spec.arena_size / 2.0

    def scene(self) -> WorldGeometry:
        """Walls, static and dynamic obstacles as one geometry snapshot."""
        if not self.dynamic:
            return self.geometry
        return self.geometry.with_obstacles([d.as_obstacle() for d in self.dynamic])

    def replace(self, **changes: Any) -> "WorldState":
        return dataclasses.replace(self, **changes)


def _sample_center(rng: np.random.Generator, half: float, margin: float) -> tuple[float, float]:
    lo, hi = -half + margin, half - margin
    if hi <= lo:
        raise StageError("object does not fit inside the arena")
    x, y = rng.uniform(lo, hi, size=2)
    return (float(x), float(y))


def _place_disc(
    rng: np.random.Generator,
    spec: StageSpec,
    radius: float,
    occupied: Sequence[tuple[tuple[float, float], float]],
    keep_clear: Sequence[tuple[float, float]] = (),
    spawn: tuple[float, float] = (0.0, 0.0),
) -> tuple[float, float]:
    """Rejection-sample a center for a disc of ``radius`` in free space."""
    half = spec.arena_size / 2.0
    point_clearance = radius + spec.robot_radius + spec.goal_radius
    for _ in range(MAX_PLACEMENT_ATTEMPTS):
        c = _sample_center(rng, half, radius)
        if math.hypot(c[0] - spawn[0], c[1] - spawn[1]) < spec.spawn_clearance + radius:
            continue
        if any(math.hypot(c[0] - o[0], c[1] - o[1]) < radius + r for o, r in occupied):
            continue
        if any(math.hypot(c[0] - p[0], c[1] - p[1]) < point_clearance for p in keep_clear):
            continue
        return c
    raise StageError(f"could not place obstacle after {MAX_PLACEMENT_ATTEMPTS} attempts (stage too crowded)")


def _static_obstacles(
    rng: np.random.Generator, spec: StageSpec, keep_clear: Sequence[tuple[float, float]]
) -> tuple[list[Obstacle], list[tuple[tuple[float, float], float]]]:
    obstacles: list[Obstacle] = []
    occupied: list[tuple[tuple[float, float], float]] = []
    for _ in range(spec.n_static):
        if rng.random() < 0.5:
            r = float(rng.uniform(spec.static_size_min, spec.static_size_max))
            c = _place_disc(rng, spec, r, occupied, keep_clear)
            shape = Circle(c, r)
        else:
            hw, hh = (float(v) for v in rng.uniform(spec.static_size_min, spec.static_size_max, size=2))
            angle = float(rng.uniform(-math.pi, math.pi))
            r = math.hypot(hw, hh)
            c = _place_disc(rng, spec, r, occupied, keep_clear)
            shape = Polygon.rectangle(c, hw, hh, angle)
        obstacles.append(Obstacle(shape, ObstacleClass.STATIC))
        occupied.append((c, r))
    return obstacles, occupied


def _static_footprint(geometry: WorldGeometry) -> list[tuple[tuple[float, float], float]]:
    out = []
    for obs in geometry.obstacles:
        if isinstance(obs.shape, Circle):
            out.append((obs.shape.center, obs.shape.radius))
        else:
            verts = np.asarray(obs.shape.vertices)
            c = tuple(float(v) for v in verts.mean(axis=0))
            out.append((c, obs.shape.bounding_radius(c)))
    return out


def _dynamic_obstacles(
    rng: np.random.Generator, spec: StageSpec, geometry: WorldGeometry, keep_clear: Sequence[tuple[float, float]]
) -> tuple[DynamicObstacle, ...]:
    occupied = _static_footprint(geometry)
    out: list[DynamicObstacle] = []
    plan = [(ObstacleClass.HUMAN, spec.human_radius, spec.stop_rate)] * spec.n_humans
    plan += [(ObstacleClass.ROBOT, spec.dynamic_radius, 0.0)] * spec.n_dynamic
    for cls, radius, stop_rate in plan:
        c = _place_disc(rng, spec, radius, occupied, keep_clear)
        heading = float(rng.uniform(-math.pi, math.pi))
        out.append(DynamicObstacle(c, radius, cls, spec.obstacle_speed, heading, stop_rate, 0.0))
        occupied.append((c, radius))
    return tuple(out)


def sample_goal(
    rng: np.random.Generator,
    spec: StageSpec,
    geometry: WorldGeometry,
    dynamic: Sequence[DynamicObstacle],
    robot: Pose,
) -> GoalSpec:
    """Uniform goal in free space, reachable by the robot disc and away from the spawn."""
    half = spec.arena_size / 2.0
    margin = spec.robot_radius + 0.05
    for _ in range(MAX_PLACEMENT_ATTEMPTS):
        g = _sample_center(rng, half, margin)
        if math.hypot(g[0] - robot.x, g[1] - robot.y) < spec.spawn_clearance:
            continue
        if any(_shape_clearance(o.shape, g) < margin for o in geometry.obstacles):
            continue
        if any(math.hypot(g[0] - d.center[0], g[1] - d.center[1]) < d.radius + spec.goal_radius for d in dynamic):
            continue
        return GoalSpec(g, spec.goal_radius)
    raise StageError(f"could not place goal after {MAX_PLACEMENT_ATTEMPTS} attempts (stage too crowded)")


def spawn_pose() -> Pose:
    return Pose(0.0, 0.0, 0.0)


def generate_stage(
    spec: StageSpec,
    rng: np.random.Generator | None = None,
    keep_clear: Sequence[tuple[float, float]] = (),
) -> WorldState:
    """Build a stage layout; with ``rng=None`` the layout depends on ``spec.seed`` only.

    ``keep_clear`` lists points (e.g. evaluation goals) that obstacles must
    leave reachable.
    """
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    keep_clear = tuple((float(x), float(y)) for x, y in keep_clear)
    statics, _ = _static_obstacles(rng, spec, keep_clear)
    geometry = WorldGeometry.square_room(spec.arena_size, statics)
    robot = spawn_pose()
    dynamic = _dynamic_obstacles(rng, spec, geometry, keep_clear)
    goal = sample_goal(rng, spec, geometry, dynamic, robot)
    return WorldState(spec, geometry, dynamic, goal, robot, keep_clear)


def reset_episode(world: WorldState, rng: np.random.Generator) -> WorldState:
    """Robot back to the arena center, fresh goal and fresh dynamic obstacles."""
    robot = spawn_pose()
    dynamic = _dynamic_obstacles(rng, world.spec, world.geometry, world.keep_clear)
    goal = sample_goal(rng, world.spec, world.geometry, dynamic, robot)
    return world.replace(robot=robot, dynamic=dynamic, goal=goal)


def _reflect(pos: float, lo: float, hi: float) -> tuple[float, bool]:
    if pos > hi:
        return 2.0 * hi - pos, True
    if pos < lo:
        return 2.0 * lo - pos, True
    return pos, False


def update_dynamic_obstacles(world: WorldState, dt: float, rng: np.random.Generator) -> WorldState:
    """Advance every dynamic obstacle by one time step.

    Obstacles move in a straight line and bounce specularly off the square
    arena walls. A human that is not already stopped halts for
    ``stop_duration`` seconds with probability ``stop_rate`` per step.
    """
    if dt <= 0:
        raise StageError("dt must be positive")
    if not world.dynamic:
        return world
    draws = rng.random(len(world.dynamic))
    half = world.half_size
    moved = []
    for obs, u in zip(world.dynamic, draws):
        if obs.stop_timer > 0.0:
            moved.append(dataclasses.replace(obs, stop_timer=max(0.0, obs.stop_timer - dt)))
            continue
        if obs.stop_rate > 0.0 and u < obs.stop_rate:
            moved.append(dataclasses.replace(obs, stop_timer=world.spec.stop_duration))
            continue
        lo, hi = -half + obs.radius, half - obs.radius
        x = obs.center[0] + obs.speed * dt * math.cos(obs.heading)
        y = obs.center[1] + obs.speed * dt * math.sin(obs.heading)
        heading = obs.heading
        x, flip_x = _reflect(x, lo, hi)
        y, flip_y = _reflect(y, lo, hi)
        if flip_x:
            heading = math.pi - heading
        if flip_y:
            heading = -heading
        heading = math.atan2(math.sin(heading), math.cos(heading))
        moved.append(dataclasses.replace(obs, center=(x, y), heading=heading))
    return world.replace(dynamic=tuple(moved))
