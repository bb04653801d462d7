"""Planar geometry for the simulator: poses, unicycle kinematics, lidar
raycasting and disc collision queries.

All lengths are meters, all angles radians. Beam 0 points along the robot
heading and beams are ordered counter-clockwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from functools import cached_property
from typing import Sequence, Union

import numpy as np

TWO_PI = 2.0 * math.pi
STRAIGHT_EPS = 1e-9


class GeometryError(ValueError):
    """Invalid geometric input (non-finite values, degenerate shapes, pose outside arena)."""


def normalize_angle(angle: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    if not math.isfinite(angle):
        raise GeometryError(f"non-finite angle {angle!r}")
    wrapped = math.remainder(angle, TWO_PI)
    if wrapped <= -math.pi:
        wrapped += TWO_PI
    return wrapped


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    theta: float = 0.0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise GeometryError(f"non-finite position ({self.x!r}, {self.y!r})")
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", normalize_angle(float(self.theta)))

    @property
    def position(self) -> tuple[float, float]:
        return (self.x, self.y)


@dataclass(frozen=True)
class VelocityCommand:
    linear: float
    angular: float


class Action(IntEnum):
    FORWARD = 0
    BACKWARDS = 1
    STOP = 2
    LEFT = 3
    RIGHT = 4
    STRONG_LEFT = 5
    STRONG_RIGHT = 6


ACTION_COMMANDS: dict[Action, VelocityCommand] = {
    Action.FORWARD: VelocityCommand(0.15, 0.0),
    Action.BACKWARDS: VelocityCommand(-0.15, 0.0),
    Action.STOP: VelocityCommand(0.0, 0.0),
    Action.LEFT: VelocityCommand(0.15, 0.75),
    Action.RIGHT: VelocityCommand(0.15, -0.75),
    Action.STRONG_LEFT: VelocityCommand(0.15, 1.5),
    Action.STRONG_RIGHT: VelocityCommand(0.15, -1.5),
}
NUM_ACTIONS = len(ACTION_COMMANDS)


def command_for(action: int) -> VelocityCommand:
    try:
        return ACTION_COMMANDS[Action(int(action))]
    except ValueError:
        raise GeometryError(f"action must be in 0..{NUM_ACTIONS - 1}, got {action!r}") from None


def integrate_motion(pose: Pose, cmd: VelocityCommand, dt: float) -> Pose:
    """Advance a unicycle exactly over ``dt`` under a constant command.

    Straight-line motion when the angular rate is (numerically) zero,
    otherwise motion along the circular arc of radius ``linear / angular``.
    """
    if not (math.isfinite(cmd.linear) and math.isfinite(cmd.angular) and math.isfinite(dt)):
        raise GeometryError("non-finite velocity command or time step")
    if dt <= 0:
        raise GeometryError(f"dt must be positive, got {dt}")
    v, w = cmd.linear, cmd.angular
    if abs(w) < STRAIGHT_EPS:
        return Pose(pose.x + v * dt * math.cos(pose.theta), pose.y + v * dt * math.sin(pose.theta), pose.theta)
    theta_new = pose.theta + w * dt
    radius = v / w
    x = pose.x + radius * (math.sin(theta_new) - math.sin(pose.theta))
    y = pose.y - radius * (math.cos(theta_new) - math.cos(pose.theta))
    return Pose(x, y, theta_new)


def angle_to_goal(pose: Pose, goal: Sequence[float]) -> float:
    """Signed angle from the robot heading to the bearing of ``goal``, in (-pi, pi]."""
    dx = float(goal[0]) - pose.x
    dy = float(goal[1]) - pose.y
    if dx == 0.0 and dy == 0.0:
        raise GeometryError("goal coincides with robot position")
    return normalize_angle(math.atan2(dy, dx) - pose.theta)


class ObstacleClass(str, Enum):
    WALL = "wall"
    STATIC = "static"
    HUMAN = "human"
    ROBOT = "robot"


@dataclass(frozen=True)
class Segment:
    a: tuple[float, float]
    b: tuple[float, float]

    def __post_init__(self) -> None:
        a = (float(self.a[0]), float(self.a[1]))
        b = (float(self.b[0]), float(self.b[1]))
        if a == b:
            raise GeometryError("segment endpoints coincide")
        if not all(math.isfinite(c) for c in (*a, *b)):
            raise GeometryError("non-finite segment endpoint")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)


@dataclass(frozen=True)
class Circle:
    center: tuple[float, float]
    radius: float

    def __post_init__(self) -> None:
        if not self.radius > 0:
            raise GeometryError(f"circle radius must be positive, got {self.radius}")
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))
        object.__setattr__(self, "radius", float(self.radius))


@dataclass(frozen=True)
class Polygon:
    vertices: tuple[tuple[float, float], ...]

    def __post_init__(self) -> None:
        verts = tuple((float(x), float(y)) for x, y in self.vertices)
        if len(verts) < 3:
            raise GeometryError("polygon needs at least three vertices")
        object.__setattr__(self, "vertices", verts)

    def edges(self) -> list[tuple[tuple[float, float], tuple[float, float]]]:
        n = len(self.vertices)
        return [(self.vertices[i], self.vertices[(i + 1) % n]) for i in range(n)]

    @classmethod
    def rectangle(cls, center: Sequence[float], half_w: float, half_h: float, angle: float = 0.0) -> "Polygon":
        c, s = math.cos(angle), math.sin(angle)
        corners = [(-half_w, -half_h), (half_w, -half_h), (half_w, half_h), (-half_w, half_h)]
        return cls(tuple((center[0] + c * px - s * py, center[1] + s * px + c * py) for px, py in corners))

    def bounding_radius(self, center: Sequence[float]) -> float:
        return max(math.hypot(x - center[0], y - center[1]) for x, y in self.vertices)


Shape = Union[Circle, Polygon]


@dataclass(frozen=True)
class Obstacle:
    shape: Shape
    cls: ObstacleClass


@dataclass(frozen=True)
class WorldGeometry:
    """Closed wall loop plus obstacle shapes.

    ``boundary`` lists the wall-loop vertices; the wall segments are the
    loop edges. ``extra_walls`` holds interior wall segments, if any.
    """

    boundary: tuple[tuple[float, float], ...]
    obstacles: tuple[Obstacle, ...] = ()
    extra_walls: tuple[Segment, ...] = ()

    def __post_init__(self) -> None:
        boundary = tuple((float(x), float(y)) for x, y in self.boundary)
        if len(boundary) < 3:
            raise GeometryError("arena boundary needs at least three vertices")
        object.__setattr__(self, "boundary", boundary)
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        object.__setattr__(self, "extra_walls", tuple(self.extra_walls))

    @classmethod
    def square_room(cls, size: float, obstacles: Sequence[Obstacle] = ()) -> "WorldGeometry":
        h = size / 2.0
        return cls(((-h, -h), (h, -h), (h, h), (-h, h)), tuple(obstacles))

    def with_obstacles(self, extra: Sequence[Obstacle]) -> "WorldGeometry":
        return WorldGeometry(self.boundary, self.obstacles + tuple(extra), self.extra_walls)

    @cached_property
    def wall_segments(self) -> tuple[Segment, ...]:
        n = len(self.boundary)
        loop = tuple(Segment(self.boundary[i], self.boundary[(i + 1) % n]) for i in range(n))
        return loop + self.extra_walls

    @cached_property
    def _segment_table(self) -> tuple[np.ndarray, list[ObstacleClass], list[int]]:
        # rows: ax, ay, bx, by; owner index -1 for walls
        rows, classes, owners = [], [], []
        for seg in self.wall_segments:
            rows.append((*seg.a, *seg.b))
            classes.append(ObstacleClass.WALL)
            owners.append(-1)
        for idx, obs in enumerate(self.obstacles):
            if isinstance(obs.shape, Polygon):
                for a, b in obs.shape.edges():
                    rows.append((*a, *b))
                    classes.append(obs.cls)
                    owners.append(idx)
        return np.asarray(rows, dtype=float).reshape(-1, 4), classes, owners

    @cached_property
    def _circle_table(self) -> tuple[np.ndarray, list[int]]:
        rows, owners = [], []
        for idx, obs in enumerate(self.obstacles):
            if isinstance(obs.shape, Circle):
                rows.append((*obs.shape.center, obs.shape.radius))
                owners.append(idx)
        return np.asarray(rows, dtype=float).reshape(-1, 3), owners

    def contains(self, point: Sequence[float]) -> bool:
        """Even-odd test against the wall loop."""
        return point_in_polygon(point, self.boundary)


def point_in_polygon(point: Sequence[float], vertices: Sequence[Sequence[float]]) -> bool:
    x, y = float(point[0]), float(point[1])
    inside = False
    n = len(vertices)
    for i in range(n):
        x1, y1 = vertices[i]
        x2, y2 = vertices[(i + 1) % n]
        if (y1 > y) != (y2 > y):
            x_cross = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            if x < x_cross:
                inside = not inside
    return inside


def point_segment_distance(point: Sequence[float], a: Sequence[float], b: Sequence[float]) -> float:
    px, py = point
    ax, ay = a
    bx, by = b
    ex, ey = bx - ax, by - ay
    t = ((px - ax) * ex + (py - ay) * ey) / (ex * ex + ey * ey)
    t = min(1.0, max(0.0, t))
    return math.hypot(px - (ax + t * ex), py - (ay + t * ey))


@dataclass(frozen=True)
class LaserScan:
    ranges: np.ndarray
    max_range: float
    n_beams: int = field(init=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "n_beams", int(len(self.ranges)))


def beam_angles(n_beams: int) -> np.ndarray:
    return TWO_PI * np.arange(n_beams) / n_beams


def raycast_scan(world: WorldGeometry, pose: Pose, n_beams: int = 360, max_range: float = 3.5) -> LaserScan:
    """Analytic ray cast from the pose against every wall and obstacle.

    Each range is the distance to the first intersection along the beam,
    clamped to ``max_range`` when nothing is hit.
    """
    if n_beams < 1:
        raise GeometryError("n_beams must be at least 1")
    if not world.contains(pose.position):
        raise GeometryError(f"pose ({pose.x:.3f}, {pose.y:.3f}) is outside the arena")
    angles = pose.theta + beam_angles(n_beams)
    dx, dy = np.cos(angles), np.sin(angles)
    ox, oy = pose.x, pose.y
    best = np.full(n_beams, np.inf)

    segs, _, _ = world._segment_table
    if len(segs):
        ax, ay = segs[:, 0], segs[:, 1]
        ex, ey = segs[:, 2] - ax, segs[:, 3] - ay
        wx, wy = ax - ox, ay - oy
        denom = dx[:, None] * ey[None, :] - dy[:, None] * ex[None, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (wx[None, :] * ey[None, :] - wy[None, :] * ex[None, :]) / denom
            u = (wx[None, :] * dy[:, None] - wy[None, :] * dx[:, None]) / denom
        valid = (np.abs(denom) > 1e-12) & (t >= 0.0) & (u >= 0.0) & (u <= 1.0)
        best = np.minimum(best, np.where(valid, t, np.inf).min(axis=1))

    circles, _ = world._circle_table
    if len(circles):
        cx, cy, r = circles[:, 0], circles[:, 1], circles[:, 2]
        fx, fy = ox - cx, oy - cy
        b = dx[:, None] * fx[None, :] + dy[:, None] * fy[None, :]
        c = fx * fx + fy * fy - r * r
        disc = b * b - c[None, :]
        root = np.sqrt(np.maximum(disc, 0.0))
        near, far = -b - root, -b + root
        t = np.where(near >= 0.0, near, np.where(far >= 0.0, 0.0, np.inf))
        t = np.where(disc >= 0.0, t, np.inf)
        best = np.minimum(best, t.min(axis=1))

    ranges = np.clip(best, 1e-6, max_range)
    return LaserScan(ranges, float(max_range))


@dataclass(frozen=True)
class CollisionReport:
    hit: bool
    cls: ObstacleClass | None = None


def _shape_clearance(shape: Shape, point: tuple[float, float]) -> float:
    """Distance from ``point`` to the shape's region (0 when inside)."""
    if isinstance(shape, Circle):
        return max(0.0, math.hypot(point[0] - shape.center[0], point[1] - shape.center[1]) - shape.radius)
    if point_in_polygon(point, shape.vertices):
        return 0.0
    return min(point_segment_distance(point, a, b) for a, b in shape.edges())


def check_collision(world: WorldGeometry, pose: Pose, robot_radius: float) -> CollisionReport:
    """Disc-vs-world overlap test; reports the class of the closest offender."""
    point = pose.position
    if not world.contains(point):
        return CollisionReport(True, ObstacleClass.WALL)
    best: tuple[float, ObstacleClass] | None = None
    for seg in world.wall_segments:
        d = point_segment_distance(point, seg.a, seg.b)
        if d <= robot_radius and (best is None or d < best[0]):
            best = (d, ObstacleClass.WALL)
    for obs in world.obstacles:
        d = _shape_clearance(obs.shape, point)
        if d <= robot_radius and (best is None or d < best[0]):
            best = (d, obs.cls)
    if best is None:
        return CollisionReport(False, None)
    return CollisionReport(True, best[1])
