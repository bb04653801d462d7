"""Episode engine: actions in, rewards and 364-wide observations out."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from enum import Enum
from typing import Any, Sequence

import numpy as np

from .geometry import (
    LaserScan,
    ObstacleClass,
    Pose,
    angle_to_goal,
    check_collision,
    command_for,
    integrate_motion,
    raycast_scan,
)
from .stages import GoalSpec, StageSpec, WorldState, generate_stage, reset_episode, update_dynamic_obstacles

ABSENT_DISTANCE = 10.0
NOISE_FLOOR = 0.01

GOAL_REWARD = 100.0
WALL_PENALTY = -100.0
TOWARD_GOAL_REWARD = 0.1
AWAY_FROM_GOAL_PENALTY = -0.2
PROXIMITY_PENALTY = -10.0

# goal enters the network as (distance, cos angle, sin angle)
GOAL_FEATURES = 3


class EnvError(RuntimeError):
    pass


class Event(str, Enum):
    NONE = "none"
    GOAL_REACHED = "goal_reached"
    WALL_HIT = "wall_hit"
    TIMEOUT = "timeout"

    @property
    def terminal(self) -> bool:
        return self is not Event.NONE


@dataclass(frozen=True)
class EnvConfig:
    dt: float = 0.1
    noise_sigma: float = 0.0
    human_min_dist: float = 0.7
    robot_min_dist: float = 0.2
    heading_threshold: float = math.pi / 6
    max_episode_steps: int = 600
    n_beams: int = 360
    max_range: float = 3.5
    goal_in_observation: bool = True
    scale_observation: bool = False
    # evaluation runs log contacts instead of ending the episode
    terminate_on_collision: bool = True

    def __post_init__(self) -> None:
        positive = ("dt", "human_min_dist", "robot_min_dist", "heading_threshold", "max_episode_steps", "n_beams", "max_range")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"EnvConfig.{name} must be positive")
        if self.noise_sigma < 0:
            raise ValueError("EnvConfig.noise_sigma must be non-negative")

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def input_width(self, semantic: bool) -> int:
        return self.n_beams + (4 if semantic else 0) + (GOAL_FEATURES if self.goal_in_observation else 0)


@dataclass(frozen=True)
class Observation:
    ranges: np.ndarray
    human_slot: tuple[float, float]
    robot_slot: tuple[float, float]
    goal_slot: tuple[float, float] = (0.0, 0.0)

    def flatten(self) -> np.ndarray:
        """Scan ranges followed by the human and robot (distance, angle) slots."""
        return np.concatenate([self.ranges, self.human_slot, self.robot_slot])

    def network_input(self, semantic: bool, include_goal: bool, scale: float | None = None) -> np.ndarray:
        """Float32 network input: ranges, [human, robot slots], [goal distance, cos, sin].

        The goal bearing is fed as a unit vector so that "facing the goal"
        is a half-plane in input space rather than a band with a wrap at pi.
        """
        ranges = self.ranges
        human, robot = self.human_slot, self.robot_slot
        goal_d, goal_a = self.goal_slot
        if scale:
            ranges = ranges / scale
            human = (human[0] / scale, human[1])
            robot = (robot[0] / scale, robot[1])
            goal_d = goal_d / scale
        parts: list[Sequence[float]] = [ranges]
        if semantic:
            parts += [human, robot]
        if include_goal:
            parts.append((goal_d, math.cos(goal_a), math.sin(goal_a)))
        return np.concatenate(parts).astype(np.float32)


@dataclass(frozen=True)
class StepResult:
    next_observation: Observation
    reward: float
    done: bool
    event: Event
    step_index: int
    pose: Pose
    contact: ObstacleClass | None = None
    d_human: float = ABSENT_DISTANCE
    d_robot: float = ABSENT_DISTANCE


def compute_reward(
    goal_reached: bool,
    wall_hit: bool,
    abs_alpha: float,
    d_human: float = ABSENT_DISTANCE,
    d_robot: float = ABSENT_DISTANCE,
    cfg: EnvConfig | None = None,
) -> tuple[float, bool]:
    """Per-step reward and episode-over flag.

    Terminal events override everything else. Non-terminal components add
    up: heading term plus one penalty per violated safety distance.
    """
    cfg = cfg or EnvConfig()
    if goal_reached and wall_hit:
        raise EnvError("goal_reached and wall_hit are mutually exclusive")
    if goal_reached:
        return GOAL_REWARD, True
    if wall_hit:
        return WALL_PENALTY, True
    reward = TOWARD_GOAL_REWARD if abs(abs_alpha) <= cfg.heading_threshold else AWAY_FROM_GOAL_PENALTY
    if d_human < cfg.human_min_dist:
        reward += PROXIMITY_PENALTY
    if d_robot < cfg.robot_min_dist:
        reward += PROXIMITY_PENALTY
    return reward, False


def apply_noise(scan: LaserScan, sigma: float, rng: np.random.Generator) -> LaserScan:
    """Independent zero-mean Gaussian noise per beam, clamped to [0.01, max_range]."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return LaserScan(scan.ranges.copy(), scan.max_range)
    noisy = scan.ranges + rng.normal(0.0, sigma, size=scan.n_beams)
    return LaserScan(np.clip(noisy, NOISE_FLOOR, scan.max_range), scan.max_range)


def nearest_of_class(world: WorldState, cls: ObstacleClass, pose: Pose | None = None) -> tuple[float, float]:
    """(distance, bearing) of the closest dynamic obstacle of ``cls``; the 10 m sentinel if none."""
    pose = pose or world.robot
    best: tuple[float, float] | None = None
    for obs in world.dynamic:
        if obs.cls is not cls:
            continue
        d = math.hypot(obs.center[0] - pose.x, obs.center[1] - pose.y)
        if best is None or d < best[0]:
            best = (d, angle_to_goal(pose, obs.center) if d > 0 else 0.0)
    return best if best is not None else (ABSENT_DISTANCE, 0.0)


def goal_slot(world: WorldState, pose: Pose | None = None) -> tuple[float, float]:
    pose = pose or world.robot
    g = world.goal.position
    d = math.hypot(g[0] - pose.x, g[1] - pose.y)
    return (d, angle_to_goal(pose, g) if d > 0 else 0.0)


def pack_observation(
    scan: LaserScan, world: WorldState, cfg: EnvConfig, rng: np.random.Generator | None = None
) -> Observation:
    if cfg.noise_sigma > 0:
        if rng is None:
            raise EnvError("noise_sigma > 0 needs a random stream")
        scan = apply_noise(scan, cfg.noise_sigma, rng)
    return Observation(
        ranges=np.array(scan.ranges, dtype=float),
        human_slot=nearest_of_class(world, ObstacleClass.HUMAN),
        robot_slot=nearest_of_class(world, ObstacleClass.ROBOT),
        goal_slot=goal_slot(world),
    )


class NavEnv:
    """Single-threaded episode runner over one stage.

    The stage layout (walls and static obstacles) comes from ``stage.seed``;
    goals, dynamic obstacles and scan noise draw from ``rng``.
    """

    def __init__(
        self,
        stage: StageSpec,
        cfg: EnvConfig | None = None,
        rng: np.random.Generator | None = None,
        world: WorldState | None = None,
    ) -> None:
        self.stage = stage
        self.cfg = cfg or EnvConfig()
        self.rng = rng if rng is not None else np.random.default_rng(stage.seed)
        self.world = world if world is not None else generate_stage(stage)
        self.steps = 0
        self.done = True

    @property
    def semantic(self) -> bool:
        return self.stage.semantic

    @property
    def input_width(self) -> int:
        return self.cfg.input_width(self.semantic)

    def encode(self, obs: Observation) -> np.ndarray:
        scale = self.cfg.max_range if self.cfg.scale_observation else None
        return obs.network_input(self.semantic, self.cfg.goal_in_observation, scale)

    def observe(self) -> Observation:
        scan = raycast_scan(self.world.scene(), self.world.robot, self.cfg.n_beams, self.cfg.max_range)
        return pack_observation(scan, self.world, self.cfg, self.rng)

    def reset(self, goal: Sequence[float] | None = None, reseed: bool = True) -> Observation:
        """Start a new episode from the arena center.

        With ``goal`` given the sampled goal is replaced by that fixed point.
        ``reseed=False`` keeps the current world (used by scripted scenarios).
        """
        if reseed:
            self.world = reset_episode(self.world, self.rng)
        if goal is not None:
            self.world = self.world.replace(goal=GoalSpec((float(goal[0]), float(goal[1])), self.stage.goal_radius))
        self.steps = 0
        self.done = False
        return self.observe()

    def step(self, action: int) -> StepResult:
        if self.done:
            raise EnvError("episode is over; call reset() first")
        cfg = self.cfg
        old_pose = self.world.robot
        pose = integrate_motion(old_pose, command_for(action), cfg.dt)
        world = update_dynamic_obstacles(self.world, cfg.dt, self.rng)
        scene = world.scene()
        collision = check_collision(scene, pose, self.stage.robot_radius)
        if collision.hit and not cfg.terminate_on_collision:
            # contact is logged; the robot is held in place instead of passing through
            pose = old_pose
        world = world.replace(robot=pose)
        self.world = world
        self.steps += 1

        gx, gy = world.goal.position
        d_goal = math.hypot(gx - pose.x, gy - pose.y)
        goal_reached = d_goal <= world.goal.radius
        wall_hit = collision.hit and cfg.terminate_on_collision and not goal_reached
        timeout = self.steps >= cfg.max_episode_steps
        alpha = angle_to_goal(pose, (gx, gy)) if d_goal > 0 else 0.0
        d_human = nearest_of_class(world, ObstacleClass.HUMAN)[0]
        d_robot = nearest_of_class(world, ObstacleClass.ROBOT)[0]
        reward, done = compute_reward(goal_reached, wall_hit, abs(alpha), d_human, d_robot, cfg)

        if goal_reached:
            event = Event.GOAL_REACHED
        elif wall_hit:
            event = Event.WALL_HIT
        elif timeout:
            event, done = Event.TIMEOUT, True
        else:
            event = Event.NONE

        scan_pose = pose if scene.contains(pose.position) else old_pose
        scan = raycast_scan(scene, scan_pose, cfg.n_beams, cfg.max_range)
        obs = pack_observation(scan, world, cfg, self.rng)
        self.done = done
        return StepResult(
            next_observation=obs,
            reward=reward,
            done=done,
            event=event,
            step_index=self.steps - 1,
            pose=pose,
            contact=collision.cls,
            d_human=d_human,
            d_robot=d_robot,
        )


def make_env(stage: StageSpec, cfg: EnvConfig, seed: int) -> NavEnv:
    return NavEnv(stage, cfg, np.random.default_rng(seed))
