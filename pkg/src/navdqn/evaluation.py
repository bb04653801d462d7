"""Evaluation protocol (fixed goals, repeated runs, re-run on failure) and metric reporting."""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np
import yaml

from .env import EnvConfig, Event, NavEnv
from .nn import QNetwork
from .rl import greedy_action
from .stages import StageSpec, generate_stage

METRIC_COLUMNS = ("approach", "distance_m", "time_s", "error_rate_pct", "obstacles_hit")


class EvalError(RuntimeError):
    pass


def default_goals(n: int = 10, d_min: float = 0.2, d_max: float = 2.5) -> list[tuple[float, float]]:
    """``n`` goals at evenly spaced distances from the origin, cycling through the four diagonals."""
    goals = []
    for i, d in enumerate(np.linspace(d_min, d_max, n)):
        angle = math.pi / 4 + (math.pi / 2) * (i % 4)
        goals.append((round(float(d * math.cos(angle)), 6), round(float(d * math.sin(angle)), 6)))
    return goals


def load_goals(path: str | Path) -> list[tuple[float, float]]:
    data = yaml.safe_load(Path(path).read_text())
    if isinstance(data, dict):
        data = data.get("goals")
    if not isinstance(data, list) or not data:
        raise EvalError(f"{path}: expected a 'goals' list of [x, y] pairs")
    return [(float(x), float(y)) for x, y in data]


def save_goals(goals: Sequence[Sequence[float]], path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump({"goals": [[float(x), float(y)] for x, y in goals]}))


def polyline_length(points: Sequence[Sequence[float]]) -> float:
    pts = np.asarray(points, dtype=float)
    if len(pts) < 2:
        return 0.0
    return float(np.sum(np.hypot(*np.diff(pts, axis=0).T)))


@dataclass
class EpisodeRecord:
    goal_index: int
    attempt: int
    goal: tuple[float, float]
    outcome: str
    path_length: float
    wall_time: float
    collisions: int
    min_d_human: float
    poses: list[tuple[float, float, float]] = field(default_factory=list)
    steps: list[dict[str, Any]] = field(default_factory=list)

    @property
    def success(self) -> bool:
        return self.outcome == Event.GOAL_REACHED.value

    def to_dict(self, with_steps: bool = True) -> dict[str, Any]:
        out = dataclasses.asdict(self)
        if not with_steps:
            out.pop("steps")
        return out


def run_episode(
    net: QNetwork,
    env: NavEnv,
    goal: Sequence[float],
    goal_index: int = 0,
    attempt: int = 0,
) -> EpisodeRecord:
    """Greedy rollout toward a fixed goal. Contacts are counted, never terminal."""
    if env.cfg.terminate_on_collision:
        raise EvalError("evaluation environments must not terminate on collision")
    obs = env.reset(goal=goal)
    pose = env.world.robot
    poses = [(pose.x, pose.y, pose.theta)]
    odometry = 0.0
    collisions = 0
    in_contact = False
    min_d_human = math.inf
    steps: list[dict[str, Any]] = []
    while True:
        a = greedy_action(net, env.encode(obs))
        res = env.step(a)
        odometry += math.hypot(res.pose.x - pose.x, res.pose.y - pose.y)
        pose = res.pose
        poses.append((pose.x, pose.y, pose.theta))
        touching = res.contact is not None
        if touching and not in_contact:
            collisions += 1
        in_contact = touching
        min_d_human = min(min_d_human, res.d_human)
        steps.append(
            {"t": res.step_index, "x": pose.x, "y": pose.y, "theta": pose.theta, "action": a,
             "reward": res.reward, "event": res.event.value, "contact": res.contact.value if res.contact else None}
        )
        obs = res.next_observation
        if res.done:
            break
    return EpisodeRecord(
        goal_index=goal_index,
        attempt=attempt,
        goal=(float(goal[0]), float(goal[1])),
        outcome=res.event.value,
        path_length=odometry,
        wall_time=len(steps) * env.cfg.dt,
        collisions=collisions,
        min_d_human=min_d_human,
        poses=poses,
        steps=steps,
    )


@dataclass
class ProtocolResult:
    successes: list[EpisodeRecord]
    failures: list[EpisodeRecord]

    @property
    def failure_count(self) -> int:
        return len(self.failures)


def run_protocol(
    goals: Sequence[Sequence[float]],
    run_fn: Callable[[int, Sequence[float], int], EpisodeRecord],
    runs_per_goal: int = 3,
    max_attempts: int = 10,
) -> ProtocolResult:
    """Collect ``runs_per_goal`` successful runs for every goal.

    A failed run increments the failure count and is repeated; a single
    measurement slot gives up after ``max_attempts`` tries.
    ``run_fn(goal_index, goal, attempt)`` performs one run.
    """
    successes: list[EpisodeRecord] = []
    failures: list[EpisodeRecord] = []
    for gi, goal in enumerate(goals):
        attempt = 0
        for _ in range(runs_per_goal):
            for _ in range(max_attempts):
                rec = run_fn(gi, goal, attempt)
                attempt += 1
                if rec.success:
                    successes.append(rec)
                    break
                failures.append(rec)
            else:
                raise EvalError(f"goal {gi} at {tuple(goal)}: no success in {max_attempts} consecutive attempts")
    return ProtocolResult(successes, failures)


@dataclass(frozen=True)
class MetricsSummary:
    approach: str
    mean_distance: float
    mean_time: float
    error_rate: float
    obstacles_hit: int
    successes: int
    failures: int

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "MetricsSummary":
        return cls(**data)


def error_rate(failures: int, successes: int) -> float:
    """Failed runs as a percentage of successful runs."""
    if successes <= 0:
        raise EvalError("error rate needs at least one successful run")
    return 100.0 * failures / successes


def summarize(approach: str, result: ProtocolResult) -> MetricsSummary:
    ok = result.successes
    if not ok:
        raise EvalError("no successful measurements to summarize")
    return MetricsSummary(
        approach=approach,
        mean_distance=float(np.mean([r.path_length for r in ok])),
        mean_time=float(np.mean([r.wall_time for r in ok])),
        error_rate=error_rate(result.failure_count, len(ok)),
        obstacles_hit=int(sum(r.collisions for r in ok)),
        successes=len(ok),
        failures=result.failure_count,
    )


def eval_env_config(cfg: EnvConfig, timeout_s: float, noise_sigma: float | None = None) -> EnvConfig:
    steps = int(round(timeout_s / cfg.dt))
    changes: dict[str, Any] = {"terminate_on_collision": False, "max_episode_steps": max(1, steps)}
    if noise_sigma is not None:
        changes["noise_sigma"] = noise_sigma
    return dataclasses.replace(cfg, **changes)


def evaluate(
    net: QNetwork,
    stage: StageSpec,
    env_cfg: EnvConfig,
    goals: Sequence[Sequence[float]],
    seed: int = 0,
    runs_per_goal: int = 3,
    timeout_s: float = 60.0,
    max_attempts: int = 10,
    noise_sigma: float | None = None,
) -> ProtocolResult:
    """Run the fixed-goal protocol with a greedy policy on one stage layout.

    Every run starts from the arena center with heading 0; dynamic
    obstacles and scan noise are re-drawn per run from a seed derived
    from ``(seed, goal_index, attempt)``.
    """
    cfg = eval_env_config(env_cfg, timeout_s, noise_sigma)
    world = generate_stage(stage, keep_clear=goals)
    if net.input_width != cfg.input_width(stage.semantic):
        raise EvalError(f"network takes {net.input_width} inputs, environment provides {cfg.input_width(stage.semantic)}")

    def run_fn(gi: int, goal: Sequence[float], attempt: int) -> EpisodeRecord:
        env = NavEnv(stage, cfg, np.random.default_rng([int(seed), 1000 + gi, attempt]), world=world)
        return run_episode(net, env, goal, gi, attempt)

    return run_protocol(goals, run_fn, runs_per_goal, max_attempts)


def write_metrics(
    summaries: Sequence[MetricsSummary],
    out_dir: str | Path,
    runs: dict[str, Sequence[EpisodeRecord]] | None = None,
) -> Path:
    """CSV with one row per approach plus one x,y polyline file per run."""
    if not summaries:
        raise EvalError("need at least one summary")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "metrics.csv"
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRIC_COLUMNS)
        for s in summaries:
            writer.writerow([s.approach, f"{s.mean_distance:.6f}", f"{s.mean_time:.6f}", f"{s.error_rate:.6f}", s.obstacles_hit])
    for approach, records in (runs or {}).items():
        traj_dir = out / "trajectories" / approach
        traj_dir.mkdir(parents=True, exist_ok=True)
        for rec in records:
            with (traj_dir / f"goal{rec.goal_index:02d}_attempt{rec.attempt:02d}.csv").open("w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(("x", "y"))
                writer.writerows((repr(x), repr(y)) for x, y, _ in rec.poses)
    return path


def write_runs(records: Sequence[EpisodeRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_dict()) + "\n")
