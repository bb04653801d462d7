"""Per-step JSON Lines episode logs and the determinism replay audit.

The first line of a log is a header carrying everything needed to rebuild
the environment (run seed, stage, env config); each following line is one
environment step.
"""

from __future__ import annotations

import gzip
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Any, Iterator

from .env import EnvConfig, NavEnv, Observation, StepResult
from .rl import STREAM_ENV, stream
from .stages import StageSpec

LOG_FORMAT = "navdqn.steps"
LOG_VERSION = 1


class LogFormatError(ValueError):
    pass


def scan_digest(obs: Observation) -> str:
    return hashlib.sha1(obs.flatten().tobytes()).hexdigest()[:16]


def _open(path: str | Path, mode: str) -> IO[str]:
    if str(path).endswith(".gz"):
        return gzip.open(path, mode + "t", encoding="utf-8")  # type: ignore[return-value]
    return open(path, mode, encoding="utf-8")


def log_header(seed: int, stage: StageSpec, env_cfg: EnvConfig) -> dict[str, Any]:
    return {"format": LOG_FORMAT, "version": LOG_VERSION, "seed": int(seed), "stage": stage.to_dict(), "env": env_cfg.to_dict()}


def step_record(t: int, episode: int, action: int, res: StepResult) -> dict[str, Any]:
    return {
        "t": t,
        "episode": episode,
        "step": res.step_index,
        "action": int(action),
        "x": res.pose.x,
        "y": res.pose.y,
        "theta": res.pose.theta,
        "reward": res.reward,
        "event": res.event.value,
        "scan": scan_digest(res.next_observation),
    }


class StepLogWriter:
    """Callable suitable as the ``on_step`` hook of the training loop."""

    def __init__(self, path: str | Path, header: dict[str, Any]):
        self._fh = _open(path, "w")
        self._fh.write(json.dumps(header) + "\n")
        self.t = 0
        self.episode = 0

    def __call__(self, action: int, res: StepResult) -> None:
        self._fh.write(json.dumps(step_record(self.t, self.episode, action, res)) + "\n")
        self.t += 1
        if res.done:
            self.episode += 1

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "StepLogWriter":
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()


def read_log(path: str | Path) -> tuple[dict[str, Any], Iterator[dict[str, Any]]]:
    fh = _open(path, "r")
    first = fh.readline()
    if not first:
        fh.close()
        raise LogFormatError(f"{path}: empty log")
    header = json.loads(first)
    if header.get("format") != LOG_FORMAT:
        fh.close()
        raise LogFormatError(f"{path}: not a step log")
    if header.get("version") != LOG_VERSION:
        fh.close()
        raise LogFormatError(f"{path}: log version {header.get('version')} unsupported (expected {LOG_VERSION})")

    def records() -> Iterator[dict[str, Any]]:
        with fh:
            for line in fh:
                if line.strip():
                    yield json.loads(line)

    return header, records()


@dataclass(frozen=True)
class ReplayReport:
    exact: bool
    steps: int
    first_divergence: int | None = None
    field: str | None = None

    def __str__(self) -> str:
        if self.exact:
            return "exact"
        return f"diverged at step {self.first_divergence} ({self.field})"


_COMPARED = ("x", "y", "theta", "reward", "event", "scan")


def replay_log(path: str | Path, seed: int | None = None) -> ReplayReport:
    """Re-simulate the logged action sequence and compare every step record.

    ``seed`` overrides the header seed (useful to confirm a log is seed-specific).
    """
    header, records = read_log(path)
    stage = StageSpec.from_dict(header["stage"])
    env_cfg = EnvConfig(**header["env"])
    run_seed = header["seed"] if seed is None else int(seed)
    env = NavEnv(stage, env_cfg, stream(run_seed, STREAM_ENV))
    env.reset()
    count = 0
    for count, rec in enumerate(records, start=1):
        res = env.step(rec["action"])
        fresh = step_record(rec["t"], rec["episode"], rec["action"], res)
        for name in _COMPARED:
            if fresh[name] != rec[name]:
                return ReplayReport(False, count, rec["t"], name)
        if res.done:
            env.reset()
    return ReplayReport(True, count)
