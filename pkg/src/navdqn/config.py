"""Run configuration: one YAML document with ``stage``, ``env``, ``train`` and ``eval`` sections."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from .env import EnvConfig
from .rl import TrainConfig
from .stages import StageError, StageKind, StageSpec


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EvalConfig:
    runs_per_goal: int = 3
    timeout_s: float = 60.0
    max_attempts: int = 10
    noise_sigma: float | None = None
    goals: tuple[tuple[float, float], ...] | None = None

    def __post_init__(self) -> None:
        if self.runs_per_goal < 1 or self.max_attempts < 1 or self.timeout_s <= 0:
            raise ConfigError("runs_per_goal, max_attempts and timeout_s must be positive")
        if self.goals is not None:
            object.__setattr__(self, "goals", tuple((float(x), float(y)) for x, y in self.goals))

    def to_dict(self) -> dict[str, Any]:
        out = dataclasses.asdict(self)
        if self.goals is not None:
            out["goals"] = [list(g) for g in self.goals]
        return out


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    out_dir: str = "runs/default"
    log_steps: bool = True
    stage: StageSpec = field(default_factory=StageSpec)
    env: EnvConfig = field(default_factory=EnvConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self) -> dict[str, Any]:
        return {
            "seed": self.seed,
            "out_dir": self.out_dir,
            "log_steps": self.log_steps,
            "stage": self.stage.to_dict(),
            "env": self.env.to_dict(),
            "train": self.train.to_dict(),
            "eval": self.eval.to_dict(),
        }


_TOP_KEYS = {"seed", "out_dir", "log_steps", "stage", "env", "train", "eval"}


def _check_keys(section: str, data: Mapping[str, Any], cls: type) -> None:
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown key(s) in '{section}': {', '.join(sorted(unknown))}")


def build_config(data: Mapping[str, Any] | None = None, **overrides: Any) -> RunConfig:
    """Build a RunConfig from a parsed document plus CLI overrides (``seed``, ``stage``, ``out_dir``).

    The stage seed follows the run seed unless the document pins it.
    """
    data = dict(data or {})
    unknown = set(data) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(sorted(unknown))}")
    for name in ("stage", "env", "train", "eval"):
        if data.get(name) is None:
            data[name] = {}
        if not isinstance(data[name], Mapping):
            raise ConfigError(f"section '{name}' must be a mapping")

    seed = overrides.get("seed")
    seed = int(data.get("seed", 0) if seed is None else seed)
    stage_data = dict(data["stage"])
    _check_keys("stage", stage_data, StageSpec)
    if overrides.get("stage") is not None:
        stage_data["kind"] = overrides["stage"]
    if "seed" not in stage_data or overrides.get("seed") is not None:
        stage_data["seed"] = seed
    kind = stage_data.pop("kind", StageKind.STATIC.value)

    try:
        stage = StageSpec.for_kind(kind, **stage_data)
        _check_keys("env", data["env"], EnvConfig)
        env = EnvConfig(**data["env"])
        _check_keys("train", data["train"], TrainConfig)
        train = TrainConfig(**data["train"])
        _check_keys("eval", data["eval"], EvalConfig)
        ev = EvalConfig(**data["eval"])
    except ConfigError:
        raise
    except (StageError, ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc

    out_dir = overrides.get("out_dir") or data.get("out_dir", "runs/default")
    return RunConfig(
        seed=seed,
        out_dir=str(out_dir),
        log_steps=bool(data.get("log_steps", True)),
        stage=stage,
        env=env,
        train=train,
        eval=ev,
    )


def load_config(path: str | Path | None = None, **overrides: Any) -> RunConfig:
    data: dict[str, Any] = {}
    if path is not None:
        try:
            data = yaml.safe_load(Path(path).read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: expected a key-value document")
    return build_config(data, **overrides)


def write_snapshot(cfg: RunConfig, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False))
    return path
