"""Headless 2D lidar navigation simulator with a from-scratch deep Q-learning stack."""

from .env import EnvConfig, Event, NavEnv, Observation, StepResult, compute_reward
from .geometry import Action, Pose, VelocityCommand, integrate_motion, raycast_scan
from .nn import AdamState, QNetwork, load_checkpoint, save_checkpoint
from .rl import ReplayBuffer, TrainConfig, epsilon_at, train_loop
from .stages import StageKind, StageSpec, generate_stage

__version__ = "0.1.0"

__all__ = [
    "Action",
    "AdamState",
    "EnvConfig",
    "Event",
    "NavEnv",
    "Observation",
    "Pose",
    "QNetwork",
    "ReplayBuffer",
    "StageKind",
    "StageSpec",
    "StepResult",
    "TrainConfig",
    "VelocityCommand",
    "compute_reward",
    "epsilon_at",
    "generate_stage",
    "integrate_motion",
    "load_checkpoint",
    "raycast_scan",
    "save_checkpoint",
    "train_loop",
]
