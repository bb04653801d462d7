"""Deep Q-learning: replay memory, epsilon schedule, the act/learn step pair and the training loop."""

from __future__ import annotations

import dataclasses
import json
import logging
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterator, Sequence

import numpy as np

from .env import Event, NavEnv, StepResult
from .geometry import NUM_ACTIONS
from .nn import AdamState, QNetwork, adam_step, forward, mse_loss_and_grad, save_checkpoint, sync_target

log = logging.getLogger(__name__)

# independent random streams derived from one run seed
STREAM_ENV, STREAM_AGENT, STREAM_REPLAY, STREAM_DROPOUT, STREAM_INIT = range(5)


def stream(seed: int, which: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), which])


@dataclass(frozen=True)
class TrainConfig:
    """Training hyperparameters; defaults reproduce the reference table."""

    mean_success_bound: float = 1.0
    num_actions: int = NUM_ACTIONS
    gamma: float = 0.99
    sync_target_steps: int = 2000
    learning_rate: float = 0.00025
    epsilon_start: float = 1.0
    epsilon_max_steps: int = 100_000
    epsilon_end: float = 0.05
    batch_size: int = 64
    training_start: int = 64
    memory_size: int = 1_000_000
    success_window: int = 100
    max_steps: int = 300_000
    hidden_sizes: tuple[int, ...] = (256, 128)
    dropout_rate: float = 0.2
    checkpoint_every: int = 50_000

    def __post_init__(self) -> None:
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if self.num_actions != NUM_ACTIONS:
            raise ValueError(f"the agent has exactly {NUM_ACTIONS} actions")
        if self.batch_size < 1 or self.memory_size < 1 or self.success_window < 1:
            raise ValueError("batch_size, memory_size and success_window must be positive")
        if not 0.0 <= self.epsilon_end <= self.epsilon_start <= 1.0:
            raise ValueError("need 0 <= epsilon_end <= epsilon_start <= 1")

    def to_dict(self) -> dict[str, Any]:
        out = dataclasses.asdict(self)
        out["hidden_sizes"] = list(self.hidden_sizes)
        return out


def epsilon_at(t, t_max: int = 100_000, eps_min: float = 0.05):
    """Linear decay ``max(eps_min, 1 - t / t_max)``; accepts scalars or arrays."""
    if np.ndim(t):
        return np.maximum(eps_min, 1.0 - np.asarray(t, dtype=float) / t_max)
    if t < 0:
        raise ValueError("t must be non-negative")
    return max(eps_min, 1.0 - t / t_max)


@dataclass
class Transition:
    s: np.ndarray
    s_next: np.ndarray
    a: int
    r: float
    done: bool


class ReplayBuffer:
    """Fixed-capacity FIFO ring of transitions with uniform sampling (with replacement)."""

    def __init__(self, capacity: int = 1_000_000):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self._storage: list[Transition] = []
        self._next = 0

    def __len__(self) -> int:
        return len(self._storage)

    @property
    def size(self) -> int:
        return len(self._storage)

    def push(self, transition: Transition) -> None:
        if len(self._storage) < self.capacity:
            self._storage.append(transition)
        else:
            self._storage[self._next] = transition
        self._next = (self._next + 1) % self.capacity

    def __iter__(self) -> Iterator[Transition]:
        """Oldest to newest."""
        if len(self._storage) < self.capacity:
            yield from self._storage
        else:
            yield from self._storage[self._next :]
            yield from self._storage[: self._next]

    def newest(self) -> Transition:
        if not self._storage:
            raise IndexError("buffer is empty")
        return self._storage[(self._next - 1) % self.capacity]

    def sample_indices(self, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        if not self._storage:
            raise ValueError("cannot sample from an empty buffer")
        return rng.integers(0, len(self._storage), size=batch_size)

    def sample(self, batch_size: int, rng: np.random.Generator) -> list[Transition]:
        return [self._storage[i] for i in self.sample_indices(batch_size, rng)]


def stack_batch(batch: Sequence[Transition]):
    s = np.stack([tr.s for tr in batch])
    s_next = np.stack([tr.s_next for tr in batch])
    a = np.fromiter((tr.a for tr in batch), dtype=np.int64, count=len(batch))
    r = np.fromiter((tr.r for tr in batch), dtype=np.float64, count=len(batch))
    d = np.fromiter((tr.done for tr in batch), dtype=bool, count=len(batch))
    return s, s_next, a, r, d


def bellman_targets(batch: Sequence[Transition], target_net: QNetwork, gamma: float = 0.99) -> np.ndarray:
    """``r`` for terminal transitions, ``r + gamma * max_a Q_target(s', a)`` otherwise."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    _, s_next, _, r, d = stack_batch(batch)
    return _targets(r, d, s_next, target_net, gamma)


def _targets(r: np.ndarray, d: np.ndarray, s_next: np.ndarray, target_net: QNetwork, gamma: float) -> np.ndarray:
    q_next = forward(target_net, s_next).max(axis=1).astype(np.float64)
    return np.where(d, r, r + gamma * q_next)


@dataclass
class TrainState:
    t: int = 0
    epsilon: float = 1.0
    episode: int = 0
    episode_return: float = 0.0
    episode_steps: int = 0
    outcomes: deque = field(default_factory=lambda: deque(maxlen=100))
    s: np.ndarray | None = None

    def mean_success(self) -> float:
        """Successes over the last ``window`` episodes; missing episodes count as failures."""
        return sum(self.outcomes) / self.outcomes.maxlen


@dataclass(frozen=True)
class EpisodeEnd:
    episode: int
    steps: int
    ret: float
    outcome: Event
    t: int


def greedy_action(net: QNetwork, s: np.ndarray) -> int:
    q = forward(net, s[None, :])[0]
    return int(np.argmax(q))  # first maximum, i.e. lowest index on ties


def pre_step(
    env: NavEnv,
    net: QNetwork,
    buffer: ReplayBuffer,
    state: TrainState,
    rng: np.random.Generator,
    on_step: Callable[[int, StepResult], None] | None = None,
) -> EpisodeEnd | None:
    """Epsilon-greedy act, store the transition, reset the env when the episode is over."""
    if state.s is None:
        state.s = env.encode(env.reset())
    s = state.s
    if rng.random() < state.epsilon:
        a = int(rng.integers(NUM_ACTIONS))
    else:
        a = greedy_action(net, s)
    res = env.step(a)
    if on_step is not None:
        on_step(a, res)
    s_next = env.encode(res.next_observation)
    buffer.push(Transition(s, s_next, a, res.reward, res.done))
    state.episode_return += res.reward
    state.episode_steps += 1
    state.t += 1
    if not res.done:
        state.s = s_next
        return None
    end = EpisodeEnd(state.episode, state.episode_steps, state.episode_return, res.event, state.t)
    state.outcomes.append(res.event is Event.GOAL_REACHED)
    state.episode += 1
    state.episode_return = 0.0
    state.episode_steps = 0
    state.s = env.encode(env.reset())
    return end


def post_step(
    net: QNetwork,
    target_net: QNetwork,
    buffer: ReplayBuffer,
    state: TrainState,
    adam: AdamState,
    cfg: TrainConfig,
    rng: np.random.Generator,
    dropout_rng: np.random.Generator,
) -> tuple[QNetwork, float | None]:
    """One learning step on a uniform batch; returns the (possibly re-synced) target and the loss."""
    loss = None
    if len(buffer) >= cfg.training_start:
        s, s_next, a, r, d = stack_batch(buffer.sample(cfg.batch_size, rng))
        y = _targets(r, d, s_next, target_net, cfg.gamma)
        loss, grads = mse_loss_and_grad(net, s, a, y, training=True, rng=dropout_rng)
        adam_step(net, grads, adam)
        if state.t % cfg.sync_target_steps == 0:
            target_net = sync_target(net)
    state.epsilon = epsilon_at(state.t, cfg.epsilon_max_steps, cfg.epsilon_end)
    return target_net, loss


@dataclass
class Trainer:
    """Wires env, networks, memory and random streams for one seeded training run."""

    env: NavEnv
    cfg: TrainConfig
    seed: int
    net: QNetwork = field(init=False)
    target: QNetwork = field(init=False)
    adam: AdamState = field(init=False)
    buffer: ReplayBuffer = field(init=False)
    state: TrainState = field(init=False)

    def __post_init__(self) -> None:
        sizes = [self.env.input_width, *self.cfg.hidden_sizes, self.cfg.num_actions]
        self.net = QNetwork.create(sizes, self.cfg.dropout_rate, stream(self.seed, STREAM_INIT))
        self.target = sync_target(self.net)
        self.adam = AdamState.for_network(self.net, lr=self.cfg.learning_rate)
        self.buffer = ReplayBuffer(self.cfg.memory_size)
        self.state = TrainState(epsilon=epsilon_at(0, self.cfg.epsilon_max_steps, self.cfg.epsilon_end))
        self.state.outcomes = deque(maxlen=self.cfg.success_window)
        self.agent_rng = stream(self.seed, STREAM_AGENT)
        self.replay_rng = stream(self.seed, STREAM_REPLAY)
        self.dropout_rng = stream(self.seed, STREAM_DROPOUT)

    def step(self, on_step: Callable[[int, StepResult], None] | None = None) -> EpisodeEnd | None:
        end = pre_step(self.env, self.net, self.buffer, self.state, self.agent_rng, on_step)
        self.target, _ = post_step(
            self.net, self.target, self.buffer, self.state, self.adam, self.cfg, self.replay_rng, self.dropout_rng
        )
        return end


@dataclass
class TrainResult:
    net: QNetwork
    adam: AdamState
    records: list[dict[str, Any]]
    steps: int
    converged: bool
    checkpoint: Path | None = None


def episode_record(end: EpisodeEnd, state: TrainState) -> dict[str, Any]:
    return {
        "episode": end.episode,
        "t": end.t,
        "steps": end.steps,
        "return": end.ret,
        "outcome": end.outcome.value,
        "epsilon": state.epsilon,
        "mean_success": state.mean_success(),
    }


def train_loop(
    cfg: TrainConfig,
    env_factory: Callable[[], NavEnv],
    seed: int = 0,
    log_path: str | Path | None = None,
    checkpoint_dir: str | Path | None = None,
    on_step: Callable[[int, StepResult], None] | None = None,
    checkpoint_meta: dict[str, Any] | None = None,
) -> TrainResult:
    """Alternate acting and learning until the windowed success rate reaches the bound
    or ``cfg.max_steps`` is spent. Writes one JSON line per finished episode."""
    trainer = Trainer(env_factory(), cfg, seed)
    records: list[dict[str, Any]] = []
    log_file = open(log_path, "w", encoding="utf-8") if log_path else None
    ckpt_dir = Path(checkpoint_dir) if checkpoint_dir else None
    if ckpt_dir:
        ckpt_dir.mkdir(parents=True, exist_ok=True)
    converged = False
    try:
        while trainer.state.t < cfg.max_steps:
            end = trainer.step(on_step)
            if ckpt_dir and cfg.checkpoint_every and trainer.state.t % cfg.checkpoint_every == 0:
                save_checkpoint(trainer.net, trainer.adam, ckpt_dir / f"step_{trainer.state.t:08d}.a2dq", checkpoint_meta)
            if end is None:
                continue
            rec = episode_record(end, trainer.state)
            records.append(rec)
            if log_file:
                log_file.write(json.dumps(rec) + "\n")
            if end.episode % 50 == 0:
                log.info("episode %d t=%d mean_success=%.2f eps=%.3f", end.episode, end.t, rec["mean_success"], rec["epsilon"])
            if rec["mean_success"] >= cfg.mean_success_bound:
                converged = True
                break
    finally:
        if log_file:
            log_file.close()
    final = None
    if ckpt_dir:
        final = ckpt_dir / "final.a2dq"
        save_checkpoint(trainer.net, trainer.adam, final, checkpoint_meta)
    return TrainResult(trainer.net, trainer.adam, records, trainer.state.t, converged, final)
