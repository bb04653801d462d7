"""Dense Q-network with dropout, hand-written backprop, Adam and a binary checkpoint format."""

from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, NamedTuple, Sequence

import numpy as np

CHECKPOINT_MAGIC = b"A2DQ"
CHECKPOINT_VERSION = 1
_ADAM_TAG = b"ADAM"


class ShapeError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


class QNetwork:
    """Fully connected net: rectifier on hidden layers, identity output.

    Weights are stored ``[out x in]``. When the net has hidden layers and a
    positive ``dropout_rate``, inverted dropout is applied to the last hidden
    activation in training mode.
    """

    def __init__(self, weights: Sequence[np.ndarray], biases: Sequence[np.ndarray], dropout_rate: float = 0.2):
        if len(weights) != len(biases) or not weights:
            raise ShapeError("need one bias vector per weight matrix")
        for i, (w, b) in enumerate(zip(weights, biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ShapeError(f"layer {i}: weight {w.shape} / bias {b.shape} mismatch")
            if i and w.shape[1] != weights[i - 1].shape[0]:
                raise ShapeError(f"layer {i} input {w.shape[1]} != previous output {weights[i - 1].shape[0]}")
        if not 0.0 <= dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")
        self.weights = [np.ascontiguousarray(w) for w in weights]
        self.biases = [np.ascontiguousarray(b) for b in biases]
        self.dropout_rate = float(dropout_rate)

    @classmethod
    def create(
        cls,
        sizes: Sequence[int],
        dropout_rate: float = 0.2,
        rng: np.random.Generator | None = None,
        dtype: Any = np.float32,
    ) -> "QNetwork":
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation for weights and biases."""
        if len(sizes) < 2:
            raise ShapeError("need at least input and output sizes")
        rng = rng if rng is not None else np.random.default_rng(0)
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)).astype(dtype))
            biases.append(rng.uniform(-bound, bound, size=fan_out).astype(dtype))
        return cls(weights, biases, dropout_rate)

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def input_width(self) -> int:
        return self.weights[0].shape[1]

    @property
    def output_width(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def dtype(self) -> np.dtype:
        return self.weights[0].dtype

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    @property
    def param_names(self) -> list[str]:
        names = []
        for i in range(len(self.weights)):
            names += [f"layer{i}.weight", f"layer{i}.bias"]
        return names

    def copy(self) -> "QNetwork":
        return QNetwork([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.dropout_rate)


def _forward(net: QNetwork, x: np.ndarray, training: bool, rng: np.random.Generator | None):
    x = np.asarray(x, dtype=net.dtype)
    if x.ndim != 2 or x.shape[1] != net.input_width:
        raise ShapeError(f"expected input [batch x {net.input_width}], got {x.shape}")
    n_layers = len(net.weights)
    use_dropout = training and net.dropout_rate > 0 and n_layers > 1
    if use_dropout and rng is None:
        raise ValueError("training-mode dropout needs a random stream")
    cache = []
    a = x
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = a @ w.T + b
        if i == n_layers - 1:
            cache.append((a, z, None))
            return z, cache
        h = np.maximum(z, 0)
        mask = None
        if use_dropout and i == n_layers - 2:
            keep = 1.0 - net.dropout_rate
            mask = (rng.random(h.shape) < keep).astype(net.dtype) / net.dtype.type(keep)
            h = h * mask
        cache.append((a, z, mask))
        a = h
    raise AssertionError("unreachable")


def forward(net: QNetwork, x: np.ndarray, training: bool = False, rng: np.random.Generator | None = None) -> np.ndarray:
    """Q-values ``[batch x n_actions]``; deterministic unless ``training`` is set."""
    out, _ = _forward(net, x, training, rng)
    return out


def mse_loss_and_grad(
    net: QNetwork,
    inputs: np.ndarray,
    actions: np.ndarray,
    targets: np.ndarray,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[float, list[np.ndarray]]:
    """Mean squared error on each sample's chosen-action output, with gradients.

    Gradients are returned in ``net.params`` order.
    """
    actions = np.asarray(actions, dtype=np.int64)
    batch = actions.shape[0]
    if batch == 0:
        raise ValueError("empty batch")
    q, cache = _forward(net, inputs, training, rng)
    rows = np.arange(batch)
    err = q[rows, actions] - np.asarray(targets, dtype=net.dtype)
    loss = float(np.mean(err.astype(np.float64) ** 2))

    delta = np.zeros_like(q)
    delta[rows, actions] = (2.0 / batch) * err
    grads: list[np.ndarray] = [None] * (2 * len(net.weights))  # type: ignore[list-item]
    for i in range(len(net.weights) - 1, -1, -1):
        a_prev, _, _ = cache[i]
        grads[2 * i] = delta.T @ a_prev
        grads[2 * i + 1] = delta.sum(axis=0)
        if i == 0:
            break
        delta = delta @ net.weights[i]
        _, z_prev, mask_prev = cache[i - 1]
        delta = delta * (z_prev > 0)
        if mask_prev is not None:
            delta = delta * mask_prev
    return loss, grads


@dataclass
class AdamState:
    first_moment: list[np.ndarray]
    second_moment: list[np.ndarray]
    step_count: int = 0
    lr: float = 0.00025
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_network(cls, net: QNetwork, lr: float = 0.00025, **kw: float) -> "AdamState":
        return cls([np.zeros_like(p) for p in net.params], [np.zeros_like(p) for p in net.params], 0, lr, **kw)


def adam_step(net: QNetwork, grads: Sequence[np.ndarray], state: AdamState) -> tuple[QNetwork, AdamState]:
    """Bias-corrected Adam update applied in place; returns ``(net, state)`` for chaining."""
    params = net.params
    if len(grads) != len(params):
        raise ShapeError("gradient list does not match parameters")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1**t
    corr2 = 1.0 - b2**t
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        denom = np.sqrt(v / corr2)
        denom += state.eps
        update = m / denom
        update *= state.lr / corr1
        p -= update.astype(p.dtype, copy=False)
    return net, state


def sync_target(source: QNetwork) -> QNetwork:
    """Independent deep copy used as the frozen target network."""
    return source.copy()


class Checkpoint(NamedTuple):
    net: QNetwork
    adam: AdamState
    meta: dict[str, Any]


def _write_tensor(buf: io.BytesIO, name: str, arr: np.ndarray) -> None:
    raw = name.encode("utf-8")
    buf.write(struct.pack("<I", len(raw)))
    buf.write(raw)
    buf.write(struct.pack("<I", arr.ndim))
    buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read(buf: io.BytesIO, n: int) -> bytes:
    data = buf.read(n)
    if len(data) != n:
        raise CheckpointError("checkpoint is truncated")
    return data


def _read_tensor(buf: io.BytesIO) -> tuple[str, np.ndarray]:
    (name_len,) = struct.unpack("<I", _read(buf, 4))
    name = _read(buf, name_len).decode("utf-8")
    (rank,) = struct.unpack("<I", _read(buf, 4))
    dims = struct.unpack(f"<{rank}I", _read(buf, 4 * rank))
    count = int(np.prod(dims)) if dims else 1
    arr = np.frombuffer(_read(buf, 4 * count), dtype="<f4").astype(np.float32).reshape(dims)
    return name, arr


def save_checkpoint(net: QNetwork, state: AdamState, path: str | Path, meta: dict[str, Any] | None = None) -> None:
    """Write ``net`` and ``state`` in the A2DQ binary layout (little-endian, float32 tensors)."""
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<H", CHECKPOINT_VERSION))
    buf.write(struct.pack("<I", len(net.params)))
    for name, p in zip(net.param_names, net.params):
        _write_tensor(buf, name, p)
    buf.write(_ADAM_TAG)
    buf.write(struct.pack("<Q4d", state.step_count, state.lr, state.beta1, state.beta2, state.eps))
    buf.write(struct.pack("<I", 2 * len(net.params)))
    for name, m in zip(net.param_names, state.first_moment):
        _write_tensor(buf, f"adam.m.{name}", m)
    for name, v in zip(net.param_names, state.second_moment):
        _write_tensor(buf, f"adam.v.{name}", v)
    config = {"sizes": net.sizes, "dropout_rate": net.dropout_rate, "meta": meta or {}}
    raw = json.dumps(config, sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<I", len(raw)))
    buf.write(raw)
    body = buf.getvalue()
    Path(path).write_bytes(body + hashlib.sha256(body).digest())


def load_checkpoint(path: str | Path, expected_input: int | None = None) -> Checkpoint:
    """Read a checkpoint, verifying header, digest and (optionally) the input width."""
    data = Path(path).read_bytes()
    if len(data) < 4 + 2 + 32:
        raise CheckpointError("checkpoint is truncated")
    if data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    body, digest = data[:-32], data[-32:]
    buf = io.BytesIO(body)
    buf.read(4)
    (version,) = struct.unpack("<H", _read(buf, 2))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("checkpoint digest mismatch (corrupt or truncated)")

    (n_params,) = struct.unpack("<I", _read(buf, 4))
    tensors = dict(_read_tensor(buf) for _ in range(n_params))
    if _read(buf, 4) != _ADAM_TAG:
        raise CheckpointError("missing optimizer record")
    step_count, lr, beta1, beta2, eps = struct.unpack("<Q4d", _read(buf, 40))
    (n_moments,) = struct.unpack("<I", _read(buf, 4))
    moments = dict(_read_tensor(buf) for _ in range(n_moments))
    (cfg_len,) = struct.unpack("<I", _read(buf, 4))
    config = json.loads(_read(buf, cfg_len).decode("utf-8"))

    n_layers = len(config["sizes"]) - 1
    try:
        weights = [tensors[f"layer{i}.weight"] for i in range(n_layers)]
        biases = [tensors[f"layer{i}.bias"] for i in range(n_layers)]
    except KeyError as exc:
        raise CheckpointError(f"missing tensor {exc}") from None
    net = QNetwork(weights, biases, config["dropout_rate"])
    if net.sizes != config["sizes"]:
        raise CheckpointError("tensor shapes disagree with recorded sizes")
    if expected_input is not None and net.input_width != expected_input:
        raise ShapeError(f"checkpoint expects {net.input_width} inputs, environment provides {expected_input}")
    names = net.param_names
    adam = AdamState(
        [moments[f"adam.m.{n}"] for n in names],
        [moments[f"adam.v.{n}"] for n in names],
        int(step_count),
        lr,
        beta1,
        beta2,
        eps,
    )
    return Checkpoint(net, adam, config.get("meta", {}))
