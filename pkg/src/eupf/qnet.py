"""
Small dense Q-network in plain numpy.

Scalar state in, one Q-value per egress interface out, ReLU hidden layers.
Everything is value-in / value-out: ``train_step`` returns fresh parameter
and optimizer objects and never touches its inputs.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np

DEFAULT_SIZES = (1, 64, 64, 2)
CHECKPOINT_MAGIC = "eupf-qnet/1"


class TrainingDivergenceError(FloatingPointError):
    pass


@dataclass
class QNetParams:
    """Weights stored as (fan_in, fan_out) so a batch forward is ``x @ W + b``."""

    weights: List[np.ndarray]
    biases: List[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias per weight matrix and at least one layer")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError(f"layer {k}: weight {w.shape} and bias {b.shape} disagree")
            if k and self.weights[k - 1].shape[1] != w.shape[0]:
                raise ValueError(f"layer {k} input {w.shape[0]} != previous output {self.weights[k - 1].shape[1]}")
        if self.sizes[0] != 1 or self.sizes[-1] != 2:
            raise ValueError(f"network must map 1 input to 2 outputs, got {self.sizes}")

    @property
    def sizes(self) -> Tuple[int, ...]:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    def arrays(self) -> List[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "QNetParams":
        return QNetParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def is_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.arrays())


@dataclass
class AdamState:
    first_moment: List[np.ndarray]
    second_moment: List[np.ndarray]
    step_count: int = 0
    learning_rate: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon_stability: float = 1e-8

    @classmethod
    def for_params(cls, params: QNetParams, learning_rate: float = 5e-4, **kw) -> "AdamState":
        zeros = [np.zeros_like(a) for a in params.arrays()]
        return cls(zeros, [z.copy() for z in zeros], learning_rate=learning_rate, **kw)


@dataclass
class TrainBatch:
    states: np.ndarray
    actions: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64).reshape(-1)
        self.actions = np.asarray(self.actions, dtype=np.int64).reshape(-1)
        self.targets = np.asarray(self.targets, dtype=np.float64).reshape(-1)
        n = len(self.states)
        if n == 0 or len(self.actions) != n or len(self.targets) != n:
            raise ValueError(
                f"batch sequences must be equal and non-empty, got "
                f"{len(self.states)}/{len(self.actions)}/{len(self.targets)}"
            )
        if ((self.actions != 0) & (self.actions != 1)).any():
            raise ValueError("actions must be 0 or 1")


def init_params(rng: np.random.Generator, sizes: Sequence[int] = DEFAULT_SIZES) -> QNetParams:
    """U(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return QNetParams(weights, biases)


def _forward_cache(params: QNetParams, x: np.ndarray):
    """Batch forward keeping pre-activations for backprop. ``x`` has shape (B, 1)."""
    acts = [x]
    pre = []
    h = x
    last = len(params.weights) - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w + b
        pre.append(z)
        h = z if k == last else np.maximum(z, 0.0)
        acts.append(h)
    return pre, acts


def forward_batch(params: QNetParams, states) -> np.ndarray:
    x = np.asarray(states, dtype=np.float64).reshape(-1, 1)
    if not np.isfinite(x).all():
        raise ValueError("states must be finite")
    return _forward_cache(params, x)[1][-1]


def forward(params: QNetParams, state: float) -> np.ndarray:
    """[Q(s, n6a), Q(s, n6b)]."""
    return forward_batch(params, [state])[0]


def td_targets(rewards, next_states, target_params: QNetParams, gamma: float) -> np.ndarray:
    rewards = np.asarray(rewards, dtype=np.float64).reshape(-1)
    next_states = np.asarray(next_states, dtype=np.float64).reshape(-1)
    if rewards.shape != next_states.shape:
        raise ValueError(f"rewards {rewards.shape} and next_states {next_states.shape} differ")
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must be in [0, 1], got {gamma}")
    if gamma == 0.0:
        return rewards.copy()
    # fixed-horizon episodes: every transition bootstraps
    return rewards + gamma * forward_batch(target_params, next_states).max(axis=1)


def loss_and_grads(params: QNetParams, batch: TrainBatch) -> Tuple[float, List[np.ndarray]]:
    """Mean squared TD error and its gradient, ordered like ``params.arrays()``."""
    x = batch.states.reshape(-1, 1)
    if not np.isfinite(x).all():
        raise ValueError("states must be finite")
    pre, acts = _forward_cache(params, x)
    q = acts[-1]
    n = len(batch.states)
    rows = np.arange(n)
    err = q[rows, batch.actions] - batch.targets
    loss = float(np.mean(err**2))

    delta = np.zeros_like(q)
    delta[rows, batch.actions] = 2.0 * err / n
    grads_w = [None] * len(params.weights)
    grads_b = [None] * len(params.weights)
    for k in range(len(params.weights) - 1, -1, -1):
        grads_w[k] = acts[k].T @ delta
        grads_b[k] = delta.sum(axis=0)
        if k:
            delta = (delta @ params.weights[k].T) * (pre[k - 1] > 0)
    grads = []
    for gw, gb in zip(grads_w, grads_b):
        grads += [gw, gb]
    return loss, grads


def train_step(params: QNetParams, adam: AdamState, batch: TrainBatch) -> Tuple[QNetParams, AdamState, float]:
    """One Adam step on the batch; returns (new params, new optimizer state, pre-update loss)."""
    shapes = [a.shape for a in params.arrays()]
    if [m.shape for m in adam.first_moment] != shapes or [v.shape for v in adam.second_moment] != shapes:
        raise ValueError("optimizer moments do not match parameter shapes")
    # divergence is reported below, not through numpy warnings
    with np.errstate(invalid="ignore", over="ignore"):
        loss, grads = loss_and_grads(params, batch)
    if not np.isfinite(loss) or not all(np.isfinite(g).all() for g in grads):
        raise TrainingDivergenceError(f"non-finite loss or gradient (loss={loss})")

    t = adam.step_count + 1
    b1, b2 = adam.beta1, adam.beta2
    m_hat_scale = 1.0 / (1.0 - b1**t)
    v_hat_scale = 1.0 / (1.0 - b2**t)
    new_arrays, new_m, new_v = [], [], []
    for p, g, m, v in zip(params.arrays(), grads, adam.first_moment, adam.second_moment):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        p = p - adam.learning_rate * (m * m_hat_scale) / (np.sqrt(v * v_hat_scale) + adam.epsilon_stability)
        new_arrays.append(p)
        new_m.append(m)
        new_v.append(v)

    new_params = QNetParams(new_arrays[0::2], new_arrays[1::2])
    if not new_params.is_finite():
        raise TrainingDivergenceError("parameters became non-finite")
    new_adam = AdamState(
        new_m, new_v, t, adam.learning_rate, adam.beta1, adam.beta2, adam.epsilon_stability
    )
    return new_params, new_adam, loss


def sync_target(params: QNetParams) -> QNetParams:
    return params.copy()


def param_hash(params: QNetParams) -> str:
    h = hashlib.sha256()
    for a in params.arrays():
        h.update(str(a.shape).encode())
        h.update(np.ascontiguousarray(a, dtype=np.float64).tobytes())
    return h.hexdigest()


# -- checkpoints --------------------------------------------------------

def params_to_dict(params: QNetParams) -> dict:
    return {
        "magic": CHECKPOINT_MAGIC,
        "sizes": list(params.sizes),
        "layers": [
            {"shape": list(w.shape), "weights": w.reshape(-1).tolist(), "bias": b.tolist()}
            for w, b in zip(params.weights, params.biases)
        ],
    }


def params_from_dict(data: dict, expected_sizes: Sequence[int] = DEFAULT_SIZES) -> QNetParams:
    if data.get("magic") != CHECKPOINT_MAGIC:
        raise ValueError(f"not a Q-network checkpoint (magic={data.get('magic')!r})")
    sizes = tuple(data["sizes"])
    if expected_sizes is not None and sizes != tuple(expected_sizes):
        raise ValueError(f"checkpoint sizes {sizes} != expected {tuple(expected_sizes)}")
    weights, biases = [], []
    for k, layer in enumerate(data["layers"]):
        shape = tuple(layer["shape"])
        if shape != (sizes[k], sizes[k + 1]):
            raise ValueError(f"layer {k} shape {shape} does not match sizes {sizes}")
        w = np.asarray(layer["weights"], dtype=np.float64)
        b = np.asarray(layer["bias"], dtype=np.float64)
        if w.size != shape[0] * shape[1] or b.shape != (shape[1],):
            raise ValueError(f"layer {k}: value count does not match shape {shape}")
        weights.append(w.reshape(shape))
        biases.append(b)
    return QNetParams(weights, biases)


def save_params(params: QNetParams, path, **extra):
    data = params_to_dict(params)
    data.update(extra)
    Path(path).write_text(json.dumps(data))


def load_params(path, expected_sizes: Sequence[int] = DEFAULT_SIZES) -> Tuple[QNetParams, dict]:
    """Returns the parameters and any extra keys saved alongside them."""
    data = json.loads(Path(path).read_text())
    params = params_from_dict(data, expected_sizes)
    extra = {k: v for k, v in data.items() if k not in ("magic", "sizes", "layers")}
    return params, extra
