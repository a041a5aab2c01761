"""Dense feedforward network engine.

Batches are row-major: one sample per row, so a layer maps an ``n x fan_in``
matrix to ``n x fan_out`` via ``X @ W.T + b``.  Weights are stored as
``fan_out x fan_in`` so that ``W`` acts on column vectors the usual way.

Gradients are plain lists of ``(dW, db)`` pairs, one per layer, mirroring
the parameter shapes exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np
from scipy.special import expit

from .errors import ConfigError, ShapeError, TrainingError

SIGMOID = "sigmoid"
LINEAR = "linear"
ACTIVATIONS = (SIGMOID, LINEAR)

Gradients = List[Tuple[np.ndarray, np.ndarray]]


def sigmoid(x):
    return expit(np.asarray(x, dtype=np.float64))


@dataclass
class Layer:
    weights: np.ndarray
    bias: np.ndarray
    activation: str = SIGMOID

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2:
            raise ShapeError(f"weights must be 2-D, got shape {self.weights.shape}")
        if self.bias.shape != (self.weights.shape[0],):
            raise ShapeError(
                f"bias shape {self.bias.shape} does not match fan_out {self.weights.shape[0]}"
            )
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")

    @property
    def fan_in(self) -> int:
        return self.weights.shape[1]

    @property
    def fan_out(self) -> int:
        return self.weights.shape[0]

    def copy(self) -> "Layer":
        return Layer(self.weights.copy(), self.bias.copy(), self.activation)


@dataclass
class MlpModel:
    layers: List[Layer]
    input_dim: int

    def __post_init__(self):
        expected = self.input_dim
        for k, layer in enumerate(self.layers):
            if layer.fan_in != expected:
                raise ShapeError(
                    f"layer {k} has fan_in {layer.fan_in}, expected {expected}"
                )
            expected = layer.fan_out

    @property
    def output_dim(self) -> int:
        return self.layers[-1].fan_out if self.layers else self.input_dim

    @property
    def sizes(self) -> List[int]:
        return [self.input_dim] + [layer.fan_out for layer in self.layers]

    @property
    def activations(self) -> List[str]:
        return [layer.activation for layer in self.layers]

    def copy(self) -> "MlpModel":
        return MlpModel([layer.copy() for layer in self.layers], self.input_dim)

    def parameters(self) -> List[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend((layer.weights, layer.bias))
        return out


def init_layer(fan_in: int, fan_out: int, activation: str, rng: np.random.Generator) -> Layer:
    """Scaled-uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero bias."""
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    weights = rng.uniform(-limit, limit, size=(fan_out, fan_in))
    return Layer(weights, np.zeros(fan_out), activation)


def build_mlp(sizes: Sequence[int], activations: Sequence[str], seed: int) -> MlpModel:
    if len(sizes) < 2:
        raise ConfigError("an MLP needs at least an input and an output size")
    if len(activations) != len(sizes) - 1:
        raise ConfigError(
            f"{len(sizes) - 1} layers need {len(sizes) - 1} activations, got {len(activations)}"
        )
    if any(int(s) < 1 for s in sizes):
        raise ConfigError(f"layer sizes must be positive, got {list(sizes)}")
    rng = np.random.default_rng(seed)
    layers = [
        init_layer(int(sizes[k]), int(sizes[k + 1]), activations[k], rng)
        for k in range(len(sizes) - 1)
    ]
    return MlpModel(layers, int(sizes[0]))


def _activate(z, activation):
    return sigmoid(z) if activation == SIGMOID else z


def _as_batch(batch, dim, what="batch"):
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim == 1:
        batch = batch.reshape(1, -1)
    if batch.ndim != 2 or batch.shape[1] != dim:
        raise ShapeError(f"{what} has shape {batch.shape}, expected (n, {dim})")
    return batch


def forward_layers(layers: Sequence[Layer], batch: np.ndarray) -> List[np.ndarray]:
    """Return the list of activations ``[input, out_1, ..., out_L]``."""
    acts = [batch]
    x = batch
    for k, layer in enumerate(layers):
        if x.shape[1] != layer.fan_in:
            raise ShapeError(
                f"layer {k} expects {layer.fan_in} inputs, got {x.shape[1]}"
            )
        x = _activate(x @ layer.weights.T + layer.bias, layer.activation)
        acts.append(x)
    return acts


def forward(model: MlpModel, batch) -> np.ndarray:
    batch = _as_batch(batch, model.input_dim)
    return forward_layers(model.layers, batch)[-1]


def mse(prediction, target) -> float:
    prediction = np.asarray(prediction, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if prediction.shape != target.shape:
        raise ShapeError(f"prediction shape {prediction.shape} != target shape {target.shape}")
    if prediction.size == 0:
        return 0.0
    diff = prediction - target
    return float(np.mean(diff * diff))


def backward_layers(layers: Sequence[Layer], batch: np.ndarray, target: np.ndarray):
    """Loss and exact gradients of ``mse(forward(batch), target)``."""
    acts = forward_layers(layers, batch)
    out = acts[-1]
    if out.shape != target.shape:
        raise ShapeError(f"target shape {target.shape} != output shape {out.shape}")
    diff = out - target
    loss = float(np.mean(diff * diff)) if diff.size else 0.0
    delta = 2.0 * diff / max(diff.size, 1)
    grads: Gradients = [None] * len(layers)
    for k in range(len(layers) - 1, -1, -1):
        layer = layers[k]
        if layer.activation == SIGMOID:
            a = acts[k + 1]
            delta = delta * a * (1.0 - a)
        grads[k] = (delta.T @ acts[k], delta.sum(axis=0))
        if k:
            delta = delta @ layer.weights
    return loss, grads


def backward(model: MlpModel, batch, target) -> Gradients:
    batch = _as_batch(batch, model.input_dim)
    target = _as_batch(target, model.output_dim, "target")
    if target.shape[0] != batch.shape[0]:
        raise ShapeError(f"batch has {batch.shape[0]} rows but target has {target.shape[0]}")
    return backward_layers(model.layers, batch, target)[1]


@dataclass
class RmspropState:
    learning_rate: float = 0.001
    decay: float = 0.9
    epsilon: float = 1e-8
    mean_square: List[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if not 0.0 < self.decay < 1.0:
            raise ConfigError("decay must lie in (0, 1)")
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be positive")

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray], **kwargs) -> "RmspropState":
        return cls(mean_square=[np.zeros_like(p) for p in params], **kwargs)

    def copy(self) -> "RmspropState":
        return RmspropState(
            self.learning_rate, self.decay, self.epsilon, [m.copy() for m in self.mean_square]
        )


def apply_rmsprop(params: Sequence[np.ndarray], grads: Sequence[np.ndarray],
                  state: RmspropState, names: Sequence[str] | None = None) -> None:
    """In-place RMSprop update of ``params`` and ``state.mean_square``."""
    if not state.mean_square:
        state.mean_square = [np.zeros_like(p) for p in params]
    if not (len(params) == len(grads) == len(state.mean_square)):
        raise ShapeError("params, grads and optimizer state differ in length")
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape or p.shape != state.mean_square[i].shape:
            raise ShapeError(f"parameter {i}: shape {p.shape} vs grad {g.shape}")
        if not np.all(np.isfinite(g)):
            label = names[i] if names else f"parameter {i}"
            raise TrainingError(f"non-finite gradient in {label}")
    decay, lr, eps = state.decay, state.learning_rate, state.epsilon
    for p, g, ms in zip(params, grads, state.mean_square):
        ms *= decay
        ms += (1.0 - decay) * g * g
        p -= lr * g / np.sqrt(ms + eps)


def _param_names(n_layers):
    names = []
    for k in range(n_layers):
        names.extend((f"layer {k} weights", f"layer {k} bias"))
    return names


def flatten_grads(grads: Gradients) -> List[np.ndarray]:
    out = []
    for dw, db in grads:
        out.extend((dw, db))
    return out


def rmsprop_step(model: MlpModel, grads: Gradients, state: RmspropState):
    """One RMSprop update; returns ``(new_model, new_state)`` and leaves inputs untouched."""
    if len(grads) != len(model.layers):
        raise ShapeError(f"{len(grads)} gradient pairs for {len(model.layers)} layers")
    new_model = model.copy()
    new_state = state.copy()
    apply_rmsprop(new_model.parameters(), flatten_grads(grads), new_state,
                  _param_names(len(model.layers)))
    return new_model, new_state


def relative_error(analytic: float, numeric: float, floor: float = 1e-8) -> float:
    """``|a - f| / max(|a|, |f|, floor)``, with an absolute fallback near zero.

    When the analytic value is below ``floor`` in magnitude the two are
    compared absolutely: agreement within ``floor`` counts as exact.
    """
    diff = abs(analytic - numeric)
    if abs(analytic) < floor and diff < floor:
        return 0.0
    return diff / max(abs(analytic), abs(numeric), floor)


def _loss_extended(layers, batch, target):
    # Extended precision keeps finite-difference cancellation below the
    # tolerances the checker is used with.
    x = batch.astype(np.longdouble)
    for layer in layers:
        z = x @ layer.weights.astype(np.longdouble).T + layer.bias.astype(np.longdouble)
        x = 1 / (1 + np.exp(-z)) if layer.activation == SIGMOID else z
    diff = x - target.astype(np.longdouble)
    return np.mean(diff * diff) if diff.size else np.longdouble(0)


def grad_check(model: MlpModel, batch, target, step: float = 1e-6) -> float:
    """Worst relative discrepancy between ``backward`` and central differences."""
    if not step > 0:
        raise ConfigError("finite-difference step must be positive")
    batch = _as_batch(batch, model.input_dim)
    target = _as_batch(target, model.output_dim, "target")
    if target.shape[0] != batch.shape[0]:
        raise ShapeError(f"batch has {batch.shape[0]} rows but target has {target.shape[0]}")
    analytic = flatten_grads(backward(model, batch, target))
    probe = model.copy()
    worst = 0.0
    for param, grad in zip(probe.parameters(), analytic):
        flat = param.reshape(-1)
        gflat = grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = _loss_extended(probe.layers, batch, target)
            flat[i] = orig - step
            down = _loss_extended(probe.layers, batch, target)
            flat[i] = orig
            # The realised step differs from `step` by float64 rounding.
            width = (np.longdouble(orig) + step) - (np.longdouble(orig) - step)
            numeric = float((up - down) / width)
            worst = max(worst, relative_error(float(gflat[i]), numeric))
    return worst


def minibatches(n: int, batch_size: int, rng: np.random.Generator):
    """Yield shuffled index arrays covering ``range(n)`` once."""
    if batch_size < 1:
        raise ConfigError("batch size must be at least 1")
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]
