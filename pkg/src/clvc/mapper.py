"""Target-speaker mapping network: bottleneck features to spectral frames.

Topology (M/2)L-50N-50N-ML: the input is presented unchanged, two sigmoid
hidden layers of 50 units, and a linear output of M units.  Inputs and
targets are z-scored with statistics kept in the model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np

from . import nncore
from .dae import NormStats
from .errors import AlignmentError, ConfigError, DataError, ShapeError, TrainingError
from .nncore import LINEAR, SIGMOID, MlpModel, RmspropState

DEFAULT_HIDDEN = (50, 50)


@dataclass
class MapperModel:
    net: MlpModel
    input_norm: NormStats
    output_norm: NormStats
    target_speaker_id: str = ""
    dae_hash: str = ""
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.input_norm.dim != self.net.input_dim:
            raise ShapeError("input normalization does not match network input")
        if self.output_norm.dim != self.net.output_dim:
            raise ShapeError("output normalization does not match network output")

    @property
    def input_dim(self) -> int:
        return self.net.input_dim

    @property
    def output_dim(self) -> int:
        return self.net.output_dim


@dataclass
class MapperTrainConfig:
    learning_rate: float = 0.001
    epochs: int = 25
    batch_size: int = 64
    seed: int = 0
    hidden_widths: Sequence[int] = DEFAULT_HIDDEN
    decay: float = 0.9
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        self.hidden_widths = tuple(int(w) for w in self.hidden_widths)


def mapper_build(input_dim: int, output_dim: int, seed: int = 0,
                 hidden_widths: Sequence[int] = DEFAULT_HIDDEN) -> MlpModel:
    sizes = [int(input_dim)] + [int(w) for w in hidden_widths] + [int(output_dim)]
    acts = [SIGMOID] * len(hidden_widths) + [LINEAR]
    return nncore.build_mlp(sizes, acts, seed)


def mapper_train(bottleneck, targets, config: MapperTrainConfig = None,
                 target_speaker_id: str = "", dae_hash: str = ""):
    """Fit the mapping for exactly ``config.epochs`` epochs.

    Rows of ``bottleneck`` and ``targets`` must come from the same frames.
    Returns ``(model, loss_trace)``; the trace holds the full-data normalized
    MSE after each epoch.
    """
    config = config or MapperTrainConfig()
    x = np.asarray(bottleneck, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2:
        raise ShapeError("bottleneck features and targets must be 2-D")
    if x.shape[0] != y.shape[0]:
        raise AlignmentError(f"{x.shape[0]} bottleneck rows but {y.shape[0]} target rows")
    if x.shape[0] == 0:
        raise DataError("mapper training set is empty")

    input_norm = NormStats.fit(x)
    output_norm = NormStats.fit(y)
    xn = input_norm.normalize(x)
    yn = output_norm.normalize(y)
    net = mapper_build(x.shape[1], y.shape[1], config.seed, config.hidden_widths)
    params = net.parameters()
    names = [f"layer {k} {p}" for k in range(len(net.layers)) for p in ("weights", "bias")]
    state = RmspropState.for_params(params, learning_rate=config.learning_rate,
                                    decay=config.decay, epsilon=config.epsilon)
    rng = np.random.default_rng(config.seed)
    trace: List[float] = []
    for epoch in range(1, config.epochs + 1):
        for idx in nncore.minibatches(xn.shape[0], config.batch_size, rng):
            _, grads = nncore.backward_layers(net.layers, xn[idx], yn[idx])
            nncore.apply_rmsprop(params, nncore.flatten_grads(grads), state, names)
        loss = nncore.mse(nncore.forward(net, xn), yn)
        if not math.isfinite(loss):
            raise TrainingError(f"non-finite mapper loss at epoch {epoch}")
        trace.append(loss)
    model_config = {
        "learning_rate": config.learning_rate, "epochs": config.epochs,
        "batch_size": config.batch_size, "seed": config.seed,
        "hidden_widths": list(config.hidden_widths), "decay": config.decay,
        "epsilon": config.epsilon,
    }
    model = MapperModel(net, input_norm, output_norm, target_speaker_id, dae_hash, model_config)
    return model, trace


def mapper_convert(model: MapperModel, bottleneck) -> np.ndarray:
    x = np.asarray(bottleneck, dtype=np.float64)
    if x.ndim == 1 and x.size == 0:
        x = x.reshape(0, model.input_dim)
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise ShapeError(f"bottleneck features have shape {x.shape}, expected (n, {model.input_dim})")
    out = nncore.forward(model.net, model.input_norm.normalize(x))
    return model.output_norm.denormalize(out)
