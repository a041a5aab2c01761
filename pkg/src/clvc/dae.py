"""Deep autoencoder with tied decoder weights and a linear bottleneck.

Encoder widths default to 512-512-M/2: two sigmoid layers then a linear
bottleneck.  The decoder mirrors it (512-512-M) using the transposed
encoder matrices with its own biases; its final layer is linear.

Inputs are z-scored with statistics stored in the model, so ``dae_encode``
and ``dae_decode`` work in raw feature space.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from . import nncore
from .errors import ConfigError, DataError, ShapeError, TrainingError
from .nncore import LINEAR, SIGMOID, Layer, MlpModel, RmspropState

log = logging.getLogger(__name__)

STD_FLOOR = 1e-8
DEFAULT_HIDDEN = (512, 512)


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.maximum(np.asarray(self.std, dtype=np.float64), STD_FLOOR)
        if self.mean.shape != self.std.shape or self.mean.ndim != 1:
            raise ShapeError(f"mean {self.mean.shape} and std {self.std.shape} must be equal 1-D")

    @classmethod
    def identity(cls, dim: int) -> "NormStats":
        return cls(np.zeros(dim), np.ones(dim))

    @classmethod
    def fit(cls, data) -> "NormStats":
        data = np.asarray(data, dtype=np.float64)
        if data.ndim != 2 or data.shape[0] == 0:
            raise DataError("normalization statistics need at least one frame")
        return cls(data.mean(axis=0), data.std(axis=0))

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def normalize(self, x):
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def denormalize(self, z):
        return np.asarray(z, dtype=np.float64) * self.std + self.mean


@dataclass
class DaeModel:
    encoder_layers: List[Layer]
    decoder_biases: List[np.ndarray]
    feature_dim: int
    norm: NormStats
    tied: bool = True
    decoder_weights: Optional[List[np.ndarray]] = None
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        widths = [self.feature_dim] + [layer.fan_out for layer in self.encoder_layers]
        MlpModel(self.encoder_layers, self.feature_dim)  # validates chaining
        acts = [layer.activation for layer in self.encoder_layers]
        if acts[-1] != LINEAR or any(a != SIGMOID for a in acts[:-1]):
            raise ConfigError("encoder must be sigmoid layers followed by a linear bottleneck")
        if len(self.decoder_biases) != len(self.encoder_layers):
            raise ShapeError("one decoder bias per encoder layer is required")
        for j, b in enumerate(self.decoder_biases):
            if np.shape(b) != (widths[-2 - j],):
                raise ShapeError(f"decoder bias {j} has shape {np.shape(b)}, expected ({widths[-2 - j]},)")
        if self.tied:
            self.decoder_weights = None
        elif self.decoder_weights is None or len(self.decoder_weights) != len(self.encoder_layers):
            raise ConfigError("an untied autoencoder needs its own decoder weights")
        if self.norm.dim != self.feature_dim:
            raise ShapeError("normalization dimension differs from feature dimension")

    @property
    def bottleneck_dim(self) -> int:
        return self.encoder_layers[-1].fan_out

    @property
    def widths(self) -> List[int]:
        """Unit counts along the full autoencoder, input to reconstruction."""
        enc = [self.feature_dim] + [layer.fan_out for layer in self.encoder_layers]
        return enc + enc[-2::-1]

    def decoder_layers(self) -> List[Layer]:
        layers = []
        n = len(self.encoder_layers)
        for j in range(n):
            k = n - 1 - j
            if self.tied:
                w = self.encoder_layers[k].weights.T
            else:
                w = self.decoder_weights[j]
            layers.append(Layer(w, self.decoder_biases[j], LINEAR if k == 0 else SIGMOID))
        return layers

    def encoder_view(self) -> MlpModel:
        return MlpModel(self.encoder_layers, self.feature_dim)

    def unrolled(self) -> MlpModel:
        return MlpModel(self.encoder_layers + self.decoder_layers(), self.feature_dim)

    def parameters(self) -> List[np.ndarray]:
        """Trainable arrays; shared (tied) matrices appear once."""
        params = []
        for layer in self.encoder_layers:
            params.extend((layer.weights, layer.bias))
        params.extend(self.decoder_biases)
        if not self.tied:
            params.extend(self.decoder_weights)
        return params

    def parameter_names(self) -> List[str]:
        names = []
        for k in range(len(self.encoder_layers)):
            names.extend((f"encoder layer {k} weights", f"encoder layer {k} bias"))
        names.extend(f"decoder layer {j} bias" for j in range(len(self.decoder_biases)))
        if not self.tied:
            names.extend(f"decoder layer {j} weights" for j in range(len(self.decoder_weights)))
        return names

    def copy(self) -> "DaeModel":
        return DaeModel(
            [layer.copy() for layer in self.encoder_layers],
            [b.copy() for b in self.decoder_biases],
            self.feature_dim,
            NormStats(self.norm.mean.copy(), self.norm.std.copy()),
            self.tied,
            None if self.decoder_weights is None else [w.copy() for w in self.decoder_weights],
            dict(self.config),
        )


def dae_build(feature_dim: int, seed: int = 0, hidden_widths: Sequence[int] = DEFAULT_HIDDEN,
              bottleneck_dim: Optional[int] = None, tied: bool = True) -> DaeModel:
    """Freshly initialized autoencoder for ``feature_dim``-dimensional frames."""
    feature_dim = int(feature_dim)
    if feature_dim < 2:
        raise ConfigError(f"feature dimension must be at least 2, got {feature_dim}")
    if bottleneck_dim is None:
        if feature_dim % 2:
            raise ConfigError(f"feature dimension must be even for an M/2 bottleneck, got {feature_dim}")
        bottleneck_dim = feature_dim // 2
    sizes = [feature_dim] + [int(w) for w in hidden_widths] + [int(bottleneck_dim)]
    if any(s < 1 for s in sizes):
        raise ConfigError(f"layer widths must be positive, got {sizes}")
    rng = np.random.default_rng(seed)
    encoder = [
        nncore.init_layer(sizes[k], sizes[k + 1],
                          LINEAR if k == len(sizes) - 2 else SIGMOID, rng)
        for k in range(len(sizes) - 1)
    ]
    decoder_biases = [np.zeros(sizes[-2 - j]) for j in range(len(encoder))]
    decoder_weights = None
    if not tied:
        decoder_weights = [
            nncore.init_layer(sizes[-1 - j], sizes[-2 - j], SIGMOID, rng).weights
            for j in range(len(encoder))
        ]
    config = {"seed": int(seed), "hidden_widths": [int(w) for w in hidden_widths],
              "bottleneck_dim": int(bottleneck_dim), "tied": bool(tied)}
    return DaeModel(encoder, decoder_biases, feature_dim, NormStats.identity(feature_dim),
                    tied, decoder_weights, config)


def _frames(frames, dim, what):
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim == 1 and frames.size == 0:
        frames = frames.reshape(0, dim)
    if frames.ndim != 2 or frames.shape[1] != dim:
        raise ShapeError(f"{what} have shape {frames.shape}, expected (n, {dim})")
    return frames


def dae_encode(model: DaeModel, frames) -> np.ndarray:
    frames = _frames(frames, model.feature_dim, "frames")
    return nncore.forward_layers(model.encoder_layers, model.norm.normalize(frames))[-1]


def dae_decode(model: DaeModel, bottleneck) -> np.ndarray:
    bottleneck = _frames(bottleneck, model.bottleneck_dim, "bottleneck features")
    z = nncore.forward_layers(model.decoder_layers(), bottleneck)[-1]
    return model.norm.denormalize(z)


def dae_reconstruct(model: DaeModel, frames) -> np.ndarray:
    return dae_decode(model, dae_encode(model, frames))


def dae_gradients(model: DaeModel, batch: np.ndarray):
    """Reconstruction loss and gradients (in ``model.parameters()`` order) on normalized ``batch``."""
    n_enc = len(model.encoder_layers)
    loss, grads = nncore.backward_layers(model.unrolled().layers, batch, batch)
    out = []
    for k in range(n_enc):
        dw, db = grads[k]
        if model.tied:
            # Shared matrix: encoder use plus the transposed decoder use.
            dw = dw + grads[2 * n_enc - 1 - k][0].T
        out.extend((dw, db))
    out.extend(grads[n_enc + j][1] for j in range(n_enc))
    if not model.tied:
        out.extend(grads[n_enc + j][0] for j in range(n_enc))
    return loss, out


@dataclass
class DaeTrainConfig:
    learning_rate: float = 0.001
    patience: int = 15
    batch_size: int = 64
    max_epochs: int = 200
    validation_fraction: float = 0.1
    seed: int = 0
    decay: float = 0.9
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.patience < 1 or self.max_epochs < 1 or self.batch_size < 1:
            raise ConfigError("patience, max_epochs and batch_size must be positive")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ConfigError("validation_fraction must lie in [0, 1)")


class EarlyStopping:
    """Stop once the monitored loss has not improved for ``patience`` epochs.

    Epochs are counted from 1.  With the best loss at epoch ``b`` and no
    later improvement, ``update`` returns True at epoch ``b + patience``.
    """

    def __init__(self, patience: int):
        self.patience = patience
        self.best = math.inf
        self.best_epoch = 0
        self.epoch = 0

    def update(self, loss: float) -> bool:
        self.epoch += 1
        if loss < self.best:
            self.best = loss
            self.best_epoch = self.epoch
        return self.epoch - self.best_epoch >= self.patience


@dataclass
class TrainTrace:
    train_loss: List[float] = field(default_factory=list)
    val_loss: List[float] = field(default_factory=list)
    best_epoch: int = 0
    epochs_run: int = 0

    def to_dict(self) -> dict:
        return {"train_loss": self.train_loss, "val_loss": self.val_loss,
                "best_epoch": self.best_epoch, "epochs_run": self.epochs_run}


def split_utterances(n_utts: int, fraction: float, rng: np.random.Generator):
    """Seeded shuffle of utterance indices; the last ``fraction`` becomes validation."""
    order = rng.permutation(n_utts)
    n_val = int(math.ceil(fraction * n_utts)) if n_utts >= 2 and fraction > 0 else 0
    n_val = min(n_val, n_utts - 1)
    return order[:n_utts - n_val], order[n_utts - n_val:]


def _utterance_frames(item):
    return np.asarray(getattr(item, "frames", item), dtype=np.float64)


def dae_train(model: DaeModel, corpus: Sequence, config: DaeTrainConfig = None):
    """Train on frames pooled over every utterance in ``corpus``.

    ``corpus`` holds FeatureUtterance objects (or bare frame matrices).
    Returns ``(best_model, trace)``.
    """
    config = config or DaeTrainConfig()
    utts = [_utterance_frames(u) for u in corpus]
    if not utts or sum(u.shape[0] for u in utts) == 0:
        raise DataError("autoencoder training corpus is empty")
    for u in utts:
        _frames(u, model.feature_dim, "training frames")
    rng = np.random.default_rng(config.seed)
    train_idx, val_idx = split_utterances(len(utts), config.validation_fraction, rng)
    train = np.concatenate([utts[i] for i in train_idx])
    val = np.concatenate([utts[i] for i in val_idx]) if len(val_idx) else None
    if train.shape[0] == 0:
        raise DataError("no training frames left after the validation split")

    model = model.copy()
    model.norm = NormStats.fit(train)
    train_n = model.norm.normalize(train)
    val_n = model.norm.normalize(val) if val is not None and val.shape[0] else None

    params = model.parameters()
    names = model.parameter_names()
    state = RmspropState.for_params(params, learning_rate=config.learning_rate,
                                    decay=config.decay, epsilon=config.epsilon)
    stopper = EarlyStopping(config.patience)
    trace = TrainTrace()
    best = model.copy()
    for epoch in range(1, config.max_epochs + 1):
        for idx in nncore.minibatches(train_n.shape[0], config.batch_size, rng):
            _, grads = dae_gradients(model, train_n[idx])
            nncore.apply_rmsprop(params, grads, state, names)
        train_loss = _recon_loss(model, train_n)
        val_loss = _recon_loss(model, val_n) if val_n is not None else train_loss
        if not (math.isfinite(train_loss) and math.isfinite(val_loss)):
            raise TrainingError(f"non-finite autoencoder loss at epoch {epoch}")
        trace.train_loss.append(train_loss)
        trace.val_loss.append(val_loss)
        log.debug("dae epoch %d train %.6g val %.6g", epoch, train_loss, val_loss)
        stop = stopper.update(val_loss)
        if stopper.best_epoch == epoch:
            best = model.copy()
        if stop:
            break
    trace.best_epoch = stopper.best_epoch
    trace.epochs_run = stopper.epoch
    best.config.update({
        "learning_rate": config.learning_rate, "patience": config.patience,
        "batch_size": config.batch_size, "max_epochs": config.max_epochs,
        "validation_fraction": config.validation_fraction, "train_seed": config.seed,
        "decay": config.decay, "epsilon": config.epsilon,
        "best_epoch": trace.best_epoch, "epochs_run": trace.epochs_run,
        "speakers": sorted({u.speaker_id for u in corpus if hasattr(u, "speaker_id")}),
    })
    return best, trace


def _recon_loss(model: DaeModel, data_n: np.ndarray) -> float:
    out = nncore.forward_layers(model.unrolled().layers, data_n)[-1]
    return nncore.mse(out, data_n)
