"""Shared random-object factories for the format and pipeline tests."""

import numpy as np

from clvc.corpus import FeatureUtterance
from clvc.dae import NormStats, dae_build
from clvc.gmm import GmmModel
from clvc.mapper import MapperModel, mapper_build

_ALPHABET = "abcdefghijklmnopqrstuvwxyz0123456789_-éü中"


def random_id(rng, max_len=12):
    n = int(rng.integers(0, max_len + 1))
    return "".join(_ALPHABET[int(i)] for i in rng.integers(len(_ALPHABET), size=n))


def random_utterance(rng):
    n = int(rng.integers(0, 40))
    m = int(rng.integers(0, 12))
    a = int(rng.integers(0, 6))
    f0 = np.where(rng.random(n) < 0.3, 0.0, rng.uniform(50, 400, size=n))
    return FeatureUtterance(random_id(rng), random_id(rng),
                            rng.normal(scale=10 ** rng.uniform(-3, 3), size=(n, m)), f0,
                            rng.normal(size=(n, a)), float(rng.uniform(0.001, 0.02)),
                            float(rng.uniform(0.01, 0.05)))


def random_model(rng):
    """A DAE, mapper or GMM with random sizes and parameters."""
    kind = int(rng.integers(3))
    if kind == 0:
        m = 2 * int(rng.integers(1, 5))
        hidden = tuple(int(w) for w in rng.integers(1, 7, size=int(rng.integers(0, 3))))
        model = dae_build(m, seed=int(rng.integers(1 << 30)), hidden_widths=hidden,
                          tied=bool(rng.integers(2)))
        model.norm = NormStats(rng.normal(size=m), rng.uniform(0.1, 3, size=m))
        for b in model.decoder_biases:
            b[:] = rng.normal(size=b.shape)
        model.config["note"] = random_id(rng)
        return model
    if kind == 1:
        din, dout = int(rng.integers(1, 6)), int(rng.integers(1, 8))
        hidden = tuple(int(w) for w in rng.integers(1, 7, size=int(rng.integers(0, 3))))
        net = mapper_build(din, dout, int(rng.integers(1 << 30)), hidden)
        for layer in net.layers:
            layer.bias[:] = rng.normal(size=layer.bias.shape)
        return MapperModel(net, NormStats(rng.normal(size=din), rng.uniform(0.1, 2, size=din)),
                           NormStats(rng.normal(size=dout), rng.uniform(0.1, 2, size=dout)),
                           random_id(rng), random_id(rng), {"epochs": int(rng.integers(1, 30))})
    k, d = int(rng.integers(1, 6)), int(rng.integers(1, 6))
    w = rng.uniform(0.1, 1, size=k)
    return GmmModel(w / w.sum(), rng.normal(size=(k, d)), rng.uniform(1e-6, 5, size=(k, d)),
                    random_id(rng), {"components": k})


def _arrays(model):
    if isinstance(model, GmmModel):
        return [model.weights, model.means, model.variances]
    if isinstance(model, MapperModel):
        return model.net.parameters() + [model.input_norm.mean, model.input_norm.std,
                                         model.output_norm.mean, model.output_norm.std]
    return model.parameters() + [model.norm.mean, model.norm.std]


def _meta(model):
    if isinstance(model, GmmModel):
        return (model.target_speaker_id, model.config)
    if isinstance(model, MapperModel):
        return (model.target_speaker_id, model.dae_hash, model.config, model.net.activations)
    return (model.feature_dim, model.tied, model.config,
            [layer.activation for layer in model.encoder_layers])


def models_equal(a, b):
    """Field-by-field bit equality, independent of the serializer."""
    if type(a) is not type(b) or _meta(a) != _meta(b):
        return False
    xs, ys = _arrays(a), _arrays(b)
    return len(xs) == len(ys) and all(
        x.shape == y.shape and x.tobytes() == y.tobytes() for x, y in zip(xs, ys))
