"""Diagonal-covariance Gaussian mixture models and the GMM tokenizer.

Every score is computed in the log domain; at 40 dimensions the linear
density underflows.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from .errors import ConfigError, DataError, ParameterError, ShapeError

log = logging.getLogger(__name__)

VAR_FLOOR = 1e-6
LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class GmmModel:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    target_speaker_id: str = ""
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        self.variances = np.atleast_2d(np.asarray(self.variances, dtype=np.float64))
        k = self.weights.shape[0]
        if k < 1 or self.weights.ndim != 1:
            raise ParameterError("a mixture needs at least one component")
        if self.means.shape[0] != k or self.variances.shape != self.means.shape:
            raise ShapeError(
                f"weights {self.weights.shape}, means {self.means.shape} and "
                f"variances {self.variances.shape} disagree"
            )
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-9:
            raise ParameterError("mixture weights must be a probability vector")
        if np.any(self.variances < VAR_FLOOR):
            raise ParameterError(f"variances must be at least {VAR_FLOOR}")

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.means.shape[1]


def gaussian_logpdf(x, mean, variance) -> float:
    """Log density of a diagonal-covariance Gaussian at ``x``."""
    x = np.asarray(x, dtype=np.float64)
    mean = np.asarray(mean, dtype=np.float64)
    variance = np.asarray(variance, dtype=np.float64)
    if not (x.shape == mean.shape == variance.shape) or x.ndim != 1:
        raise ShapeError(f"shapes {x.shape}, {mean.shape}, {variance.shape} must be equal vectors")
    if np.any(variance < VAR_FLOOR):
        raise ParameterError(f"variance below floor {VAR_FLOOR}")
    d = x.shape[0]
    diff = x - mean
    return float(-0.5 * (d * LOG_2PI + np.sum(np.log(variance)) + np.sum(diff * diff / variance)))


def component_logpdf(frames: np.ndarray, means: np.ndarray, variances: np.ndarray) -> np.ndarray:
    """``n x K`` matrix of per-component log densities."""
    n, d = frames.shape
    out = np.empty((n, means.shape[0]))
    for k in range(means.shape[0]):
        diff = frames - means[k]
        out[:, k] = -0.5 * (d * LOG_2PI + np.sum(np.log(variances[k]))
                            + np.sum(diff * diff / variances[k], axis=1))
    return out


def _logsumexp(a: np.ndarray) -> np.ndarray:
    top = a.max(axis=1, keepdims=True)
    return (top + np.log(np.exp(a - top).sum(axis=1, keepdims=True)))[:, 0]


def _check_frames(frames, dim=None):
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim == 1 and frames.size == 0 and dim is not None:
        frames = frames.reshape(0, dim)
    if frames.ndim != 2 or (dim is not None and frames.shape[1] != dim):
        want = f"(n, {dim})" if dim is not None else "2-D"
        raise ShapeError(f"frames have shape {frames.shape}, expected {want}")
    return frames


def log_likelihood(model: GmmModel, frames) -> float:
    """Total data log-likelihood of ``frames`` under the mixture."""
    frames = _check_frames(frames, model.feature_dim)
    if frames.shape[0] == 0:
        return 0.0
    scores = component_logpdf(frames, model.means, model.variances) + np.log(model.weights)
    return float(np.sum(_logsumexp(scores)))


def kmeans_pp(frames: np.ndarray, k: int, rng: np.random.Generator, iters: int = 10) -> np.ndarray:
    """k-means++ seeding followed by ``iters`` Lloyd refinements."""
    n = frames.shape[0]
    centers = np.empty((k, frames.shape[1]))
    centers[0] = frames[rng.integers(n)]
    d2 = np.sum((frames - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = rng.choice(n, p=d2 / total)
        else:
            idx = rng.integers(n)
        centers[j] = frames[idx]
        d2 = np.minimum(d2, np.sum((frames - centers[j]) ** 2, axis=1))
    for _ in range(iters):
        dist = _sq_dists(frames, centers)
        labels = np.argmin(dist, axis=1)
        nearest = dist[np.arange(n), labels]
        for j in range(k):
            members = labels == j
            if members.any():
                centers[j] = frames[members].mean(axis=0)
            else:
                far = int(np.argmax(nearest))
                centers[j] = frames[far]
                nearest[far] = 0.0
    return centers


def _sq_dists(frames, centers):
    out = np.empty((frames.shape[0], centers.shape[0]))
    for j in range(centers.shape[0]):
        diff = frames - centers[j]
        out[:, j] = np.sum(diff * diff, axis=1)
    return out


def _initial_model(frames, centers):
    n, d = frames.shape
    k = centers.shape[0]
    labels = np.argmin(_sq_dists(frames, centers), axis=1)
    global_var = np.maximum(frames.var(axis=0), VAR_FLOOR)
    weights = np.empty(k)
    variances = np.empty((k, d))
    for j in range(k):
        members = frames[labels == j]
        weights[j] = max(members.shape[0], 1)
        if members.shape[0] > 1:
            variances[j] = np.maximum(members.var(axis=0), VAR_FLOOR)
        else:
            variances[j] = global_var
    return weights / weights.sum(), centers.copy(), variances


def gmm_fit(frames, components: int = 128, max_iters: int = 100, tol: float = 1e-6,
            seed: int = 0, covariance: str = "diag", target_speaker_id: str = "",
            kmeans_iters: int = 10) -> Tuple[GmmModel, List[float]]:
    """Fit a diagonal GMM by EM.

    Returns ``(model, trace)`` where ``trace[t]`` is the total data
    log-likelihood after ``t`` EM updates (``trace[0]`` is the k-means
    initialization).  Iteration stops when the relative improvement drops
    below ``tol`` or after ``max_iters`` updates.
    """
    if covariance != "diag":
        raise ConfigError(f"only diagonal covariance is supported, got {covariance!r}")
    frames = _check_frames(frames)
    n, d = frames.shape
    components = int(components)
    if components < 1:
        raise ConfigError("at least one mixture component is required")
    if n < components:
        raise DataError(f"{n} frames cannot support {components} components")
    rng = np.random.default_rng(seed)
    weights, means, variances = _initial_model(frames, kmeans_pp(frames, components, rng, kmeans_iters))

    # Fallback location for components that lose all responsibility mass.
    global_mean = frames.mean(axis=0)
    global_var = np.maximum(frames.var(axis=0), VAR_FLOOR)
    spread = np.sum((frames - global_mean) ** 2 / global_var, axis=1)

    def e_step(w, mu, var):
        scores = component_logpdf(frames, mu, var) + np.log(w)
        lse = _logsumexp(scores)
        return float(np.sum(lse)), np.exp(scores - lse[:, None])

    ll, resp = e_step(weights, means, variances)
    trace = [ll]
    reinits = 0
    for it in range(max_iters):
        nk = resp.sum(axis=0)
        for j in range(components):
            if nk[j] < 1e-12:
                far = int(np.argmax(spread))
                log.warning("EM iteration %d: component %d empty, reinitialized at frame %d",
                            it + 1, j, far)
                reinits += 1
                means[j] = frames[far]
                variances[j] = global_var
                nk[j] = 1.0
                resp[:, j] = 0.0
                resp[far, j] = 1.0
                continue
            r = resp[:, j]
            means[j] = r @ frames / nk[j]
            diff = frames - means[j]
            variances[j] = np.maximum(r @ (diff * diff) / nk[j], VAR_FLOOR)
        weights = nk / nk.sum()
        ll, resp = e_step(weights, means, variances)
        prev = trace[-1]
        trace.append(ll)
        if abs(ll - prev) <= tol * abs(prev):
            break
    config = {"components": components, "max_iters": int(max_iters), "tol": float(tol),
              "seed": int(seed), "covariance": covariance, "kmeans_iters": int(kmeans_iters),
              "iterations": len(trace) - 1, "reinitializations": reinits}
    model = GmmModel(weights, means, variances, target_speaker_id, config)
    return model, trace


def gmm_scores(model: GmmModel, frames) -> np.ndarray:
    """``ln w_i + ln g(x | mu_i, var_i)`` for every frame and component."""
    frames = _check_frames(frames, model.feature_dim)
    return component_logpdf(frames, model.means, model.variances) + np.log(model.weights)


def gmm_tokenize(model: GmmModel, frames):
    """Replace each frame with the mean of its best-scoring component.

    Returns ``(codewords, indices)``.  Ties go to the lowest index.
    """
    frames = _check_frames(frames, model.feature_dim)
    if frames.shape[0] == 0:
        return np.empty((0, model.feature_dim)), np.empty(0, dtype=np.int64)
    idx = np.argmax(gmm_scores(model, frames), axis=1)
    return model.means[idx].copy(), idx
