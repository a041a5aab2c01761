"""F0 scaling toward a target speaker and aperiodicity passthrough."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .dae import NormStats
from .errors import ProsodyError


@dataclass
class SpeakerProfile:
    speaker_id: str
    mean_voiced_f0: float
    norm_stats: Optional[NormStats] = None

    def to_dict(self) -> dict:
        return {"speaker_id": self.speaker_id, "mean_voiced_f0": self.mean_voiced_f0}


def _track(values):
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    if np.any(~np.isfinite(values)) or np.any(values < 0):
        raise ProsodyError("F0 values must be finite and non-negative")
    return values


def mean_voiced_f0(tracks: Iterable) -> float:
    """Average F0 over strictly positive frames of all ``tracks``."""
    voiced = [t[t > 0] for t in (_track(tr) for tr in tracks)]
    pooled = np.concatenate(voiced) if voiced else np.empty(0)
    if pooled.size == 0:
        raise ProsodyError("no voiced frames to average")
    return float(pooled.mean())


def transform_f0(source, target_mean_f0: float) -> np.ndarray:
    """Scale voiced frames by target_mean / source_utterance_mean; unvoiced stay 0."""
    source = _track(source)
    if not target_mean_f0 > 0:
        raise ProsodyError(f"target mean F0 must be positive, got {target_mean_f0}")
    voiced = source > 0
    if not voiced.any():
        raise ProsodyError("source utterance has no voiced frames")
    factor = target_mean_f0 / source[voiced].mean()
    out = source.copy()
    out[voiced] *= factor
    return out


def pass_aperiodicity(source_ap) -> np.ndarray:
    return np.array(source_ap, dtype=np.float64, copy=True)
