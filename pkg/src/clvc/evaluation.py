"""Objective evaluation: mel-cepstral distortion and speaker classification."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np

from .corpus import FeatureUtterance
from .errors import ConfigError, DataError, ShapeError
from .gmm import GmmModel, gmm_fit, log_likelihood
from .pipeline import VcSystem, check_unseen_sources, convert

MCD_CONST = 10.0 * math.sqrt(2.0) / math.log(10.0)


def mcd_frames(a, b, skip_c0: bool = True) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise ShapeError(f"cannot compare shapes {a.shape} and {b.shape}")
    start = 1 if skip_c0 else 0
    diff = a[:, start:] - b[:, start:]
    return MCD_CONST * np.sqrt(np.sum(diff * diff, axis=1))


def mcd(a, b, skip_c0: bool = True) -> float:
    """Mean mel-cepstral distortion in dB over frame-aligned matrices."""
    per_frame = mcd_frames(a, b, skip_c0)
    if per_frame.size == 0:
        return 0.0
    return float(per_frame.mean())


@dataclass
class SpeakerClassifier:
    speaker_ids: List[str]
    models: List[GmmModel]

    @classmethod
    def fit(cls, corpora: Mapping[str, object], components: int = 8, seed: int = 0,
            max_iters: int = 100, tol: float = 1e-6) -> "SpeakerClassifier":
        """One GMM per speaker; ``corpora`` maps speaker id to frames or utterances.

        Speaker order (which decides ties) follows the mapping's order.
        """
        if not corpora:
            raise DataError("no speakers to classify")
        ids, models = [], []
        for i, (speaker, data) in enumerate(corpora.items()):
            frames = _pool(data)
            model, _ = gmm_fit(frames, components, max_iters=max_iters, tol=tol,
                               seed=seed + i, target_speaker_id=speaker)
            ids.append(speaker)
            models.append(model)
        return cls(ids, models)

    def scores(self, frames) -> np.ndarray:
        return np.array([log_likelihood(m, frames) for m in self.models])

    def classify(self, frames) -> str:
        return self.speaker_ids[int(np.argmax(self.scores(frames)))]


def _pool(data) -> np.ndarray:
    if isinstance(data, np.ndarray):
        return data
    return np.concatenate([np.asarray(getattr(u, "frames", u), dtype=np.float64) for u in data])


@dataclass
class EvalReport:
    system_kind: str
    target_speaker_id: str
    utterance_ids: List[str]
    source_speakers: List[str]
    per_utterance_mcd: List[float]
    mean_mcd: float
    predicted_speakers: List[str]
    accuracy: float
    skip_c0: bool = True
    config: dict = field(default_factory=dict)
    model_hashes: dict = field(default_factory=dict)
    reference: Optional["EvalReport"] = None

    def to_dict(self) -> dict:
        out = asdict(self)
        out["reference"] = self.reference.to_dict() if self.reference else None
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        d = dict(d)
        ref = d.pop("reference", None)
        return cls(**d, reference=cls.from_dict(ref) if ref else None)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls.from_dict(json.loads(text))

    def to_table(self) -> str:
        """Whitespace-separated table for gnuplot; the reference column is optional."""
        cols = ["utterance", "source_speaker", f"mcd_{self.system_kind}"]
        if self.reference:
            cols.append(f"mcd_{self.reference.system_kind}")
        lines = ["# " + " ".join(cols)]
        for i, uid in enumerate(self.utterance_ids):
            row = [uid, self.source_speakers[i], repr(self.per_utterance_mcd[i])]
            if self.reference:
                row.append(repr(self.reference.per_utterance_mcd[i]))
            lines.append(" ".join(row))
        return "\n".join(lines) + "\n"


def evaluate(system: Optional[VcSystem], test_sources: Sequence[FeatureUtterance],
             target_truth: Sequence[FeatureUtterance], classifier: SpeakerClassifier,
             skip_c0: bool = True, target_speaker_id: Optional[str] = None,
             config: Optional[dict] = None) -> EvalReport:
    """Convert each source and score it against its parallel target rendering.

    With ``system=None`` the sources are scored unconverted, which gives the
    reference point for the improvement checks.
    """
    if len(test_sources) != len(target_truth):
        raise DataError(f"{len(test_sources)} sources but {len(target_truth)} truth renderings")
    if system is not None:
        target_speaker_id = system.target_profile.speaker_id
        check_unseen_sources(system, test_sources)
    elif target_speaker_id is None:
        raise ConfigError("unconverted evaluation needs the target speaker id")
    per_utt, predicted = [], []
    for src, truth in zip(test_sources, target_truth):
        if src.n_frames != truth.n_frames:
            raise DataError(f"{src.utterance_id}: source and truth are not frame-aligned")
        frames = convert(system, src).frames if system is not None else src.frames
        per_utt.append(mcd(frames, truth.frames, skip_c0))
        predicted.append(classifier.classify(frames))
    n = len(per_utt)
    return EvalReport(
        system_kind=system.kind if system is not None else "unconverted",
        target_speaker_id=target_speaker_id,
        utterance_ids=[u.utterance_id for u in test_sources],
        source_speakers=[u.speaker_id for u in test_sources],
        per_utterance_mcd=per_utt,
        mean_mcd=float(np.mean(per_utt)) if n else 0.0,
        predicted_speakers=predicted,
        accuracy=float(sum(p == target_speaker_id for p in predicted) / n) if n else 0.0,
        skip_c0=skip_c0,
        config=dict(config or {}),
        model_hashes=system.model_hashes() if system is not None else {},
    )


def truth_index(truth: Sequence[FeatureUtterance]) -> Dict[str, FeatureUtterance]:
    return {u.utterance_id: u for u in truth}
