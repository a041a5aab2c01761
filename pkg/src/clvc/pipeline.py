"""Training and conversion for both conversion systems.

Proposed: frames -> autoencoder bottleneck -> target mapping network.
Baseline: frames -> target-speaker GMM tokenizer.
Both scale F0 to the target's average and pass aperiodicity through.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .container import model_hash
from .corpus import FeatureUtterance
from .dae import DaeModel, dae_encode
from .errors import ConfigError, DataError, ModelMismatchError, ShapeError
from .gmm import GmmModel, gmm_fit, gmm_tokenize
from .mapper import MapperModel, MapperTrainConfig, mapper_convert, mapper_train
from .prosody import SpeakerProfile, mean_voiced_f0, pass_aperiodicity, transform_f0

log = logging.getLogger(__name__)

PROPOSED = "proposed"
BASELINE = "gmm"
OUT_OF_RANGE_Z = 4.0


@dataclass
class VcSystem:
    kind: str
    target_profile: SpeakerProfile
    dae: Optional[DaeModel] = None
    mapper: Optional[MapperModel] = None
    gmm: Optional[GmmModel] = None
    train_trace: List[float] = field(default_factory=list)

    def __post_init__(self):
        if self.kind == PROPOSED:
            if self.dae is None or self.mapper is None:
                raise ConfigError("the proposed system needs an autoencoder and a mapper")
            if self.mapper.dae_hash and self.mapper.dae_hash != model_hash(self.dae):
                raise ModelMismatchError(
                    "mapper was trained on bottlenecks from a different autoencoder"
                )
            if self.mapper.input_dim != self.dae.bottleneck_dim:
                raise ShapeError("mapper input does not match the autoencoder bottleneck")
        elif self.kind == BASELINE:
            if self.gmm is None:
                raise ConfigError("the baseline system needs a GMM")
        else:
            raise ConfigError(f"unknown system kind {self.kind!r}")

    @property
    def feature_dim(self) -> int:
        return self.dae.feature_dim if self.kind == PROPOSED else self.gmm.feature_dim

    @property
    def training_speakers(self) -> set:
        speakers = {self.target_profile.speaker_id}
        if self.dae is not None:
            speakers.update(self.dae.config.get("speakers", []))
        return speakers

    def model_hashes(self) -> dict:
        if self.kind == PROPOSED:
            return {"dae": model_hash(self.dae), "mapper": model_hash(self.mapper)}
        return {"gmm": model_hash(self.gmm)}

    @classmethod
    def from_models(cls, dae: Optional[DaeModel] = None, mapper: Optional[MapperModel] = None,
                    gmm: Optional[GmmModel] = None) -> "VcSystem":
        """Rebuild a system from loaded model files."""
        model = mapper if mapper is not None else gmm
        if model is None:
            raise ConfigError("a mapper or a GMM model is required")
        f0 = model.config.get("target_mean_f0")
        if f0 is None:
            raise DataError("model file carries no target speaker F0 profile")
        profile = SpeakerProfile(model.target_speaker_id, float(f0))
        kind = PROPOSED if mapper is not None else BASELINE
        return cls(kind, profile, dae=dae, mapper=mapper, gmm=gmm)


def _single_speaker(corpus: Sequence[FeatureUtterance]) -> str:
    if not corpus:
        raise DataError("target corpus is empty")
    speakers = {u.speaker_id for u in corpus}
    if len(speakers) != 1:
        raise DataError(f"target corpus must hold one speaker, found {sorted(speakers)}")
    return speakers.pop()


def target_profile(corpus: Sequence[FeatureUtterance]) -> SpeakerProfile:
    speaker = _single_speaker(corpus)
    return SpeakerProfile(speaker, mean_voiced_f0([u.f0 for u in corpus]))


def train_proposed(dae: DaeModel, target_corpus: Sequence[FeatureUtterance],
                   config: MapperTrainConfig = None) -> VcSystem:
    """Train the mapping network from the target's bottlenecks to its frames."""
    profile = target_profile(target_corpus)
    frames = np.concatenate([u.frames for u in target_corpus])
    if frames.shape[1] != dae.feature_dim:
        raise ShapeError(f"target frames have dimension {frames.shape[1]}, autoencoder expects {dae.feature_dim}")
    bottleneck = dae_encode(dae, frames)
    mapper, trace = mapper_train(bottleneck, frames, config, profile.speaker_id, model_hash(dae))
    mapper.config.update({"target_mean_f0": profile.mean_voiced_f0, "train_frames": int(frames.shape[0])})
    return VcSystem(PROPOSED, profile, dae=dae, mapper=mapper, train_trace=trace)


def train_baseline(target_corpus: Sequence[FeatureUtterance], components: int = 128,
                   seed: int = 0, max_iters: int = 100, tol: float = 1e-6) -> VcSystem:
    """Fit the target-speaker GMM used as a tokenizer."""
    profile = target_profile(target_corpus)
    frames = np.concatenate([u.frames for u in target_corpus])
    gmm, trace = gmm_fit(frames, components, max_iters=max_iters, tol=tol, seed=seed,
                         target_speaker_id=profile.speaker_id)
    gmm.config.update({"target_mean_f0": profile.mean_voiced_f0, "train_frames": int(frames.shape[0])})
    return VcSystem(BASELINE, profile, gmm=gmm, train_trace=trace)


def convert_frames(system: VcSystem, frames) -> np.ndarray:
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[1] != system.feature_dim:
        raise ShapeError(f"source frames have shape {frames.shape}, system expects dimension {system.feature_dim}")
    if system.kind == PROPOSED:
        z = system.dae.norm.normalize(frames)
        if z.size:
            outside = float(np.mean(np.abs(z) > OUT_OF_RANGE_Z))
            if outside > 0:
                log.info("%.2f%% of source coefficients lie beyond %g std of the autoencoder training data",
                         100 * outside, OUT_OF_RANGE_Z)
        return mapper_convert(system.mapper, dae_encode(system.dae, frames))
    return gmm_tokenize(system.gmm, frames)[0]


def convert(system: VcSystem, source: FeatureUtterance) -> FeatureUtterance:
    """Convert one utterance toward the system's target speaker."""
    frames = convert_frames(system, source.frames)
    f0 = transform_f0(source.f0, system.target_profile.mean_voiced_f0)
    return FeatureUtterance(system.target_profile.speaker_id, source.utterance_id, frames, f0,
                            pass_aperiodicity(source.ap), source.frame_shift, source.frame_length)


def provenance(system: VcSystem, source: FeatureUtterance) -> dict:
    seeds = {}
    if system.dae is not None:
        seeds["dae"] = system.dae.config.get("seed")
    if system.mapper is not None:
        seeds["mapper"] = system.mapper.config.get("seed")
    if system.gmm is not None:
        seeds["gmm"] = system.gmm.config.get("seed")
    return {"system": system.kind, "source_speaker": source.speaker_id,
            "target_speaker": system.target_profile.speaker_id,
            "model_hashes": system.model_hashes(), "seeds": seeds}


def check_unseen_sources(system: VcSystem, sources: Sequence[FeatureUtterance]) -> None:
    """Conversion is many-to-one: source speakers must not appear in any training data."""
    seen = system.training_speakers
    leaked = sorted({u.speaker_id for u in sources} & seen)
    leaked = [s for s in leaked if s != system.target_profile.speaker_id]
    if leaked:
        raise DataError(f"source speakers {leaked} were used to train the system")
