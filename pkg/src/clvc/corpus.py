"""Feature utterances, the CVCF file format, manifests and synthetic corpora.

CVCF layout (all little-endian)::

    b"CVCF"                  magic
    u16                      format version (1)
    u32 u32 u32              frame count n, spectral dim M, aperiodicity dim A
    f64 f64                  frame shift, frame length (seconds)
    u32 + utf-8              speaker id
    u32 + utf-8              utterance id
    f64[n*M]                 spectral frames, row-major
    f64[n]                   F0 in Hz, 0.0 = unvoiced
    f64[n*A]                 aperiodicity, row-major

Real features (e.g. WORLD analysis at 25 ms / 5 ms reduced to 40 cepstra)
are imported by writing them in this layout.
"""

from __future__ import annotations

import csv
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .errors import DataError, FormatError, GenerationError, ShapeError

MAGIC = b"CVCF"
VERSION = 1
_HEAD = struct.Struct("<4sHIIIdd")

DEFAULT_FRAME_SHIFT = 0.005
DEFAULT_FRAME_LENGTH = 0.025
DEFAULT_AP_DIM = 5


@dataclass
class FeatureUtterance:
    speaker_id: str
    utterance_id: str
    frames: np.ndarray
    f0: np.ndarray
    ap: np.ndarray
    frame_shift: float = DEFAULT_FRAME_SHIFT
    frame_length: float = DEFAULT_FRAME_LENGTH

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        self.f0 = np.asarray(self.f0, dtype=np.float64).reshape(-1)
        self.ap = np.asarray(self.ap, dtype=np.float64)
        n = self.f0.shape[0]
        if self.frames.ndim == 1 and self.frames.size == 0:
            self.frames = self.frames.reshape(0, 0)
        if self.ap.ndim == 1 and self.ap.size == 0:
            self.ap = self.ap.reshape(n, 0)
        if self.frames.ndim != 2 or self.ap.ndim != 2:
            raise ShapeError("frames and aperiodicity must be 2-D")
        if self.frames.shape[0] != n or self.ap.shape[0] != n:
            raise ShapeError(
                f"frame counts disagree: frames {self.frames.shape[0]}, f0 {n}, ap {self.ap.shape[0]}"
            )
        for name in ("frames", "f0", "ap"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise DataError(f"{name} of {self.utterance_id!r} contain non-finite values")
        if np.any(self.f0 < 0):
            raise DataError(f"negative F0 in {self.utterance_id!r}")

    @property
    def n_frames(self) -> int:
        return self.f0.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.frames.shape[1]

    @property
    def ap_dim(self) -> int:
        return self.ap.shape[1]

    def equals(self, other: "FeatureUtterance") -> bool:
        return (
            self.speaker_id == other.speaker_id
            and self.utterance_id == other.utterance_id
            and self.frame_shift == other.frame_shift
            and self.frame_length == other.frame_length
            and _same(self.frames, other.frames)
            and _same(self.f0, other.f0)
            and _same(self.ap, other.ap)
        )


def _same(a, b):
    return a.shape == b.shape and a.tobytes() == b.tobytes()


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def encode_features(utt: FeatureUtterance) -> bytes:
    parts = [
        _HEAD.pack(MAGIC, VERSION, utt.n_frames, utt.feature_dim, utt.ap_dim,
                   float(utt.frame_shift), float(utt.frame_length)),
        _pack_str(utt.speaker_id),
        _pack_str(utt.utterance_id),
        utt.frames.astype("<f8").tobytes(),
        utt.f0.astype("<f8").tobytes(),
        utt.ap.astype("<f8").tobytes(),
    ]
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise FormatError(f"truncated file while reading {what}", self.pos)
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def string(self, what: str) -> str:
        (length,) = struct.unpack("<I", self.take(4, f"{what} length"))
        start = self.pos
        try:
            return self.take(length, what).decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError(f"{what} is not valid UTF-8", start) from None

    def reals(self, count: int, what: str) -> np.ndarray:
        return np.frombuffer(self.take(8 * count, what), dtype="<f8").astype(np.float64)


def decode_features(data: bytes) -> FeatureUtterance:
    r = _Reader(data)
    magic, version, n, m, a, shift, length = _HEAD.unpack(r.take(_HEAD.size, "header"))
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
    if version != VERSION:
        raise FormatError(f"unsupported feature format version {version}", 4)
    if not (np.isfinite(shift) and np.isfinite(length)) or shift <= 0 or length <= 0:
        raise FormatError("frame shift and length must be positive", 18)
    speaker = r.string("speaker id")
    utt_id = r.string("utterance id")
    expected = 8 * (n * m + n + n * a)
    if len(data) - r.pos != expected:
        raise FormatError(
            f"payload is {len(data) - r.pos} bytes but header dimensions ({n}x{m}, ap {a}) "
            f"require {expected}", r.pos,
        )
    frames = r.reals(n * m, "frames").reshape(n, m)
    f0 = r.reals(n, "f0")
    ap = r.reals(n * a, "aperiodicity").reshape(n, a)
    try:
        return FeatureUtterance(speaker, utt_id, frames, f0, ap, shift, length)
    except (DataError, ShapeError) as exc:
        raise FormatError(f"invalid feature values: {exc}", r.pos) from None


def write_features(utt: FeatureUtterance, path) -> None:
    Path(path).write_bytes(encode_features(utt))


def read_features(path) -> FeatureUtterance:
    try:
        data = Path(path).read_bytes()
    except FileNotFoundError:
        raise DataError(f"feature file not found: {path}") from None
    return decode_features(data)


# ---------------------------------------------------------------------------
# manifest

MANIFEST_HEADER = "# speaker_id\tutterance_id\tpath\tsplit\tprovenance"


@dataclass
class ManifestEntry:
    speaker_id: str
    utterance_id: str
    path: str
    split: str
    provenance: Optional[dict] = None


def write_manifest(entries: Sequence[ManifestEntry], path) -> None:
    lines = [MANIFEST_HEADER]
    for e in entries:
        fields = [e.speaker_id, e.utterance_id, e.path, e.split]
        if any("\t" in f or "\n" in f for f in fields):
            raise DataError(f"manifest field contains a tab or newline: {fields}")
        if e.provenance is not None:
            fields.append(json.dumps(e.provenance, sort_keys=True, separators=(",", ":")))
        lines.append("\t".join(fields))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path) -> List[ManifestEntry]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise DataError(f"manifest not found: {path}") from None
    entries = []
    for lineno, row in enumerate(csv.reader(text.splitlines(), delimiter="\t",
                                            quoting=csv.QUOTE_NONE), start=1):
        if not row or row[0].startswith("#"):
            continue
        if len(row) not in (4, 5):
            raise FormatError(f"manifest line {lineno} has {len(row)} fields, expected 4 or 5")
        prov = None
        if len(row) == 5:
            try:
                prov = json.loads(row[4])
            except json.JSONDecodeError:
                raise FormatError(f"manifest line {lineno}: bad provenance JSON") from None
        entries.append(ManifestEntry(row[0], row[1], row[2], row[3], prov))
    return entries


def load_entries(entries: Sequence[ManifestEntry], root) -> List[FeatureUtterance]:
    root = Path(root)
    return [read_features(root / e.path) for e in entries]


# ---------------------------------------------------------------------------
# synthetic corpora

MAX_WARP_CONDITION = 100.0


@dataclass
class SyntheticSpeakerSpec:
    speaker_id: str
    warp: np.ndarray
    offset: np.ndarray
    base_f0: float
    f0_range: float
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        self.warp = np.asarray(self.warp, dtype=np.float64)
        self.offset = np.asarray(self.offset, dtype=np.float64)
        m = self.offset.shape[0]
        if self.warp.shape != (m, m):
            raise GenerationError(f"warp of shape {self.warp.shape} does not match offset dim {m}")
        if not np.all(np.isfinite(self.warp)):
            raise GenerationError(f"warp of {self.speaker_id!r} is not finite")
        cond = np.linalg.cond(self.warp)
        if not cond < MAX_WARP_CONDITION:
            raise GenerationError(
                f"warp of {self.speaker_id!r} is degenerate (condition number {cond:.3g})"
            )
        if self.noise_sigma < 0:
            raise GenerationError("noise_sigma must be non-negative")
        if self.base_f0 <= 0 or self.f0_range < 0 or self.f0_range >= self.base_f0:
            raise GenerationError("need base_f0 > f0_range >= 0")

    @property
    def feature_dim(self) -> int:
        return self.offset.shape[0]


@dataclass
class UtteranceContent:
    """Speaker-independent content of one utterance."""

    phones: np.ndarray        # per-frame phone index
    latent: np.ndarray        # per-frame prototype + jitter, n x M
    voiced: np.ndarray        # per-frame voicing flag
    contour: np.ndarray       # per-frame pitch movement in [-1, 1]


@dataclass
class SyntheticCorpus:
    utterances: List[FeatureUtterance]
    labels: List[np.ndarray]
    contents: List[UtteranceContent]
    splits: List[str]
    prototypes: np.ndarray
    specs: Dict[str, SyntheticSpeakerSpec] = field(default_factory=dict)


def coefficient_scales(feature_dim: int, decay: float = 0.8) -> np.ndarray:
    """Per-coefficient spread decaying with index, like real cepstra."""
    return decay ** np.arange(feature_dim)


def make_speaker_specs(speaker_ids: Sequence[str], feature_dim: int, seed: int = 0,
                       warp_scale: float = 0.5, offset_scale: float = 0.5,
                       noise_sigma: float = 0.0, speaker_band: float = 0.4) -> List[SyntheticSpeakerSpec]:
    """Deterministic speaker variety: near-identity warps plus offsets.

    Speaker differences live in the highest ``speaker_band`` fraction of
    coefficients (fine spectral detail); lower coefficients carry the shared
    phonetic content.  Alternating speakers get low (male-like) and high
    (female-like) base F0.
    """
    first = feature_dim - max(1, int(round(speaker_band * feature_dim)))
    mask = np.zeros(feature_dim)
    mask[first:] = 1.0
    specs = []
    for i, sid in enumerate(speaker_ids):
        rng = np.random.default_rng([seed, 7919, i])
        g = rng.standard_normal((feature_dim, feature_dim)) / np.sqrt(feature_dim)
        warp = np.eye(feature_dim) + warp_scale * mask[:, None] * g
        offset = offset_scale * mask * rng.standard_normal(feature_dim)
        base = (110.0 if i % 2 == 0 else 210.0) * (1.0 + 0.1 * rng.uniform(-1, 1))
        specs.append(SyntheticSpeakerSpec(sid, warp, offset, float(base), 0.2 * float(base),
                                          noise_sigma, seed=int(seed) * 1000 + i))
    return specs


def draw_prototypes(phones: int, feature_dim: int, seed: int, scale: float = 1.5) -> np.ndarray:
    rng = np.random.default_rng([seed, 104729])
    return scale * coefficient_scales(feature_dim) * rng.standard_normal((phones, feature_dim))


def generate_content(prototypes: np.ndarray, n_frames: int, rng: np.random.Generator,
                     jitter: float = 0.5, min_dur: int = 4, max_dur: int = 12,
                     unvoiced_prob: float = 0.2) -> UtteranceContent:
    """A random phone sequence with per-frame jitter around the prototypes."""
    n_phones, m = prototypes.shape
    phones = np.empty(n_frames, dtype=np.int64)
    voiced = np.empty(n_frames, dtype=bool)
    t = 0
    while t < n_frames:
        dur = int(rng.integers(min_dur, max_dur + 1))
        phones[t:t + dur] = rng.integers(n_phones)
        voiced[t:t + dur] = rng.random() >= unvoiced_prob
        t += dur
    scales = coefficient_scales(m)
    latent = prototypes[phones] + jitter * scales * rng.standard_normal((n_frames, m))
    k = np.arange(n_frames)
    phase = rng.uniform(0, 2 * np.pi, size=2)
    period = rng.uniform(60, 200, size=2)
    contour = 0.6 * np.sin(2 * np.pi * k / period[0] + phase[0]) + 0.4 * np.sin(2 * np.pi * k / period[1] + phase[1])
    return UtteranceContent(phones, latent, voiced, contour)


def aperiodicity_pattern(n_frames: int, ap_dim: int = DEFAULT_AP_DIM) -> np.ndarray:
    t = np.arange(n_frames)[:, None]
    band = np.arange(ap_dim)[None, :]
    return -5.0 * (band + 1) + 2.0 * np.sin(2 * np.pi * t / 40.0 + band)


def render(spec: SyntheticSpeakerSpec, content: UtteranceContent, utterance_id: str,
           noise_rng: Optional[np.random.Generator] = None,
           ap_dim: int = DEFAULT_AP_DIM) -> FeatureUtterance:
    """Render ``content`` in the voice of ``spec``."""
    if content.latent.shape[1] != spec.feature_dim:
        raise GenerationError("content and speaker feature dimensions differ")
    frames = content.latent @ spec.warp.T + spec.offset
    if spec.noise_sigma > 0:
        if noise_rng is None:
            noise_rng = np.random.default_rng([spec.seed, 3])
        frames = frames + spec.noise_sigma * noise_rng.standard_normal(frames.shape)
    f0 = np.where(content.voiced, spec.base_f0 + spec.f0_range * content.contour, 0.0)
    n = content.latent.shape[0]
    return FeatureUtterance(spec.speaker_id, utterance_id, frames, f0,
                            aperiodicity_pattern(n, ap_dim))


def generate_corpus(specs: Sequence[SyntheticSpeakerSpec], phones: int,
                    utterances_per_speaker: int, frames_per_utterance: int,
                    feature_dim: int, seed: int = 0, n_test: int = 0,
                    jitter: float = 0.5, ap_dim: int = DEFAULT_AP_DIM) -> SyntheticCorpus:
    """Render independent utterances for every speaker.

    Utterance ``i`` of a speaker is tagged ``test`` when it is among the last
    ``n_test`` of that speaker, ``train`` otherwise.  The result is a pure
    function of the arguments.
    """
    if phones < 2:
        raise GenerationError("at least two phones are required")
    if feature_dim < 2:
        raise GenerationError("feature dimension must be at least 2")
    if utterances_per_speaker < 1 or frames_per_utterance < 1:
        raise GenerationError("need at least one utterance of at least one frame")
    if not 0 <= n_test <= utterances_per_speaker:
        raise GenerationError("n_test must lie between 0 and utterances_per_speaker")
    if len({s.speaker_id for s in specs}) != len(specs):
        raise GenerationError("speaker ids must be unique")
    for spec in specs:
        if spec.feature_dim != feature_dim:
            raise GenerationError(f"speaker {spec.speaker_id!r} has dimension {spec.feature_dim}")
    prototypes = draw_prototypes(phones, feature_dim, seed)
    out = SyntheticCorpus([], [], [], [], prototypes, {s.speaker_id: s for s in specs})
    for si, spec in enumerate(specs):
        for ui in range(utterances_per_speaker):
            rng = np.random.default_rng([seed, si, ui])
            content = generate_content(prototypes, frames_per_utterance, rng, jitter)
            utt_id = f"{spec.speaker_id}_{ui:04d}"
            utt = render(spec, content, utt_id, np.random.default_rng([seed, si, ui, 1]), ap_dim)
            out.utterances.append(utt)
            out.labels.append(content.phones)
            out.contents.append(content)
            out.splits.append("test" if ui >= utterances_per_speaker - n_test else "train")
    return out


def parallel_rendering(corpus: SyntheticCorpus, index: int, spec: SyntheticSpeakerSpec,
                       ap_dim: int = DEFAULT_AP_DIM) -> FeatureUtterance:
    """Utterance ``index`` of ``corpus`` re-rendered by another speaker."""
    src = corpus.utterances[index]
    content = corpus.contents[index]
    noise = np.random.default_rng([spec.seed, 11, index])
    return render(spec, content, src.utterance_id, noise, ap_dim)


def safe_relpath(path, root) -> str:
    return os.path.relpath(path, root).replace(os.sep, "/")
