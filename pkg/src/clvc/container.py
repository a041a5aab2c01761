"""CVCM: the versioned binary container shared by all trained models.

Layout (little-endian)::

    b"CVCM"        magic
    u16            container version (1)
    4 bytes        model kind tag: b"DAE\\0", b"MAP\\0" or b"GMM\\0"
    u64            payload length
    payload        u32 JSON length, UTF-8 JSON (sorted keys), then every
                   array listed in the JSON as contiguous f64 values
    32 bytes       SHA-256 of everything above

The trailing digest doubles as the model's content hash.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np

from .dae import DaeModel, NormStats
from .errors import DataError, FormatError
from .gmm import GmmModel
from .mapper import MapperModel
from .nncore import Layer, MlpModel

MAGIC = b"CVCM"
VERSION = 1
KIND_DAE = b"DAE\0"
KIND_MAPPER = b"MAP\0"
KIND_GMM = b"GMM\0"
KINDS = {KIND_DAE: "dae", KIND_MAPPER: "mapper", KIND_GMM: "gmm"}
_HEAD = struct.Struct("<4sH4sQ")
_DIGEST = 32


def _pack(kind: bytes, meta: dict, arrays: List[Tuple[str, np.ndarray]]) -> bytes:
    meta = dict(meta)
    meta["arrays"] = [{"name": name, "shape": list(a.shape)} for name, a in arrays]
    text = json.dumps(meta, sort_keys=True, separators=(",", ":"), allow_nan=False).encode("utf-8")
    payload = b"".join(
        [struct.pack("<I", len(text)), text]
        + [np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in arrays]
    )
    body = _HEAD.pack(MAGIC, VERSION, kind, len(payload)) + payload
    return body + hashlib.sha256(body).digest()


def _unpack(data: bytes):
    if len(data) < _HEAD.size + _DIGEST:
        raise FormatError("model file too short", len(data))
    magic, version, kind, length = _HEAD.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
    if version != VERSION:
        raise FormatError(f"unsupported model container version {version}", 4)
    if kind not in KINDS:
        raise FormatError(f"unknown model kind tag {kind!r}", 6)
    if _HEAD.size + length + _DIGEST != len(data):
        raise FormatError(
            f"payload length {length} inconsistent with file size {len(data)}", 10
        )
    body = data[:-_DIGEST]
    if hashlib.sha256(body).digest() != data[-_DIGEST:]:
        raise FormatError("content hash mismatch", len(body))
    pos = _HEAD.size
    (jlen,) = struct.unpack_from("<I", data, pos)
    pos += 4
    if pos + jlen > len(body):
        raise FormatError("metadata runs past payload", pos)
    try:
        meta = json.loads(data[pos:pos + jlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise FormatError("metadata is not valid JSON", pos) from None
    pos += jlen
    arrays: Dict[str, np.ndarray] = {}
    try:
        specs = [(a["name"], tuple(int(s) for s in a["shape"])) for a in meta.pop("arrays")]
    except (KeyError, TypeError, ValueError):
        raise FormatError("metadata lacks a valid array table", _HEAD.size + 4) from None
    for name, shape in specs:
        count = int(np.prod(shape)) if shape else 1
        if count < 0 or pos + 8 * count > len(body):
            raise FormatError(f"array {name!r} runs past payload", pos)
        arrays[name] = np.frombuffer(body, dtype="<f8", count=count, offset=pos).astype(np.float64).reshape(shape)
        pos += 8 * count
    if pos != len(body):
        raise FormatError("unexpected bytes after the last array", pos)
    return KINDS[kind], meta, arrays


def _norm_arrays(prefix: str, norm: NormStats):
    return [(f"{prefix}_mean", norm.mean), (f"{prefix}_std", norm.std)]


def encode_dae(model: DaeModel) -> bytes:
    arrays = []
    for k, layer in enumerate(model.encoder_layers):
        arrays += [(f"enc{k}_w", layer.weights), (f"enc{k}_b", layer.bias)]
    arrays += [(f"dec{j}_b", b) for j, b in enumerate(model.decoder_biases)]
    if not model.tied:
        arrays += [(f"dec{j}_w", w) for j, w in enumerate(model.decoder_weights)]
    arrays += _norm_arrays("norm", model.norm)
    meta = {"feature_dim": model.feature_dim, "tied": model.tied,
            "activations": [layer.activation for layer in model.encoder_layers],
            "config": model.config}
    return _pack(KIND_DAE, meta, arrays)


def encode_mapper(model: MapperModel) -> bytes:
    arrays = []
    for k, layer in enumerate(model.net.layers):
        arrays += [(f"w{k}", layer.weights), (f"b{k}", layer.bias)]
    arrays += _norm_arrays("in", model.input_norm) + _norm_arrays("out", model.output_norm)
    meta = {"input_dim": model.net.input_dim, "activations": model.net.activations,
            "target_speaker_id": model.target_speaker_id, "dae_hash": model.dae_hash,
            "config": model.config}
    return _pack(KIND_MAPPER, meta, arrays)


def encode_gmm(model: GmmModel) -> bytes:
    arrays = [("weights", model.weights), ("means", model.means), ("variances", model.variances)]
    meta = {"target_speaker_id": model.target_speaker_id, "config": model.config}
    return _pack(KIND_GMM, meta, arrays)


def encode_model(model) -> bytes:
    if isinstance(model, DaeModel):
        return encode_dae(model)
    if isinstance(model, MapperModel):
        return encode_mapper(model)
    if isinstance(model, GmmModel):
        return encode_gmm(model)
    raise TypeError(f"cannot serialize {type(model).__name__}")


def model_hash(model) -> str:
    return encode_model(model)[-_DIGEST:].hex()


def _decode_dae(meta, arrays):
    n = len(meta["activations"])
    encoder = [Layer(arrays[f"enc{k}_w"], arrays[f"enc{k}_b"], meta["activations"][k]) for k in range(n)]
    dec_b = [arrays[f"dec{j}_b"] for j in range(n)]
    dec_w = None if meta["tied"] else [arrays[f"dec{j}_w"] for j in range(n)]
    norm = NormStats(arrays["norm_mean"], arrays["norm_std"])
    return DaeModel(encoder, dec_b, int(meta["feature_dim"]), norm, bool(meta["tied"]),
                    dec_w, meta["config"])


def _decode_mapper(meta, arrays):
    acts = meta["activations"]
    layers = [Layer(arrays[f"w{k}"], arrays[f"b{k}"], acts[k]) for k in range(len(acts))]
    net = MlpModel(layers, int(meta["input_dim"]))
    return MapperModel(net, NormStats(arrays["in_mean"], arrays["in_std"]),
                       NormStats(arrays["out_mean"], arrays["out_std"]),
                       meta["target_speaker_id"], meta["dae_hash"], meta["config"])


def _decode_gmm(meta, arrays):
    return GmmModel(arrays["weights"], arrays["means"], arrays["variances"],
                    meta["target_speaker_id"], meta["config"])


_DECODERS = {"dae": _decode_dae, "mapper": _decode_mapper, "gmm": _decode_gmm}


def decode_model(data: bytes, expected_kind: str = None):
    kind, meta, arrays = _unpack(data)
    if expected_kind is not None and kind != expected_kind:
        raise FormatError(f"expected a {expected_kind} model, found {kind}", 6)
    try:
        return _DECODERS[kind](meta, arrays)
    except FormatError:
        raise
    except Exception as exc:  # malformed but hash-consistent payload
        raise FormatError(f"inconsistent {kind} payload: {exc}") from None


def save_model(model, path) -> str:
    data = encode_model(model)
    Path(path).write_bytes(data)
    return data[-_DIGEST:].hex()


def load_model(path, expected_kind: str = None):
    try:
        data = Path(path).read_bytes()
    except FileNotFoundError:
        raise DataError(f"model file not found: {path}") from None
    return decode_model(data, expected_kind)
