"""Release acceptance suite.

Each test is one criterion at its stated tolerance.  A verdict line per
criterion is printed in the terminal summary.
"""

import filecmp
import json
import math
import os
import struct
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from clvc import nncore
from clvc.cli import main
from clvc.container import decode_model, encode_model
from clvc.corpus import decode_features, encode_features, read_manifest
from clvc.dae import dae_build, dae_gradients
from clvc.gmm import GmmModel, gaussian_logpdf, gmm_fit, gmm_tokenize
from clvc.mapper import mapper_train
from clvc.nncore import LINEAR, SIGMOID, RmspropState
from clvc.prosody import transform_f0
from helpers import models_equal, random_model, random_utterance

pytestmark = pytest.mark.slow


def test_c1_gradient_correctness(verdict):
    with verdict(1, "backprop matches central differences on 50 random MLPs") as v:
        start = time.perf_counter()
        worst = 0.0
        for seed in range(50):
            rng = np.random.default_rng([seed, 1])
            depth = int(rng.integers(1, 3))
            sizes = [int(s) for s in rng.integers(1, 11, size=depth + 1)]
            acts = [SIGMOID if rng.random() < 0.5 else LINEAR for _ in range(depth)]
            model = nncore.build_mlp(sizes, acts, seed)
            for layer in model.layers:
                layer.bias[:] = rng.normal(scale=0.5, size=layer.bias.shape)
            n = int(rng.integers(1, 9))
            x = rng.normal(size=(n, sizes[0]))
            t = rng.normal(size=(n, sizes[-1]))
            worst = max(worst, nncore.grad_check(model, x, t, step=1e-6))
        elapsed = time.perf_counter() - start
        v["info"] = f"max relative error {worst:.2e}, {elapsed:.1f} s"
        assert worst < 1e-5
        assert elapsed < 30


def test_c2_em_monotone(verdict):
    with verdict(2, "EM log-likelihood never decreases over 20 runs") as v:
        start = time.perf_counter()
        worst_drop = 0.0
        for seed in range(20):
            rng = np.random.default_rng([seed, 2])
            k = int(rng.integers(1, 17))
            true_k = int(rng.integers(1, 9))
            centers = rng.normal(scale=3.0, size=(true_k, 8))
            scales = rng.uniform(0.3, 2.0, size=(true_k, 8))
            labels = rng.integers(true_k, size=2000)
            x = centers[labels] + scales[labels] * rng.normal(size=(2000, 8))
            _, trace = gmm_fit(x, k, seed=seed)
            drops = [a - b for a, b in zip(trace, trace[1:])]
            worst_drop = max([worst_drop] + drops)
        elapsed = time.perf_counter() - start
        v["info"] = f"largest decrease {worst_drop:.2e}, {elapsed:.1f} s"
        assert worst_drop <= 1e-8
        assert elapsed < 60


def test_c3_tokenizer_oracle(verdict):
    with verdict(3, "tokenizer equals brute-force scoring on 1000 frames") as v:
        start = time.perf_counter()
        rng = np.random.default_rng(3)
        w = rng.uniform(0.2, 1.0, size=8)
        model = GmmModel(w / w.sum(), rng.normal(scale=2.0, size=(8, 5)), rng.uniform(0.3, 3.0, size=(8, 5)))
        frames = rng.normal(scale=2.5, size=(1000, 5))
        codes, idx = gmm_tokenize(model, frames)
        mismatches = 0
        for t in range(1000):
            best, best_score = 0, -math.inf
            for k in range(8):
                score = math.log(model.weights[k]) + gaussian_logpdf(frames[t], model.means[k], model.variances[k])
                if score > best_score:
                    best, best_score = k, score
            mismatches += int(idx[t] != best or codes[t].tobytes() != model.means[best].tobytes())
        elapsed = time.perf_counter() - start
        v["info"] = f"{mismatches} mismatches, {elapsed:.2f} s"
        assert mismatches == 0
        assert elapsed < 5


def test_c4_architecture(verdict):
    with verdict(4, "M=40 autoencoder and mapper layouts, linear bottleneck, tied decoder") as v:
        dae = dae_build(40, seed=0)
        assert dae.widths == [40, 512, 512, 20, 512, 512, 40]
        assert dae.encoder_layers[-1].activation == LINEAR
        assert [l.activation for l in dae.encoder_layers[:-1]] == [SIGMOID, SIGMOID]

        rng = np.random.default_rng(4)
        x = rng.normal(size=(256, 40))
        params = dae.parameters()
        state = RmspropState.for_params(params)
        for step in range(5):
            _, grads = dae_gradients(dae, x[step * 50:(step + 1) * 50])
            nncore.apply_rmsprop(params, grads, state)
        # a linear bottleneck can leave (0, 1)
        from clvc.dae import dae_encode
        codes = dae_encode(dae, 10 * x)
        assert codes.min() < 0 or codes.max() > 1
        moved = np.any(dae.encoder_layers[0].weights != dae_build(40, seed=0).encoder_layers[0].weights)
        assert moved
        for j, layer in enumerate(dae.decoder_layers()):
            enc = dae.encoder_layers[len(dae.encoder_layers) - 1 - j]
            assert layer.weights.tobytes() == np.ascontiguousarray(enc.weights.T).tobytes()

        mapper, _ = mapper_train(rng.normal(size=(300, 20)), rng.normal(size=(300, 40)))
        assert mapper.net.sizes == [20, 50, 50, 40]
        assert mapper.net.activations == [SIGMOID, SIGMOID, LINEAR]
        v["info"] = f"dae {dae.widths}, mapper {mapper.net.sizes}"


def test_c5_f0_contract(verdict):
    with verdict(5, "converted voiced F0 mean equals the target on 100 tracks") as v:
        worst = 0.0
        for seed in range(100):
            rng = np.random.default_rng([seed, 5])
            n = int(rng.integers(1, 500))
            track = rng.uniform(60, 400, size=n)
            track[rng.random(n) < rng.uniform(0, 0.8)] = 0.0
            track[int(rng.integers(n))] = rng.uniform(60, 400)
            target = float(rng.uniform(80, 300))
            out = transform_f0(track, target)
            assert np.array_equal(out > 0, track > 0)
            assert np.all(out[track == 0] == 0.0)
            worst = max(worst, abs(out[out > 0].mean() - target) / target)
        v["info"] = f"max relative error {worst:.1e}"
        assert worst <= 1e-9


# ---------------------------------------------------------------------------
# criteria 6 to 8 share two runs of the full command sequence


def _sequence():
    return [
        ["gen-corpus", "--out", "corpus", "--feature-dim", "16"],
        ["train-dae", "--corpus", "corpus", "--out", "dae.cvcm", "--hidden-widths", "64,64"],
        ["train-dnn", "--corpus", "corpus", "--dae", "dae.cvcm", "--out", "mapper.cvcm"],
        ["train-gmm", "--corpus", "corpus", "--out", "gmm.cvcm"],
        ["convert", "--corpus", "corpus", "--dae", "dae.cvcm", "--model", "mapper.cvcm",
         "--out", "converted_proposed"],
        ["convert", "--corpus", "corpus", "--system", "gmm", "--model", "gmm.cvcm",
         "--out", "converted_gmm"],
        ["evaluate", "--corpus", "corpus", "--dae", "dae.cvcm", "--model", "mapper.cvcm",
         "--report", "proposed.json", "--table", "proposed.dat"],
        ["evaluate", "--corpus", "corpus", "--system", "gmm", "--model", "gmm.cvcm",
         "--report", "gmm.json", "--table", "gmm.dat"],
    ]


def _run_sequence(workdir: Path) -> float:
    workdir.mkdir(parents=True)
    start = time.perf_counter()
    for argv in _sequence():
        proc = subprocess.run([sys.executable, "-m", "clvc"] + argv, cwd=workdir,
                              capture_output=True, text=True)
        assert proc.returncode == 0, f"{argv[0]} failed: {proc.stderr}"
    return time.perf_counter() - start


@pytest.fixture(scope="module")
def cli_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance")
    first = _run_sequence(root / "run1")
    second = _run_sequence(root / "run2")
    return root / "run1", root / "run2", first


def test_c6_end_to_end_mcd(cli_runs, verdict):
    with verdict(6, "proposed cuts MCD by at least 20% and beats the GMM baseline") as v:
        run, _, elapsed = cli_runs
        proposed = json.loads((run / "proposed.json").read_text())
        baseline = json.loads((run / "gmm.json").read_text())
        src = proposed["reference"]["mean_mcd"]
        assert baseline["reference"]["mean_mcd"] == src
        p, g = proposed["mean_mcd"], baseline["mean_mcd"]
        v["info"] = (f"source {src:.3f} dB, proposed {p:.3f} dB ({100 * (1 - p / src):.1f}% lower), "
                     f"gmm {g:.3f} dB, {elapsed:.0f} s")
        assert p <= 0.8 * src
        assert p < g
        assert elapsed < 600


def test_c7_speaker_classification(cli_runs, verdict):
    with verdict(7, "converted speech is classified as the target more often, both systems") as v:
        run, _, _ = cli_runs
        infos = []
        for name in ("proposed", "gmm"):
            report = json.loads((run / f"{name}.json").read_text())
            acc, ref = report["accuracy"], report["reference"]["accuracy"]
            infos.append(f"{name} {acc:.2f} vs unconverted {ref:.2f}")
            assert acc > ref
        v["info"] = ", ".join(infos)


def _tree(root: Path):
    return sorted(p.relative_to(root).as_posix() for p in root.rglob("*") if p.is_file())


def test_c8_determinism(cli_runs, verdict):
    with verdict(8, "repeated command sequence gives byte-identical outputs") as v:
        run1, run2, _ = cli_runs
        files = _tree(run1)
        assert files == _tree(run2)
        _, mismatch, errors = filecmp.cmpfiles(run1, run2, files, shallow=False)
        v["info"] = f"{len(files)} files compared, {len(mismatch) + len(errors)} differ"
        assert not mismatch and not errors
        for must in ("dae.cvcm", "mapper.cvcm", "gmm.cvcm", "proposed.json", "gmm.json"):
            assert must in files


# ---------------------------------------------------------------------------
# criterion 9


def _fuzz_feature_header(data: bytes, rng) -> bytes:
    """Corrupt one structural header field of a CVCF file."""
    data = bytearray(data)
    mode = int(rng.integers(5))
    if mode == 0:  # magic or version bytes
        pos = int(rng.integers(0, 6))
        data[pos] = (data[pos] + int(rng.integers(1, 256))) % 256
    elif mode == 1:  # a frame, coefficient or aperiodicity count
        pos = 6 + int(rng.integers(0, 12))
        data[pos] = (data[pos] + int(rng.integers(1, 256))) % 256
    elif mode == 2:  # timing field replaced by an impossible value
        bad = [0.0, -0.005, math.inf, -math.inf, math.nan][int(rng.integers(5))]
        struct.pack_into("<d", data, 18 + 8 * int(rng.integers(2)), bad)
    elif mode == 3:  # speaker id length prefix
        old = struct.unpack_from("<I", data, 34)[0]
        struct.pack_into("<I", data, 34, (old + int(rng.integers(1, 1 << 32))) % (1 << 32))
    else:  # cut inside the header
        data = data[:int(rng.integers(0, 38))]
    return bytes(data)


def _fuzz_model_header(data: bytes, rng) -> bytes:
    data = bytearray(data)
    if rng.random() < 0.2:
        return bytes(data[:int(rng.integers(0, 18))])
    pos = int(rng.integers(0, 18))
    data[pos] = (data[pos] + int(rng.integers(1, 256))) % 256
    return bytes(data)


@pytest.fixture(scope="module")
def tiny_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("fuzz")
    assert main(["gen-corpus", "--out", str(root / "c"), "--feature-dim", "8", "--dae-speakers", "1",
                 "--vc-speakers", "2", "--train-utts", "2", "--test-utts", "1", "--frames", "20",
                 "--phones", "4"]) == 0
    assert main(["train-gmm", "--corpus", str(root / "c"), "--out", str(root / "gmm.cvcm"),
                 "--components", "2"]) == 0
    return root


def test_c9_format_robustness(tiny_corpus, verdict, capsys):
    with verdict(9, "1000 CVCF and 1000 CVCM round trips; corrupted headers exit 2") as v:
        rng = np.random.default_rng(9)
        for _ in range(1000):
            utt = random_utterance(rng)
            back = decode_features(encode_features(utt))
            assert back.equals(utt)
        for _ in range(1000):
            model = random_model(rng)
            assert models_equal(decode_model(encode_model(model)), model)

        root = tiny_corpus
        target = [e for e in read_manifest(root / "c" / "manifest.tsv")
                  if e.speaker_id == "vc0" and e.split == "train"][0]
        feature_path = root / "c" / target.path
        clean_features = feature_path.read_bytes()
        model_path = root / "gmm.cvcm"
        clean_model = model_path.read_bytes()
        codes = []
        try:
            for case in range(200):
                feature_path.write_bytes(_fuzz_feature_header(clean_features, rng))
                out = root / f"f{case}.cvcm"
                codes.append(main(["train-gmm", "--corpus", str(root / "c"), "--out", str(out),
                                   "--components", "2"]))
                assert not out.exists()
            feature_path.write_bytes(clean_features)
            for case in range(200):
                model_path.write_bytes(_fuzz_model_header(clean_model, rng))
                report = root / f"r{case}.json"
                codes.append(main(["evaluate", "--corpus", str(root / "c"), "--system", "gmm",
                                   "--model", str(model_path), "--report", str(report),
                                   "--classifier-components", "1"]))
                assert not report.exists()
            # a few through a real process, to check the process exit status too
            for case in range(5):
                model_path.write_bytes(_fuzz_model_header(clean_model, rng))
                proc = subprocess.run([sys.executable, "-m", "clvc", "convert", "--corpus", "c",
                                       "--system", "gmm", "--model", "gmm.cvcm", "--out", f"o{case}"],
                                      cwd=root, capture_output=True, text=True)
                codes.append(proc.returncode)
                assert "Traceback" not in proc.stderr
        finally:
            feature_path.write_bytes(clean_features)
            model_path.write_bytes(clean_model)
        capsys.readouterr()
        v["info"] = f"{len(codes)} corrupted inputs, exit codes {sorted(set(codes))}"
        assert set(codes) == {2}
