import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clvc.corpus import FeatureUtterance
from clvc.errors import ConfigError, DataError, ShapeError
from clvc.evaluation import MCD_CONST, EvalReport, SpeakerClassifier, evaluate, mcd


class TestMcd:
    def test_constant(self):
        assert MCD_CONST == pytest.approx(6.141851463713754, rel=1e-15)

    def test_identical_is_zero(self):
        a = np.random.default_rng(0).normal(size=(5, 4))
        assert mcd(a, a) == 0.0

    def test_hand_example(self):
        a = np.zeros((2, 3))
        b = np.array([[9.0, 3.0, 4.0], [9.0, 0.0, 0.0]])
        # per frame: sqrt(9+16)=5 and 0; c0 skipped
        assert mcd(a, b) == pytest.approx(MCD_CONST * 2.5, rel=1e-15)
        assert mcd(a, b, skip_c0=False) == pytest.approx(
            MCD_CONST * (math.sqrt(106) + 9.0) / 2, rel=1e-15)

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_metric_properties(self, seed):
        rng = np.random.default_rng(seed)
        a, b, c = rng.normal(size=(3, 6, 5))
        assert mcd(a, b) == pytest.approx(mcd(b, a), rel=1e-14)
        assert mcd(a, c) <= mcd(a, b) + mcd(b, c) + 1e-12
        assert mcd(a, b) >= 0

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            mcd(np.zeros((2, 3)), np.zeros((3, 3)))


def _utt(spk, uid, frames):
    n = frames.shape[0]
    return FeatureUtterance(spk, uid, frames, np.full(n, 100.0), np.zeros((n, 1)))


class TestClassifier:
    def test_separates_speakers(self):
        rng = np.random.default_rng(0)
        data = {"a": rng.normal(0, 1, size=(300, 3)), "b": rng.normal(4, 1, size=(300, 3))}
        clf = SpeakerClassifier.fit(data, components=2)
        assert clf.classify(rng.normal(0, 1, size=(20, 3))) == "a"
        assert clf.classify(rng.normal(4, 1, size=(20, 3))) == "b"

    def test_tie_goes_to_first(self):
        frames = np.random.default_rng(1).normal(size=(100, 2))
        clf = SpeakerClassifier.fit({"x": frames, "y": frames}, components=1)
        assert clf.classify(frames[:5]) == "x"

    def test_empty(self):
        with pytest.raises(DataError):
            SpeakerClassifier.fit({})


class TestEvaluate:
    def _setup(self):
        rng = np.random.default_rng(2)
        target = rng.normal(3, 1, size=(200, 4))
        source = rng.normal(0, 1, size=(200, 4))
        clf = SpeakerClassifier.fit({"t": target, "s": source}, components=2)
        srcs = [_utt("s", f"u{i}", rng.normal(0, 1, size=(10, 4))) for i in range(3)]
        truth = [_utt("t", u.utterance_id, u.frames + 3.0) for u in srcs]
        return srcs, truth, clf

    def test_unconverted_reference(self):
        srcs, truth, clf = self._setup()
        report = evaluate(None, srcs, truth, clf, target_speaker_id="t")
        assert report.system_kind == "unconverted"
        assert report.accuracy == 0.0
        expected = MCD_CONST * math.sqrt(3 * 9.0)
        assert report.mean_mcd == pytest.approx(expected, rel=1e-12)
        assert report.per_utterance_mcd == pytest.approx([expected] * 3, rel=1e-12)

    def test_needs_target_id(self):
        srcs, truth, clf = self._setup()
        with pytest.raises(ConfigError):
            evaluate(None, srcs, truth, clf)

    def test_length_mismatch(self):
        srcs, truth, clf = self._setup()
        with pytest.raises(DataError):
            evaluate(None, srcs, truth[:-1], clf, target_speaker_id="t")

    def test_report_json_round_trip(self):
        srcs, truth, clf = self._setup()
        report = evaluate(None, srcs, truth, clf, target_speaker_id="t", config={"seed": 0})
        report.reference = evaluate(None, srcs, truth, clf, target_speaker_id="t")
        back = EvalReport.from_json(report.to_json())
        assert back == report
        assert back.to_json() == report.to_json()

    def test_table(self):
        srcs, truth, clf = self._setup()
        report = evaluate(None, srcs, truth, clf, target_speaker_id="t")
        lines = report.to_table().splitlines()
        assert lines[0].startswith("#") and len(lines) == 4
        assert float(lines[1].split()[2]) == report.per_utterance_mcd[0]
