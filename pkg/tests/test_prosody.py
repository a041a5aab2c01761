import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from clvc.errors import ProsodyError
from clvc.prosody import SpeakerProfile, mean_voiced_f0, pass_aperiodicity, transform_f0


class TestTransformF0:
    def test_hand_example(self):
        out = transform_f0([100.0, 0.0, 200.0, 0.0], 300.0)
        # source voiced mean 150, factor 2
        np.testing.assert_array_equal(out, [200.0, 0.0, 400.0, 0.0])

    def test_identity_when_means_equal(self):
        src = np.array([120.0, 0.0, 180.0])
        np.testing.assert_allclose(transform_f0(src, 150.0), src, rtol=1e-15)

    @settings(max_examples=100, deadline=None)
    @given(track=arrays(np.float64, st.integers(1, 200),
                        elements=st.one_of(st.just(0.0), st.floats(40.0, 600.0))),
           target=st.floats(50.0, 500.0))
    def test_mean_and_mask(self, track, target):
        voiced = track > 0
        if not voiced.any():
            with pytest.raises(ProsodyError):
                transform_f0(track, target)
            return
        out = transform_f0(track, target)
        np.testing.assert_array_equal(out > 0, voiced)
        assert np.all(out[~voiced] == 0.0)
        assert abs(out[voiced].mean() - target) <= 1e-9 * target

    def test_ratio_preserved(self):
        src = np.array([100.0, 110.0, 0.0, 130.0])
        out = transform_f0(src, 240.0)
        np.testing.assert_allclose(out[1] / out[0], 1.1, rtol=1e-14)

    def test_errors(self):
        with pytest.raises(ProsodyError):
            transform_f0([0.0, 0.0], 100.0)
        with pytest.raises(ProsodyError):
            transform_f0([100.0], 0.0)
        with pytest.raises(ProsodyError):
            transform_f0([100.0, -1.0], 100.0)
        with pytest.raises(ProsodyError):
            transform_f0([100.0, np.nan], 100.0)

    def test_input_untouched(self):
        src = np.array([100.0, 0.0])
        transform_f0(src, 200.0)
        assert src.tolist() == [100.0, 0.0]


class TestMeanVoiced:
    def test_pools_frames_not_utterances(self):
        assert mean_voiced_f0([[100.0, 0.0], [200.0, 200.0, 200.0]]) == pytest.approx(175.0)

    def test_unvoiced_corpus(self):
        with pytest.raises(ProsodyError):
            mean_voiced_f0([[0.0, 0.0]])
        with pytest.raises(ProsodyError):
            mean_voiced_f0([])


def test_aperiodicity_is_copied_bitwise():
    ap = np.random.default_rng(0).normal(size=(5, 3))
    out = pass_aperiodicity(ap)
    assert out.tobytes() == ap.tobytes()
    assert not np.shares_memory(out, ap)


def test_profile_dict():
    assert SpeakerProfile("t", 150.0).to_dict() == {"speaker_id": "t", "mean_voiced_f0": 150.0}
