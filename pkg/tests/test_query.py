import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semsplat.embed import LabelDictionary, SemanticCodec
from semsplat.errors import UnknownLabelError, ValidationError
from semsplat.query import (ScoreMap, default_filter_size, localize, normalize,
                            relevancy_map, segment, smooth)
from semsplat.raster import FeatureMap


def identity_codec(dim):
    eye = np.eye(dim)
    return SemanticCodec(encode_matrix=eye, decode_matrix=eye.copy())


def dictionary(rows):
    rows = {k: np.asarray(v, dtype=float) for k, v in rows.items()}
    return LabelDictionary(vectors=rows, ambient_dim=len(next(iter(rows.values()))))


def score(values, level=1, label=0):
    return ScoreMap(np.asarray(values, dtype=float), level=level, label_id=label)


class TestRelevancyMap:
    def setup_method(self):
        self.dict = dictionary({(1, 0): [1.0, 0.0, 0.0], (1, 1): [0.0, 1.0, 0.0]})
        self.codec = identity_codec(3)

    def test_exact_match_scores_one(self):
        fmap = FeatureMap(np.array([[[1.0]], [[0.0]], [[0.0]]]))
        out = relevancy_map(fmap, self.codec, self.dict, 1, 0)
        assert out.values[0, 0] == pytest.approx(1.0)

    def test_orthogonal_scores_half(self):
        fmap = FeatureMap(np.array([[[0.0]], [[1.0]], [[0.0]]]))
        out = relevancy_map(fmap, self.codec, self.dict, 1, 0)
        assert out.values[0, 0] == pytest.approx(0.5)

    def test_zero_feature_scores_zero(self):
        fmap = FeatureMap(np.zeros((3, 2, 2)))
        out = relevancy_map(fmap, self.codec, self.dict, 1, 0)
        assert np.all(out.values == 0.0)

    def test_unknown_label(self):
        fmap = FeatureMap(np.zeros((3, 1, 1)))
        with pytest.raises(UnknownLabelError):
            relevancy_map(fmap, self.codec, self.dict, 2, 0)


class TestSmooth:
    def test_constant_map_unchanged(self):
        out = smooth(score(np.full((5, 7), 0.3)), 4)
        assert np.allclose(out.values, 0.3)

    def test_k1_is_identity(self):
        rng = np.random.default_rng(0)
        v = rng.random((6, 6))
        out = smooth(score(v), 1)
        assert np.array_equal(out.values, v)

    def test_hand_windows_1x3(self):
        out = smooth(score([[0.0, 1.0, 0.0]]), 3)
        assert np.allclose(out.values, [[1 / 3, 1 / 3, 1 / 3]])

    def test_k_larger_than_both_dims_gives_global_mean(self):
        v = np.array([[0.0, 1.0], [1.0, 1.0]])
        out = smooth(score(v), 5)
        assert np.allclose(out.values, 0.75)

    def test_invalid_k(self):
        with pytest.raises(ValidationError):
            smooth(score(np.zeros((3, 3))), 0)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10 ** 9), st.integers(1, 9), st.integers(1, 9),
           st.integers(1, 12))
    def test_range_preserved(self, seed, h, w, k):
        rng = np.random.default_rng(seed)
        v = rng.random((h, w))
        out = smooth(score(v), k).values
        assert out.min() >= v.min() - 1e-12
        assert out.max() <= v.max() + 1e-12

    def test_matches_direct_window_average(self):
        rng = np.random.default_rng(3)
        v = rng.random((7, 9))
        for k in (2, 3, 5):
            out = smooth(score(v), k).values
            lo, hi = (k - 1) // 2, k // 2
            for r in range(7):
                for c in range(9):
                    rows = np.clip(np.arange(r - lo, r + hi + 1), 0, 6)
                    cols = np.clip(np.arange(c - lo, c + hi + 1), 0, 8)
                    expected = v[np.ix_(rows, cols)].mean()
                    assert out[r, c] == pytest.approx(expected, abs=1e-12)

    def test_default_filter_scales_with_height(self):
        assert default_filter_size(1080) == 20
        assert default_filter_size(64) == 3
        assert default_filter_size(540) == 10


class TestSegment:
    def test_minmax_then_threshold(self):
        got = segment(score([[0.3, 0.5]]), 0.4)
        assert got.tolist() == [[False, True]]

    def test_constant_map_is_empty(self):
        got = segment(score(np.full((3, 3), 0.7)), 0.4)
        assert not got.any()

    def test_hand_normalization(self):
        got = segment(score([[0.0, 0.2, 1.0]]), 0.4)
        assert got.tolist() == [[False, False, True]]

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10 ** 9))
    def test_monotone_in_threshold(self, seed):
        rng = np.random.default_rng(seed)
        v = rng.random((5, 5))
        lo = segment(score(v), 0.3)
        hi = segment(score(v), 0.7)
        assert not (hi & ~lo).any()


class TestLocalize:
    def test_single_peak(self):
        v = np.zeros((4, 4))
        v[2, 3] = 1.0
        assert localize(score(v)) == (2, 3)

    def test_row_major_tie_break(self):
        v = np.zeros((4, 4))
        v[1, 2] = v[3, 0] = 1.0
        assert localize(score(v)) == (1, 2)

    def test_argmax_invariant_under_scaling(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            v = rng.random((6, 6))
            assert localize(score(v)) == localize(score(v / 3.0))

    def test_argmax_invariant_under_monotone_transform(self):
        rng = np.random.default_rng(13)
        for _ in range(20):
            v = rng.random((5, 8))
            assert localize(score(v)) == localize(score(np.sqrt(v)))


class TestNormalize:
    def test_spans_unit_interval(self):
        out = normalize(score([[0.2, 0.6, 1.0]]))
        assert np.allclose(out.values, [[0.0, 0.5, 1.0]])
