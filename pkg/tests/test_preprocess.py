import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from widur.errors import DegenerateInputWarning, SeriesTooShort
from widur.preprocess import (DenoiseConfig, PC1Transformer, hampel_filter,
                              moving_average, pca_first_component,
                              preprocess_amplitudes)


def naive_hampel(x, window, nsigma):
    half = window // 2
    y = x.copy()
    for i in range(x.size):
        w = x[max(0, i - half):i + half + 1]
        m = np.median(w)
        mad = np.median(np.abs(w - m))
        if abs(x[i] - m) > nsigma * 1.4826 * mad:
            y[i] = m
    return y


def eig_oracle(M):
    Xc = M - M.mean(axis=0)
    cov = Xc.T @ Xc / (M.shape[0] - 1)
    vals, vecs = np.linalg.eigh(cov)
    v = vecs[:, -1]
    if v[np.argmax(np.abs(v))] < 0:
        v = -v
    return vals[-1], v, vals[-1] / vals.sum()


class TestHampel:
    def test_constant_unchanged(self):
        x = np.full(5, 5.0)
        assert np.array_equal(hampel_filter(x, 3, 3.0), x)

    def test_spike_replaced(self):
        out = hampel_filter(np.array([1, 1, 100, 1, 1.0]), 5, 3.0)
        assert out.tolist() == [1, 1, 1, 1, 1]

    def test_ramp_unchanged(self):
        x = np.arange(10.0)
        assert np.array_equal(hampel_filter(x, 3, 3.0), x)

    def test_too_short(self):
        with pytest.raises(SeriesTooShort):
            hampel_filter(np.ones(4), 5)

    def test_even_window_rejected(self):
        with pytest.raises(ValueError):
            hampel_filter(np.ones(20), 4)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_naive(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=400)
        x[rng.integers(0, 400, 12)] += rng.choice([-8, 8], 12)
        assert np.array_equal(hampel_filter(x, 11, 3.0),
                              naive_hampel(x, 11, 3.0))

    def test_columns_independent(self):
        rng = np.random.default_rng(3)
        X = rng.normal(size=(100, 4))
        X[50, 2] = 40
        out = hampel_filter(X, 11, 3.0)
        for c in range(4):
            assert np.array_equal(out[:, c], hampel_filter(X[:, c], 11, 3.0))

    @settings(max_examples=40, deadline=None)
    @given(arrays(np.float64, st.integers(11, 80),
                  elements=st.floats(-1e3, 1e3)))
    def test_length_and_finiteness(self, x):
        y = hampel_filter(x, 11, 3.0)
        assert y.shape == x.shape and np.all(np.isfinite(y))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000))
    def test_monotone_interior_is_fixed_point(self, seed):
        # full windows of a monotone series have the centre sample as median
        rng = np.random.default_rng(seed)
        x = np.cumsum(np.abs(rng.normal(size=200)))
        once = hampel_filter(x, 11, 3.0)
        assert np.array_equal(once[5:-5], x[5:-5])
        assert np.array_equal(hampel_filter(once, 11, 3.0)[5:-5], x[5:-5])

    def test_cleaned_spikes_stay_clean(self):
        rng = np.random.default_rng(11)
        x = np.cumsum(rng.normal(size=300))
        spiked = x.copy()
        spiked[[40, 120, 250]] += 60
        once = hampel_filter(spiked, 11, 3.0)
        assert np.all(np.abs(once[[40, 120, 250]] - x[[40, 120, 250]]) < 10)


class TestMovingAverage:
    def test_window_one_identity(self):
        x = np.random.default_rng(0).normal(size=30)
        assert np.array_equal(moving_average(x, 1), x)

    def test_truncated_edges(self):
        assert np.allclose(moving_average(np.array([0, 3, 0.0]), 3),
                           [1.5, 1.0, 1.5], rtol=0, atol=1e-15)

    def test_constant(self):
        assert np.allclose(moving_average(np.full(9, 2.5), 5), 2.5,
                           rtol=0, atol=1e-15)

    def test_matches_direct_mean(self):
        x = np.random.default_rng(1).normal(size=50)
        out = moving_average(x, 5)
        ref = [x[max(0, i - 2):i + 3].mean() for i in range(50)]
        assert np.allclose(out, ref, rtol=1e-12, atol=1e-12)

    def test_too_short(self):
        with pytest.raises(SeriesTooShort):
            moving_average(np.ones(3), 5)


class TestPca:
    def test_rank_one(self):
        s = np.sin(np.linspace(0, 7, 120))
        M = np.tile(s[:, None], (1, 30))
        scores, loading, ratio = pca_first_component(M)
        assert ratio == pytest.approx(1.0, abs=1e-12)
        centered = s - s.mean()
        assert np.allclose(scores, centered * np.sqrt(30), atol=1e-10)
        assert np.allclose(loading, 1 / np.sqrt(30), atol=1e-12)

    @pytest.mark.parametrize("seed", range(20))
    def test_matches_dense_eigensolver(self, seed):
        M = np.random.default_rng(seed).normal(size=(200, 30))
        lam, vec, ratio = eig_oracle(M)
        scores, loading, r = pca_first_component(M)
        assert np.max(np.abs(loading - vec)) < 1e-8
        assert abs(np.var(scores, ddof=1) - lam) <= 1e-8 * lam
        assert r == pytest.approx(ratio, rel=1e-8)

    def test_constant_input_degenerate(self):
        with warnings.catch_warnings(record=True) as rec:
            warnings.simplefilter("always")
            scores, loading, ratio = pca_first_component(np.ones((10, 30)))
        assert any(issubclass(w.category, DegenerateInputWarning)
                   for w in rec)
        assert ratio == 0.0 and np.all(scores == 0)
        assert np.allclose(loading, 1 / np.sqrt(30))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2 ** 31))
    def test_properties(self, seed):
        rng = np.random.default_rng(seed)
        M = rng.normal(size=(60, 30)) @ rng.normal(size=(30, 30))
        scores, loading, ratio = pca_first_component(M)
        lam = np.var(scores, ddof=1)
        assert abs(np.linalg.norm(loading) - 1) <= 1e-12
        assert 0 <= ratio <= 1
        assert loading[np.argmax(np.abs(loading))] > 0
        Xc = M - M.mean(axis=0)
        dirs = rng.normal(size=(100, 30))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        proj_var = np.var(Xc @ dirs.T, axis=0, ddof=1)
        assert np.all(proj_var <= lam * (1 + 1e-9))


def test_chain_deterministic():
    rng = np.random.default_rng(5)
    A = 20 + rng.normal(size=(500, 30))
    a = preprocess_amplitudes(A)
    b = preprocess_amplitudes(A.copy())
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_transformer_matches_function():
    rng = np.random.default_rng(6)
    A = 20 + rng.normal(size=(300, 30)) + np.sin(np.arange(300) / 7)[:, None]
    pc1, loading, _ = preprocess_amplitudes(A)
    tf = PC1Transformer().fit(A)
    assert np.allclose(tf.transform(A)[:, 0], pc1, atol=1e-10)
    assert np.array_equal(tf.loading_, loading)
    assert tf.get_params() == {"hampel_window": 11, "hampel_nsigma": 3.0,
                               "ma_window": 5}


def test_config_validation():
    with pytest.raises(ValueError):
        DenoiseConfig(hampel_window=4)
    with pytest.raises(ValueError):
        DenoiseConfig(ma_window=0)
