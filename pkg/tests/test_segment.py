import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from widur.errors import SeriesTooShort
from widur.segment import (ActivitySegmenter, SegmenterConfig,
                           detect_intervals, estimate_threshold,
                           interval_iou, mean_best_iou, sliding_variance)


def naive_variance(x, m):
    out = []
    for j in range(len(x) - m + 1):
        w = x[j:j + m]
        mu = sum(w) / m
        out.append(sum((v - mu) ** 2 for v in w) / m)
    return np.array(out)


def burst_series(seed, start=400, stop=1600, n=2400, amp=3.0):
    rng = np.random.default_rng(seed)
    x = rng.normal(0, 0.5, n)
    t = np.arange(stop - start) / 200.0
    x[start:stop] += amp * np.sin(2 * np.pi * (2 + 2 * t) * t)
    return x


class TestSlidingVariance:
    def test_constant_is_zero(self):
        assert np.all(sliding_variance(np.full(20, 3.3), 7) == 0)

    def test_small_example(self):
        assert sliding_variance([0, 1, 2, 3], 2).tolist() == [0.25] * 3

    def test_length(self):
        assert sliding_variance(np.arange(50.0), 10).size == 41

    def test_too_short(self):
        with pytest.raises(SeriesTooShort):
            sliding_variance(np.ones(5), 10)

    @pytest.mark.parametrize("seed", range(3))
    def test_matches_naive(self, seed):
        x = np.random.default_rng(seed).normal(size=500)
        ref = naive_variance(x.tolist(), 10)
        got = sliding_variance(x, 10)
        assert np.all(np.abs(got - ref) <= 1e-12 * np.abs(ref))

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=60),
           st.integers(2, 10))
    def test_property_naive_and_nonnegative(self, values, m):
        if len(values) < m:
            m = len(values)
        got = sliding_variance(values, m)
        ref = naive_variance(values, m)
        assert np.all(got >= 0)
        assert np.allclose(got, ref, rtol=1e-9, atol=1e-9)


class TestThreshold:
    def test_constant_static_gives_zero(self):
        assert estimate_threshold(np.full(200, 4.0)) == 0.0

    def test_matches_direct_computation(self):
        x = np.random.default_rng(0).normal(size=4000)
        v = naive_variance(x.tolist(), 10)
        expected = v.mean() + 3.0 * v.std()
        got = estimate_threshold(x)
        assert got == pytest.approx(expected, rel=1e-10)
        # population variance of unit white noise: (m - 1) / m on average
        assert v.mean() == pytest.approx(0.9, abs=0.03)

    def test_larger_k_never_lower(self):
        x = np.random.default_rng(1).normal(size=500)
        low = estimate_threshold(x, SegmenterConfig(threshold_k=3.0))
        high = estimate_threshold(x, SegmenterConfig(threshold_k=6.0))
        assert high >= low

    def test_needs_ten_windows(self):
        with pytest.raises(SeriesTooShort):
            estimate_threshold(np.ones(99))


class TestDetectIntervals:
    def test_static_is_empty(self):
        x = np.random.default_rng(2).normal(size=2000)
        assert detect_intervals(x, 1e6) == []

    def test_one_burst_iou(self):
        cal = np.random.default_rng(99).normal(0, 0.5, 2000)
        thr = estimate_threshold(cal)
        ivs = detect_intervals(burst_series(3), thr)
        assert len(ivs) == 1
        assert interval_iou(ivs[0], (400, 1600)) >= 0.8

    def test_close_bursts_merge(self):
        # two 1.5 s bursts 0.2 s apart on an otherwise silent series
        x = np.zeros(2000)
        rng = np.random.default_rng(4)
        x[200:500] = rng.normal(0, 1, 300)
        x[540:840] = rng.normal(0, 1, 300)
        ivs = detect_intervals(x, 0.01, SegmenterConfig(merge_gap_s=0.5))
        assert len(ivs) == 1
        apart = detect_intervals(x, 0.01, SegmenterConfig(merge_gap_s=0.0,
                                                         pad_s=0.0))
        assert len(apart) == 2

    def test_short_blip_dropped(self):
        x = np.zeros(1000)
        x[300:380] = np.random.default_rng(5).normal(0, 1, 80)
        assert detect_intervals(x, 0.01) == []

    def test_padding_clamped_to_bounds(self):
        x = np.random.default_rng(6).normal(0, 1, 400)
        assert detect_intervals(x, 0.0) == [(0, 400)]

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0.01, 3.0))
    def test_output_invariants(self, seed, thr):
        x = np.random.default_rng(seed).normal(size=1500)
        x[500:900] *= 3
        cfg = SegmenterConfig()
        ivs = detect_intervals(x, thr, cfg)
        pad = cfg.pad_s * 200
        for s, e in ivs:
            assert 0 <= s < e <= x.size
            assert e - s >= cfg.min_duration_s * 200 - 2 * pad
        for (_, e0), (s1, _) in zip(ivs, ivs[1:]):
            assert e0 < s1

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0.0, 2.0), st.floats(0.0, 2.0))
    def test_raising_threshold_never_adds_on_time(self, seed, a, b):
        x = np.random.default_rng(seed).normal(size=600)
        lo, hi = sorted((a, b))
        v = sliding_variance(x, 10)
        assert np.sum(v > hi) <= np.sum(v > lo)
        on = lambda t: sum(e - s for s, e in detect_intervals(
            x, t, SegmenterConfig(min_on_windows=1, merge_gap_s=0,
                                  min_duration_s=0, pad_s=0)))
        assert on(hi) <= on(lo)


def test_iou_helpers():
    assert interval_iou((0, 10), (5, 15)) == pytest.approx(5 / 15)
    assert interval_iou((0, 10), (10, 20)) == 0.0
    assert mean_best_iou([(0, 10)], [(0, 10), (50, 60)]) == 0.5
    assert np.isnan(mean_best_iou([(0, 10)], []))


def test_estimator_wrapper():
    cal = np.random.default_rng(99).normal(0, 0.5, 2000)
    seg = ActivitySegmenter().fit(cal)
    assert seg.threshold_ == estimate_threshold(cal)
    assert seg.predict(burst_series(3)) == detect_intervals(
        burst_series(3), seg.threshold_)
    assert seg.get_params()["window_m"] == 10


def test_config_validation():
    with pytest.raises(ValueError):
        SegmenterConfig(window_m=1)
    with pytest.raises(ValueError):
        SegmenterConfig(pad_s=-1)
