"""Activity interval detection from the sliding variance of PC1."""
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .errors import SeriesTooShort


@dataclass(frozen=True)
class SegmenterConfig:
    window_m: int = 10
    threshold_k: float = 3.0
    min_on_windows: int = 5
    merge_gap_s: float = 0.5
    min_duration_s: float = 1.0
    pad_s: float = 0.25

    def __post_init__(self):
        if self.window_m < 2:
            raise ValueError("window_m must be >= 2")
        if min(self.merge_gap_s, self.min_duration_s, self.pad_s) < 0:
            raise ValueError("durations must be >= 0")
        if self.min_on_windows < 1:
            raise ValueError("min_on_windows must be >= 1")


def sliding_variance(series, m):
    """Population variance (divide by ``m``) of every length-``m`` window.

    Each window is centered on its own mean before squaring, so the result
    does not suffer from the cancellation of the ``E[x^2] - E[x]^2`` form.
    """
    x = np.asarray(series, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("series must be one-dimensional")
    if m < 1:
        raise ValueError("m must be >= 1")
    if x.size < m:
        raise SeriesTooShort(f"series length {x.size} < window {m}")
    w = sliding_window_view(x, m)
    mu = w.mean(axis=1, keepdims=True)
    var = np.mean((w - mu) ** 2, axis=1)
    # a flat window can still leave a rounding residue in its mean
    var[np.ptp(w, axis=1) == 0] = 0.0
    return var


def estimate_threshold(static_pc1, cfg=None):
    """``mean + k * std`` of the sliding variance over a static recording."""
    cfg = cfg or SegmenterConfig()
    x = np.asarray(static_pc1, dtype=np.float64)
    if x.size < 10 * cfg.window_m:
        raise SeriesTooShort(
            f"static series needs >= {10 * cfg.window_m} samples, "
            f"got {x.size}")
    v = sliding_variance(x, cfg.window_m)
    return float(v.mean() + cfg.threshold_k * v.std())


def _runs(mask):
    """Start/stop (exclusive) index pairs of the True runs in ``mask``."""
    padded = np.concatenate([[False], mask, [False]])
    edges = np.flatnonzero(np.diff(padded.astype(np.int8)))
    return edges.reshape(-1, 2)


def detect_intervals(pc1, threshold, cfg=None, fs=200.0):
    """Detect activity intervals in a PC1 series.

    Window ``j`` covers samples ``j .. j+m-1`` and is "on" when its variance
    exceeds ``threshold``. Runs of at least ``min_on_windows`` on-windows
    become candidates; candidates separated by less than ``merge_gap_s`` are
    merged, those shorter than ``min_duration_s`` dropped, and the survivors
    padded by ``pad_s`` on both sides and clipped to the series.

    Returns a list of ``(start_idx, end_idx)`` half-open sample intervals,
    sorted and disjoint.
    """
    cfg = cfg or SegmenterConfig()
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    if fs <= 0:
        raise ValueError("fs must be > 0")
    x = np.asarray(pc1, dtype=np.float64)
    n = x.size
    if n < cfg.window_m:
        return []
    on = sliding_variance(x, cfg.window_m) > threshold
    runs = [(s, e) for s, e in _runs(on) if e - s >= cfg.min_on_windows]
    # window run [s, e) spans samples [s, e - 1 + m)
    cands = [[int(s), int(e) - 1 + cfg.window_m] for s, e in runs]

    merged = []
    gap = cfg.merge_gap_s * fs
    for c in cands:
        if merged and c[0] - merged[-1][1] < gap:
            merged[-1][1] = max(merged[-1][1], c[1])
        else:
            merged.append(c)

    pad = int(round(cfg.pad_s * fs))
    min_len = cfg.min_duration_s * fs
    out = []
    for s, e in merged:
        if e - s < min_len:
            continue
        s, e = max(0, s - pad), min(n, e + pad)
        if out and s <= out[-1][1]:
            # padding can make neighbours touch; keep the output disjoint
            out[-1] = (out[-1][0], e)
        else:
            out.append((s, e))
    return out


def interval_iou(a, b):
    inter = max(0, min(a[1], b[1]) - max(a[0], b[0]))
    union = (a[1] - a[0]) + (b[1] - b[0]) - inter
    return inter / union if union > 0 else 0.0


def mean_best_iou(detected, truth):
    """Mean over ground-truth intervals of the best IoU with any detection.

    Returns ``nan`` when ``truth`` is empty.
    """
    if not truth:
        return float("nan")
    best = [max((interval_iou(t, d) for d in detected), default=0.0)
            for t in truth]
    return float(np.mean(best))


class ActivitySegmenter(BaseEstimator):
    """Sliding-variance activity detector.

    ``fit`` calibrates the threshold on a static (empty-room) PC1 series;
    ``predict`` returns the detected ``(start, end)`` intervals of a PC1
    series.
    """

    def __init__(self, window_m=10, threshold_k=3.0, min_on_windows=5,
                 merge_gap_s=0.5, min_duration_s=1.0, pad_s=0.25, fs=200.0):
        self.window_m = window_m
        self.threshold_k = threshold_k
        self.min_on_windows = min_on_windows
        self.merge_gap_s = merge_gap_s
        self.min_duration_s = min_duration_s
        self.pad_s = pad_s
        self.fs = fs

    def _config(self):
        return SegmenterConfig(self.window_m, self.threshold_k,
                               self.min_on_windows, self.merge_gap_s,
                               self.min_duration_s, self.pad_s)

    def fit(self, X, y=None):
        self.threshold_ = estimate_threshold(np.ravel(X), self._config())
        return self

    def predict(self, X):
        check_is_fitted(self, "threshold_")
        return detect_intervals(np.ravel(X), self.threshold_,
                                self._config(), self.fs)
