"""Glue between traces and learning: PC1 extraction, segmentation, feature
matrices, and the feature CSV interchange format."""
import csv
import io

import numpy as np

from .csi_model import LABEL_INDEX, LABELS
from .errors import CsiFormatError, MalformedHeader, NonFiniteValue, UnknownLabel
from .features import N_FEATURES, assemble_feature_vector
from .preprocess import preprocess_amplitudes
from .segment import SegmenterConfig, detect_intervals, estimate_threshold
from .synth import generate_scenario

FEATURE_HEADER = [f"f{i:03d}" for i in range(N_FEATURES)]


def trace_pc1(trace, denoise=None):
    """Denoised first principal component of a whole trace."""
    pc1, _, _ = preprocess_amplitudes(trace.amplitudes, denoise)
    return pc1


def segment_pc1(pc1, calibration_s=10.0, fs=200.0, seg_cfg=None):
    """Calibrate on the leading static span, then detect activity.

    Returns ``(intervals, threshold)``.
    """
    seg_cfg = seg_cfg or SegmenterConfig()
    n_cal = int(round(calibration_s * fs))
    threshold = estimate_threshold(pc1[:n_cal], seg_cfg)
    return detect_intervals(pc1, threshold, seg_cfg, fs), threshold


def featurize_intervals(pc1, intervals, mode="both", stft_cfg=None,
                        dwt_cfg=None):
    """Stack one feature vector per ``(start, end)`` interval."""
    rows = []
    for iv in intervals:
        s, e = (iv.start_idx, iv.end_idx) if hasattr(iv, "start_idx") else iv
        rows.append(assemble_feature_vector(pc1[s:e], stft_cfg, dwt_cfg,
                                            mode=mode))
    if not rows:
        return np.zeros((0, N_FEATURES))
    return np.vstack(rows)


def scenario_dataset(cfg, mode="both", denoise=None):
    """Generate a session and featurize its ground-truth intervals.

    Returns ``(X, y, trace, intervals, pc1)``.
    """
    trace, intervals = generate_scenario(cfg)
    pc1 = trace_pc1(trace, denoise)
    X = featurize_intervals(pc1, intervals, mode)
    y = np.array([iv.label_index for iv in intervals], dtype=np.int64)
    return X, y, trace, intervals, pc1


def domain_dataset(configs, mode="both"):
    """Concatenate the datasets of several sessions of one domain."""
    parts = [scenario_dataset(c, mode)[:2] for c in configs]
    return (np.vstack([p[0] for p in parts]),
            np.concatenate([p[1] for p in parts]))


def stratified_split(y, test_fraction, seed):
    """Seeded per-class split; returns ``(train_idx, test_idx)``, sorted.

    Every class with at least two members keeps at least one example on
    each side.
    """
    rng = np.random.default_rng(seed)
    train, test = [], []
    for c in np.unique(y):
        idx = rng.permutation(np.flatnonzero(y == c))
        k = int(round(test_fraction * idx.size))
        if idx.size >= 2:
            k = min(max(k, 1), idx.size - 1)
        test.extend(idx[:k])
        train.extend(idx[k:])
    return np.sort(np.array(train, dtype=np.int64)), \
        np.sort(np.array(test, dtype=np.int64))


def write_features(X, y=None):
    """CSV text: ``f000..f383`` columns plus ``label`` (names) if given."""
    X = np.asarray(X, dtype=np.float64)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(FEATURE_HEADER + (["label"] if y is not None else []))
    for i, row in enumerate(X):
        cells = [repr(float(v)) for v in row]
        if y is not None:
            cells.append(LABELS[int(y[i])])
        w.writerow(cells)
    return buf.getvalue()


def read_features(text):
    """Parse feature CSV text; returns ``(X, y)`` with ``y`` None when the
    file carries no label column."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise MalformedHeader("empty feature file")
    header = rows[0]
    has_label = header[-1:] == ["label"]
    if header[:N_FEATURES] != FEATURE_HEADER or \
            len(header) != N_FEATURES + has_label:
        raise MalformedHeader("expected f000..f383 [label] header")
    X = np.zeros((len(rows) - 1, N_FEATURES))
    y = np.zeros(len(rows) - 1, dtype=np.int64) if has_label else None
    for r, row in enumerate(rows[1:], start=1):
        if len(row) != len(header):
            raise CsiFormatError(f"expected {len(header)} fields", row=r)
        try:
            X[r - 1] = [float(v) for v in row[:N_FEATURES]]
        except ValueError as exc:
            raise CsiFormatError(str(exc), row=r) from None
        if not np.all(np.isfinite(X[r - 1])):
            raise NonFiniteValue("non-finite feature", row=r)
        if has_label:
            if row[-1] not in LABEL_INDEX:
                raise UnknownLabel(f"unknown label {row[-1]!r}", row=r)
            y[r - 1] = LABEL_INDEX[row[-1]]
    return X, y
