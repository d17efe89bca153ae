"""Time-frequency features: STFT spectrogram grid and DWT energy map.

A segment of the 200 Hz PC1 series becomes a fixed 384-vector: a 16x16
log-power spectrogram (time-major) followed by an 8x16 log wavelet-energy
map (level-major). The wavelet half is computed on the segment decimated to
100 Hz, where detail level ``j`` covers ``(100 / 2**(j+1), 100 / 2**j)`` Hz.
"""
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .errors import (EmptySpectrogram, NonFiniteInput, SegmentTooShort,
                     SeriesTooShort)

SPEED_OF_LIGHT = 299_792_458.0
LOG_FLOOR = 1e-12
GRID_SLOTS = 16
N_STFT_VALUES = 256
N_DWT_VALUES = 128
N_FEATURES = N_STFT_VALUES + N_DWT_VALUES
FEATURE_MODES = ("both", "stft", "dwt")

# Daubechies wavelet with 4 vanishing moments (8 taps), analysis low-pass.
# Minimum-phase spectral factor, normalized to sum sqrt(2).
DB4_LOWPASS = np.array([
    0.23037781330889650086, 0.71484657055291564709,
    0.63088076792985890788, -0.027983769416859854211,
    -0.18703481171909308408, 0.030841381835560763627,
    0.032883011666885199735, -0.010597401785069032105,
])


def _qmf(h):
    n = np.arange(h.size)
    return ((-1.0) ** n) * h[::-1]


DB4_HIGHPASS = _qmf(DB4_LOWPASS)


@dataclass(frozen=True)
class StftConfig:
    window_len: int = 64
    hop: int = 32
    kept_bins: int = 16

    def __post_init__(self):
        L = self.window_len
        if L < 1 or L & (L - 1):
            raise ValueError("window_len must be a power of two")
        if not 1 <= self.hop <= L:
            raise ValueError("hop must be in [1, window_len]")
        if not 1 <= self.kept_bins <= L // 2 + 1:
            raise ValueError("kept_bins must be in [1, window_len/2 + 1]")


@dataclass(frozen=True)
class DwtConfig:
    levels_j: int = 8
    pre_decimate: int = 2

    def __post_init__(self):
        if self.levels_j < 1:
            raise ValueError("levels_j must be >= 1")
        if self.pre_decimate < 1:
            raise ValueError("pre_decimate must be >= 1")


def hann(n):
    """Periodic Hann window of length ``n``."""
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)


def _frames(x, window_len, hop):
    n_frames = (x.size - window_len) // hop + 1
    idx = hop * np.arange(n_frames)[:, None] + np.arange(window_len)
    return x[idx]


def stft(series, cfg=None, all_bins=False):
    """Power spectrogram ``|DFT(hann * frame)|**2``, shape ``(T, bins)``.

    ``T = (n - window_len) // hop + 1``. Only the first ``kept_bins`` bins
    are returned unless ``all_bins`` is set, in which case the full
    ``window_len`` two-sided spectrum is returned.
    """
    cfg = cfg or StftConfig()
    x = np.asarray(series, dtype=np.float64)
    if x.size < cfg.window_len:
        raise SeriesTooShort(
            f"series length {x.size} < window_len {cfg.window_len}")
    frames = _frames(x, cfg.window_len, cfg.hop) * hann(cfg.window_len)
    if all_bins:
        return np.abs(np.fft.fft(frames, axis=1)) ** 2
    spec = np.abs(np.fft.rfft(frames, axis=1)) ** 2
    return spec[:, :cfg.kept_bins]


# -- wavelets ---------------------------------------------------------------

def _analysis_index(n, taps):
    return (2 * np.arange(n // 2)[:, None] + np.arange(taps)) % n


def dwt_step(x, h=DB4_LOWPASS, g=DB4_HIGHPASS):
    """One periodized analysis step: ``(approximation, detail)``."""
    idx = _analysis_index(x.size, h.size)
    win = x[idx]
    return win @ h, win @ g


def idwt_step(a, d, h=DB4_LOWPASS, g=DB4_HIGHPASS):
    """Synthesis step inverting :func:`dwt_step`."""
    n = 2 * a.size
    idx = _analysis_index(n, h.size)
    x = np.zeros(n)
    np.add.at(x, idx.ravel(), (np.outer(a, h) + np.outer(d, g)).ravel())
    return x


def next_pow2(n):
    return 1 << max(0, int(n - 1).bit_length())


def pad_to_pow2(x, min_len=1):
    """Edge-replicate ``x`` on the right up to a power of two >= min_len."""
    x = np.asarray(x, dtype=np.float64)
    target = max(next_pow2(x.size), next_pow2(min_len))
    return np.pad(x, (0, target - x.size), mode="edge")


def dwt_multilevel(series, cfg=None):
    """Mallat pyramid with periodized db4 filters.

    ``series`` must already be padded to a power-of-two length of at least
    ``2**levels_j`` (see :func:`pad_to_pow2`).

    Returns ``(details, approx)`` where ``details[j-1]`` is the level-``j``
    detail vector of length ``len(series) / 2**j``.
    """
    cfg = cfg or DwtConfig()
    x = np.asarray(series, dtype=np.float64)
    n = x.size
    if n < 2 ** cfg.levels_j:
        raise SegmentTooShort(
            f"padded length {n} < 2**levels_j = {2 ** cfg.levels_j}")
    if n & (n - 1):
        raise SegmentTooShort(f"length {n} is not a power of two")
    details = []
    a = x
    for _ in range(cfg.levels_j):
        a, d = dwt_step(a)
        details.append(d)
    return details, a


def idwt_multilevel(details, approx):
    a = np.asarray(approx, dtype=np.float64)
    for d in reversed(details):
        a = idwt_step(a, d)
    return a


def level_band(level, fs_effective=100.0):
    """Frequency band ``(lo, hi)`` in Hz of DWT detail ``level``."""
    if level < 1:
        raise ValueError("level must be >= 1")
    return fs_effective / 2 ** (level + 1), fs_effective / 2 ** level


def speed_of(freq_hz, carrier_ghz=2.4):
    """Reflector speed (m/s) that produces Doppler ``freq_hz``: f * lambda / 2."""
    if freq_hz < 0 or carrier_ghz <= 0:
        raise ValueError("frequency must be >= 0 and carrier > 0")
    wavelength = SPEED_OF_LIGHT / (carrier_ghz * 1e9)
    return freq_hz * wavelength / 2


# -- grids ------------------------------------------------------------------

def area_average(values, slots, extent=None):
    """Average piecewise-constant ``values`` over ``slots`` equal cells.

    ``values[k]`` is taken to cover ``[k, k+1)`` along the first axis; the
    range ``[0, extent)`` is divided into ``slots`` cells and each cell gets
    the exact mean over its span, so cells may split or straddle samples.
    """
    v = np.asarray(values, dtype=np.float64)
    extent = v.shape[0] if extent is None else float(extent)
    if extent <= 0 or v.shape[0] == 0:
        raise EmptySpectrogram("nothing to average")
    cum = np.concatenate([np.zeros((1,) + v.shape[1:]),
                          np.cumsum(v, axis=0)])
    edges = np.linspace(0.0, extent, slots + 1)
    k = np.minimum(np.floor(edges).astype(int), v.shape[0] - 1)
    frac = (edges - k).reshape((-1,) + (1,) * (v.ndim - 1))
    integral = cum[k] + frac * v[k]
    return np.diff(integral, axis=0) / (extent / slots)


def spectrogram_grid(spec, slots=GRID_SLOTS):
    """Log-power spectrogram resampled to ``slots`` time cells, flattened."""
    spec = np.asarray(spec, dtype=np.float64)
    if spec.ndim != 2 or spec.shape[0] == 0:
        raise EmptySpectrogram("spectrogram has no frames")
    if spec.shape[1] != GRID_SLOTS:
        raise ValueError(f"expected {GRID_SLOTS} frequency bins, "
                         f"got {spec.shape[1]}")
    logp = np.log10(spec + LOG_FLOOR)
    return area_average(logp, slots).ravel()


def wavelet_energy_map(details, n_unpadded=None, slots=GRID_SLOTS,
                       log=True):
    """Per-level wavelet energy density on a grid of time slots.

    The energy ``d_k**2`` of a level-``j`` coefficient is spread evenly over
    the ``2**j`` input samples it summarizes, so each cell holds energy per
    input sample and the cells of one slot sum (over levels) to the mean
    signal power there. Only the unpadded extent (``n_unpadded / 2**j``
    coefficients at level ``j``) is used. Returns shape ``(levels, slots)``.
    """
    n_padded = details[0].size * 2
    n = n_padded if n_unpadded is None else n_unpadded
    rows = []
    for j, d in enumerate(details, start=1):
        rows.append(area_average(d ** 2 / 2 ** j, slots, extent=n / 2 ** j))
    energy = np.vstack(rows)
    return np.log10(energy + LOG_FLOOR) if log else energy


def min_segment_length(stft_cfg=None, dwt_cfg=None):
    stft_cfg = stft_cfg or StftConfig()
    dwt_cfg = dwt_cfg or DwtConfig()
    return max(stft_cfg.window_len, 2 ** dwt_cfg.levels_j)


def assemble_feature_vector(segment, stft_cfg=None, dwt_cfg=None,
                            mode="both"):
    """384-vector for one 200 Hz PC1 segment.

    ``mode`` selects ablations: ``"stft"`` fills the wavelet half and
    ``"dwt"`` the spectrogram half with ``log10(1e-12) = -12``.
    """
    if mode not in FEATURE_MODES:
        raise ValueError(f"mode must be one of {FEATURE_MODES}")
    stft_cfg = stft_cfg or StftConfig()
    dwt_cfg = dwt_cfg or DwtConfig()
    if dwt_cfg.levels_j * GRID_SLOTS != N_DWT_VALUES:
        raise ValueError("the 384-vector layout needs levels_j == 8")
    x = np.asarray(segment, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise NonFiniteInput("segment contains non-finite samples")
    need = min_segment_length(stft_cfg, dwt_cfg)
    if x.size < need:
        raise SegmentTooShort(f"segment length {x.size} < {need}")

    floor = np.log10(LOG_FLOOR)
    if mode == "dwt":
        spec_part = np.full(N_STFT_VALUES, floor)
    else:
        spec_part = spectrogram_grid(stft(x, stft_cfg))
    if mode == "stft":
        wave_part = np.full(N_DWT_VALUES, floor)
    else:
        xd = x[::dwt_cfg.pre_decimate]
        padded = pad_to_pow2(xd, 2 ** dwt_cfg.levels_j)
        details, _ = dwt_multilevel(padded, dwt_cfg)
        wave_part = wavelet_energy_map(details, xd.size).ravel()
    return np.concatenate([spec_part, wave_part])


def ablate(X, mode):
    """Apply a feature mode to already-assembled ``both`` vectors."""
    X = np.array(X, dtype=np.float64, copy=True)
    floor = np.log10(LOG_FLOOR)
    if mode == "stft":
        X[:, N_STFT_VALUES:] = floor
    elif mode == "dwt":
        X[:, :N_STFT_VALUES] = floor
    elif mode != "both":
        raise ValueError(f"mode must be one of {FEATURE_MODES}")
    return X


class TimeFrequencyFeaturizer(TransformerMixin, BaseEstimator):
    """Stateless transformer mapping PC1 segments to 384-feature rows.

    ``X`` is a sequence of 1-D arrays (segments may differ in length).
    """

    def __init__(self, mode="both", window_len=64, hop=32, kept_bins=16,
                 levels_j=8, pre_decimate=2):
        self.mode = mode
        self.window_len = window_len
        self.hop = hop
        self.kept_bins = kept_bins
        self.levels_j = levels_j
        self.pre_decimate = pre_decimate

    def fit(self, X=None, y=None):
        return self

    def transform(self, X):
        stft_cfg = StftConfig(self.window_len, self.hop, self.kept_bins)
        dwt_cfg = DwtConfig(self.levels_j, self.pre_decimate)
        rows = [assemble_feature_vector(seg, stft_cfg, dwt_cfg, self.mode)
                for seg in X]
        return np.vstack(rows) if rows else np.empty((0, N_FEATURES))

    def __sklearn_tags__(self):
        tags = super().__sklearn_tags__()
        tags.requires_fit = False
        return tags
