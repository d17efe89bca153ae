"""Denoising and PCA reduction of a 30-subcarrier CSI stream."""
import warnings
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .errors import DegenerateInputWarning, SeriesTooShort

MAD_SCALE = 1.4826
PCA_TOL = 1e-10
PCA_RESID_TOL = 1e-12
PCA_MAX_ITER = 10_000
HAMPEL_CHUNK = 4096


@dataclass(frozen=True)
class DenoiseConfig:
    hampel_window: int = 11
    hampel_nsigma: float = 3.0
    ma_window: int = 5

    def __post_init__(self):
        if self.hampel_window < 3 or self.hampel_window % 2 == 0:
            raise ValueError("hampel_window must be an odd integer >= 3")
        if self.ma_window < 1:
            raise ValueError("ma_window must be >= 1")


def _as_columns(series):
    x = np.asarray(series, dtype=np.float64)
    return x, (x[:, None] if x.ndim == 1 else x)


def hampel_filter(series, window=11, nsigma=3.0):
    """Replace outliers by the median of their centered window.

    A sample is an outlier when it deviates from the window median by more
    than ``nsigma * 1.4826 * MAD``. Windows are truncated at the edges.
    2-D input is filtered column by column.
    """
    if window < 3 or window % 2 == 0:
        raise ValueError("window must be an odd integer >= 3")
    orig, x = _as_columns(series)
    n = x.shape[0]
    if n < window:
        raise SeriesTooShort(f"series length {n} < window {window}")
    half = window // 2
    med = np.empty_like(x)
    mad = np.empty_like(x)

    wins = sliding_window_view(x, window, axis=0)  # (n-2h, cols, window)
    # odd full windows: the middle order statistic is the exact median
    for s in range(0, wins.shape[0], HAMPEL_CHUNK):
        w = np.partition(wins[s:s + HAMPEL_CHUNK], half, axis=-1)
        m = w[..., half]
        dev = np.partition(np.abs(w - m[..., None]), half, axis=-1)
        med[half + s:half + s + m.shape[0]] = m
        mad[half + s:half + s + m.shape[0]] = dev[..., half]
    for i in list(range(half)) + list(range(n - half, n)):
        w = x[max(0, i - half):i + half + 1]
        mi = np.median(w, axis=0)
        med[i] = mi
        mad[i] = np.median(np.abs(w - mi), axis=0)

    outlier = np.abs(x - med) > nsigma * MAD_SCALE * mad
    y = np.where(outlier, med, x)
    return y.reshape(orig.shape)


def moving_average(series, window=5):
    """Centered moving mean with truncated edge windows (2-D: per column)."""
    if window < 1:
        raise ValueError("window must be >= 1")
    orig, x = _as_columns(series)
    n = x.shape[0]
    if n < window:
        raise SeriesTooShort(f"series length {n} < window {window}")
    left = (window - 1) // 2
    right = window - 1 - left
    # direct sum of shifted copies: no cumulative-sum drift on long traces
    total = x.copy()
    count = np.ones(n)
    for k in range(1, max(left, right) + 1):
        if k <= left:
            total[k:] += x[:-k]
            count[k:] += 1
        if k <= right:
            total[:-k] += x[k:]
            count[:-k] += 1
    y = total / count[:, None]
    return y.reshape(orig.shape)


def pca_first_component(matrix):
    """Leading principal component of an ``n x d`` matrix.

    The covariance eigenvector is found by power iteration on the ``d x d``
    sample covariance, stopped once the Rayleigh quotient changes by less
    than ``1e-10`` (relative) and the eigen-residual ``|Cv - lv|`` drops
    below ``1e-12 * l``.

    Returns
    -------
    scores : ndarray, shape (n,)
        Centered data projected on the loading.
    loading : ndarray, shape (d,)
        Unit-norm eigenvector, signed so its largest-magnitude entry is
        positive.
    explained_ratio : float
        Leading eigenvalue over the covariance trace (0 for constant input).
    """
    X = check_array(matrix, dtype=np.float64)
    n, d = X.shape
    if n < 2:
        raise SeriesTooShort("PCA needs at least 2 rows")
    Xc = X - X.mean(axis=0)
    cov = Xc.T @ Xc / (n - 1)
    total = np.trace(cov)
    if not total > 0:
        warnings.warn("constant input; PCA is undefined",
                      DegenerateInputWarning, stacklevel=2)
        return np.zeros(n), np.full(d, 1.0 / np.sqrt(d)), 0.0

    loading, lam = _power_iteration(cov)
    k = np.argmax(np.abs(loading))
    if loading[k] < 0:
        loading = -loading
    scores = Xc @ loading
    return scores, loading, float(min(max(lam / total, 0.0), 1.0))


def _power_iteration(cov):
    # Start from the column with the largest variance: it has a non-zero
    # component along the top eigenvector unless the matrix is pathological.
    v = cov[:, np.argmax(np.diag(cov))].copy()
    v /= np.linalg.norm(v)
    lam = v @ cov @ v
    for _ in range(PCA_MAX_ITER):
        w = cov @ v
        v_new = w / np.linalg.norm(w)
        w = cov @ v_new
        lam_new = v_new @ w
        resid = np.linalg.norm(w - lam_new * v_new)
        converged = (abs(lam_new - lam) <= PCA_TOL * lam_new
                     and resid <= PCA_RESID_TOL * lam_new)
        v, lam = v_new, lam_new
        if converged:
            break
    return v, float(lam)


def preprocess_amplitudes(amplitudes, config=None):
    """Hampel + moving average on every subcarrier, then PCA.

    Returns ``(pc1, loading, explained_ratio)``.
    """
    cfg = config or DenoiseConfig()
    x = hampel_filter(amplitudes, cfg.hampel_window, cfg.hampel_nsigma)
    x = moving_average(x, cfg.ma_window)
    return pca_first_component(x)


class PC1Transformer(TransformerMixin, BaseEstimator):
    """Denoise a CSI amplitude matrix and project it on its first PC.

    ``fit`` learns the column means and the PCA loading; ``transform``
    denoises new data and projects it with the stored loading, returning an
    ``(n, 1)`` array. ``fit_transform`` on a single trace reproduces
    :func:`preprocess_amplitudes`.
    """

    def __init__(self, hampel_window=11, hampel_nsigma=3.0, ma_window=5):
        self.hampel_window = hampel_window
        self.hampel_nsigma = hampel_nsigma
        self.ma_window = ma_window

    def _config(self):
        return DenoiseConfig(self.hampel_window, self.hampel_nsigma,
                             self.ma_window)

    def _denoise(self, X):
        cfg = self._config()
        X = hampel_filter(X, cfg.hampel_window, cfg.hampel_nsigma)
        return moving_average(X, cfg.ma_window)

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        Xd = self._denoise(X)
        _, self.loading_, self.explained_ratio_ = pca_first_component(Xd)
        self.mean_ = Xd.mean(axis=0)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "loading_")
        X = check_array(X, dtype=np.float64)
        return ((self._denoise(X) - self.mean_) @ self.loading_)[:, None]
