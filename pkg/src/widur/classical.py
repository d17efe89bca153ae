"""Classical heads for the hybrid model: an SMO-trained SVM and a CART forest.

Both classifiers take integer labels and report probabilities over a fixed
codebook of ``n_classes`` columns, so heads trained on data that lacks a
class still produce aligned probability vectors.
"""
import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .errors import EmptyDataset, NoConvergence, SingleClass

TAU = 1e-12


def _check_training_labels(y, n_classes):
    y = np.asarray(y)
    if y.size == 0:
        raise EmptyDataset("no training examples")
    y = y.astype(np.int64)
    if y.min() < 0 or y.max() >= n_classes:
        raise ValueError(f"labels must lie in [0, {n_classes})")
    present = np.unique(y)
    if present.size < 2:
        raise SingleClass(f"need at least 2 classes, got {present.tolist()}")
    return y, present


# -- SVM --------------------------------------------------------------------

def linear_kernel(A, B, gamma=None):
    return A @ B.T


def rbf_kernel(A, B, gamma):
    sq = (np.sum(A ** 2, axis=1)[:, None] + np.sum(B ** 2, axis=1)[None, :]
          - 2 * A @ B.T)
    return np.exp(-gamma * np.maximum(sq, 0.0))


KERNELS = {"linear": linear_kernel, "rbf": rbf_kernel}


def smo(K, y, C=1.0, tol=1e-3, max_passes=10_000):
    """Solve the C-SVM dual for a precomputed kernel.

    Working pairs are chosen by maximal violation with second-order gain
    (Fan, Chen & Lin 2005), so the result is a deterministic function of the
    data order. Stops once the KKT gap ``m(a) - M(a)`` drops below ``tol``.

    One pass is ``n`` pair updates, the work of a full sweep over the data;
    at most ``max_passes`` passes are made.

    Returns ``(alpha, b, gap, passes)`` with decision function
    ``sum_t alpha_t y_t K(x_t, x) + b``. Non-convergence is signalled by
    ``gap >= tol``; the caller decides how to react.
    """
    n = y.size
    y = y.astype(np.float64)
    Q = (y[:, None] * y[None, :]) * K
    diag = np.diag(K).copy()
    alpha = np.zeros(n)
    G = -np.ones(n)
    it = 0
    gap = np.inf
    budget = max_passes * n
    while it < budget:
        yG = -y * G
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        low = ((y < 0) & (alpha < C)) | ((y > 0) & (alpha > 0))
        if not up.any() or not low.any():
            gap = 0.0
            break
        i = int(np.argmax(np.where(up, yG, -np.inf)))
        m_val = yG[i]
        M_val = np.min(np.where(low, yG, np.inf))
        gap = m_val - M_val
        if gap < tol:
            break
        cand = low & (yG < m_val)
        b_it = m_val - yG
        a_it = diag[i] + diag - 2.0 * K[i]
        a_it = np.where(a_it > 0, a_it, TAU)
        score = np.where(cand, -(b_it ** 2) / a_it, np.inf)
        j = int(np.argmin(score))

        lam = b_it[j] / a_it[j]
        # feasible step along (y_i, -y_j)
        lo_i, hi_i = ((-alpha[i], C - alpha[i]) if y[i] > 0
                      else (alpha[i] - C, alpha[i]))
        lo_j, hi_j = ((alpha[j] - C, alpha[j]) if y[j] > 0
                      else (-alpha[j], C - alpha[j]))
        lam = min(max(lam, max(lo_i, lo_j)), min(hi_i, hi_j))
        di = y[i] * lam
        dj = -y[j] * lam
        alpha[i] = min(max(alpha[i] + di, 0.0), C)
        alpha[j] = min(max(alpha[j] + dj, 0.0), C)
        G += Q[:, i] * di + Q[:, j] * dj
        it += 1

    free = (alpha > 0) & (alpha < C)
    yG = y * G
    if free.any():
        rho = yG[free].mean()
    else:
        # LIBSVM's midpoint rule when every multiplier sits at a bound
        ub_set = ((y < 0) & (alpha >= C)) | ((y > 0) & (alpha <= 0))
        lb_set = ((y > 0) & (alpha >= C)) | ((y < 0) & (alpha <= 0))
        ub = np.min(yG[ub_set]) if ub_set.any() else np.inf
        lb = np.max(yG[lb_set]) if lb_set.any() else -np.inf
        rho = 0.5 * (ub + lb) if np.isfinite(ub + lb) else 0.0
    return alpha, -float(rho), float(gap), -(-it // n)


class BinarySvm:
    """One trained pairwise machine (classes ``pos`` vs ``neg``)."""

    def __init__(self, pos, neg, support_vectors, dual_coef, intercept,
                 kkt_gap, n_passes):
        self.pos = pos
        self.neg = neg
        self.support_vectors = support_vectors
        self.dual_coef = dual_coef          # alpha_t * y_t
        self.intercept = intercept
        self.kkt_gap = kkt_gap
        self.n_passes = n_passes

    def decision(self, Xs, kernel, gamma):
        if self.dual_coef.size == 0:
            return np.full(Xs.shape[0], self.intercept)
        return kernel(Xs, self.support_vectors, gamma) @ self.dual_coef \
            + self.intercept

    def to_dict(self):
        return {"pos": int(self.pos), "neg": int(self.neg),
                "support_vectors": self.support_vectors.tolist(),
                "dual_coef": self.dual_coef.tolist(),
                "intercept": self.intercept, "kkt_gap": self.kkt_gap,
                "n_passes": self.n_passes}

    @classmethod
    def from_dict(cls, d):
        sv = np.asarray(d["support_vectors"], dtype=np.float64)
        return cls(d["pos"], d["neg"], sv.reshape(len(d["dual_coef"]), -1),
                   np.asarray(d["dual_coef"], dtype=np.float64),
                   d["intercept"], d["kkt_gap"], d["n_passes"])


def vote(decisions, pairs, n_classes):
    """One-vs-one voting. Ties go to the lowest class index.

    ``decisions[:, p] >= 0`` is a vote for ``pairs[p][0]``.
    Returns ``(labels, probs)`` with probs = vote fractions.
    """
    n = decisions.shape[0]
    votes = np.zeros((n, n_classes))
    for p, (a, b) in enumerate(pairs):
        win_a = decisions[:, p] >= 0
        votes[win_a, a] += 1
        votes[~win_a, b] += 1
    labels = np.argmax(votes, axis=1)      # first maximum = lowest index
    probs = votes / votes.sum(axis=1, keepdims=True)
    return labels, probs


class SmoSvmClassifier(ClassifierMixin, BaseEstimator):
    """One-vs-one C-SVM trained with SMO on standardized features.

    Parameters
    ----------
    C : float, default=1.0
    kernel : {"linear", "rbf"}, default="linear"
    gamma : float or "scale", default="scale"
        RBF width; ``"scale"`` means ``1 / (d * mean feature variance)`` of
        the standardized training data.
    tol : float, default=1e-3
        KKT gap at which SMO stops.
    max_passes : int, default=10000
        Limit on SMO passes per binary problem (see :func:`smo`).
    n_classes : int, default=5
        Width of the probability output.
    seed : int, default=0
        Accepted for interface symmetry with the forest; the solver is
        deterministic and does not draw random numbers.
    """

    def __init__(self, C=1.0, kernel="linear", gamma="scale", tol=1e-3,
                 max_passes=10_000, n_classes=5, seed=0):
        self.C = C
        self.kernel = kernel
        self.gamma = gamma
        self.tol = tol
        self.max_passes = max_passes
        self.n_classes = n_classes
        self.seed = seed

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        if X.shape[0] < 2:
            raise EmptyDataset("need at least 2 training examples")
        y, present = _check_training_labels(y, self.n_classes)
        if self.kernel not in KERNELS:
            raise ValueError(f"unknown kernel {self.kernel!r}")
        self.mean_ = X.mean(axis=0)
        std = X.std(axis=0)
        self.scale_ = np.where(std > 0, std, 1.0)
        Xs = (X - self.mean_) / self.scale_
        if self.gamma == "scale":
            var = Xs.var(axis=0).mean()
            self.gamma_ = 1.0 / (X.shape[1] * var) if var > 0 else 1.0
        else:
            self.gamma_ = float(self.gamma)
        kern = KERNELS[self.kernel]
        self.machines_ = []
        for ia, a in enumerate(present):
            for b in present[ia + 1:]:
                mask = (y == a) | (y == b)
                Xp = Xs[mask]
                yp = np.where(y[mask] == a, 1.0, -1.0)
                K = kern(Xp, Xp, self.gamma_)
                alpha, bias, gap, it = smo(K, yp, self.C, self.tol,
                                           self.max_passes)
                if gap >= self.tol:
                    raise NoConvergence((int(a), int(b)), it)
                sv = alpha > 0
                self.machines_.append(BinarySvm(
                    int(a), int(b), Xp[sv], alpha[sv] * yp[sv], bias,
                    gap, it))
        self.classes_ = np.arange(self.n_classes)
        self.n_features_in_ = X.shape[1]
        return self

    @property
    def pairs_(self):
        return [(m.pos, m.neg) for m in self.machines_]

    def decision_function(self, X):
        check_is_fitted(self, "machines_")
        X = check_array(X, dtype=np.float64)
        Xs = (X - self.mean_) / self.scale_
        kern = KERNELS[self.kernel]
        return np.column_stack([m.decision(Xs, kern, self.gamma_)
                                for m in self.machines_])

    def predict_proba(self, X):
        _, probs = vote(self.decision_function(X), self.pairs_,
                        self.n_classes)
        return probs

    def predict(self, X):
        labels, _ = vote(self.decision_function(X), self.pairs_,
                         self.n_classes)
        return labels

    def to_dict(self):
        check_is_fitted(self, "machines_")
        return {"kind": "svm", "version": 1,
                "params": self.get_params(),
                "mean": self.mean_.tolist(), "scale": self.scale_.tolist(),
                "gamma": self.gamma_,
                "machines": [m.to_dict() for m in self.machines_]}

    @classmethod
    def from_dict(cls, d):
        est = cls(**d["params"])
        est.mean_ = np.asarray(d["mean"], dtype=np.float64)
        est.scale_ = np.asarray(d["scale"], dtype=np.float64)
        est.gamma_ = d["gamma"]
        est.machines_ = [BinarySvm.from_dict(m) for m in d["machines"]]
        est.classes_ = np.arange(est.n_classes)
        est.n_features_in_ = est.mean_.size
        return est


# -- random forest ----------------------------------------------------------

class Tree:
    """Flat-array CART tree. Leaves have ``feature == -1``."""

    def __init__(self, feature, threshold, left, right, value):
        self.feature = feature
        self.threshold = threshold
        self.left = left
        self.right = right
        self.value = value

    @property
    def n_nodes(self):
        return self.feature.size

    def apply(self, X):
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        while True:
            feat = self.feature[node]
            inner = feat >= 0
            if not inner.any():
                return node
            go_left = X[rows, np.maximum(feat, 0)] <= self.threshold[node]
            nxt = np.where(go_left, self.left[node], self.right[node])
            node = np.where(inner, nxt, node)

    def predict_proba(self, X):
        return self.value[self.apply(X)]

    def to_dict(self):
        return {"feature": self.feature.tolist(),
                "threshold": self.threshold.tolist(),
                "left": self.left.tolist(), "right": self.right.tolist(),
                "value": self.value.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["feature"], dtype=np.int64),
                   np.asarray(d["threshold"], dtype=np.float64),
                   np.asarray(d["left"], dtype=np.int64),
                   np.asarray(d["right"], dtype=np.int64),
                   np.asarray(d["value"], dtype=np.float64))


def _best_split(X, y_onehot, features):
    """Lowest weighted Gini over ``features``; ``None`` if nothing splits."""
    n = X.shape[0]
    Xf = X[:, features]
    order = np.argsort(Xf, axis=0, kind="stable")
    xs = np.take_along_axis(Xf, order, axis=0)
    counts = np.cumsum(y_onehot[order], axis=0)[:-1]   # (n-1, m, C)
    total = counts[-1] + y_onehot[order[-1]]
    n_left = np.arange(1, n)[:, None]
    n_right = n - n_left
    right = total[None] - counts
    gini_l = 1.0 - np.sum(counts ** 2, axis=2) / n_left ** 2
    gini_r = 1.0 - np.sum(right ** 2, axis=2) / n_right ** 2
    score = (n_left * gini_l + n_right * gini_r) / n
    valid = xs[1:] > xs[:-1]
    if not valid.any():
        return None
    score = np.where(valid, score, np.inf)
    # column-major scan: first feature (in draw order) wins ties
    flat = int(np.argmin(score.T))
    fi, pos = divmod(flat, n - 1)
    thr = 0.5 * (xs[pos, fi] + xs[pos + 1, fi])
    if not thr < xs[pos + 1, fi]:
        thr = xs[pos, fi]
    return int(features[fi]), float(thr)


def build_tree(X, y, n_classes, rng, max_depth=16, min_samples_split=2,
               max_features=None):
    """Grow one CART classification tree depth-first."""
    d = X.shape[1]
    m = d if max_features is None else max(1, min(d, max_features))
    onehot = np.eye(n_classes)[y]
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node(idx):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        counts = onehot[idx].sum(axis=0)
        value.append(counts / counts.sum())
        return len(feature) - 1

    root = new_node(np.arange(X.shape[0]))
    stack = [(root, np.arange(X.shape[0]), 0)]
    while stack:
        node, idx, depth = stack.pop()
        if (depth >= max_depth or idx.size < min_samples_split
                or value[node].max() == 1.0):
            continue
        feats = rng.choice(d, size=m, replace=False)
        split = _best_split(X[idx], onehot[idx], feats)
        if split is None:
            continue
        f, thr = split
        mask = X[idx, f] <= thr
        li, ri = idx[mask], idx[~mask]
        if li.size == 0 or ri.size == 0:
            continue
        feature[node] = f
        threshold[node] = thr
        left[node] = new_node(li)
        right[node] = new_node(ri)
        stack.append((right[node], ri, depth + 1))
        stack.append((left[node], li, depth + 1))
    return Tree(np.asarray(feature, dtype=np.int64),
                np.asarray(threshold, dtype=np.float64),
                np.asarray(left, dtype=np.int64),
                np.asarray(right, dtype=np.int64),
                np.asarray(value, dtype=np.float64))


class CartForestClassifier(ClassifierMixin, BaseEstimator):
    """Bootstrap forest of Gini CART trees.

    Tree ``i`` draws its bootstrap sample and split features from its own
    PCG64 stream seeded with ``seed + i``, so the forest is reproducible and
    trees are independent of each other.
    """

    def __init__(self, n_estimators=100, max_depth=16, min_samples_split=2,
                 max_features="sqrt", bootstrap=True, n_classes=5, seed=0):
        self.n_estimators = n_estimators
        self.max_depth = max_depth
        self.min_samples_split = min_samples_split
        self.max_features = max_features
        self.bootstrap = bootstrap
        self.n_classes = n_classes
        self.seed = seed

    def _n_features_per_split(self, d):
        if self.max_features == "sqrt":
            return max(1, int(np.sqrt(d)))
        if self.max_features is None:
            return d
        return int(self.max_features)

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        y, _ = _check_training_labels(y, self.n_classes)
        n, d = X.shape
        m = self._n_features_per_split(d)
        self.estimators_ = []
        in_bag = np.zeros((self.n_estimators, n), dtype=bool)
        for t in range(self.n_estimators):
            rng = np.random.default_rng(self.seed + t)
            if self.bootstrap:
                idx = rng.integers(0, n, size=n)
            else:
                idx = np.arange(n)
            in_bag[t, idx] = True
            self.estimators_.append(build_tree(
                X[idx], y[idx], self.n_classes, rng, self.max_depth,
                self.min_samples_split, m))
        self.classes_ = np.arange(self.n_classes)
        self.n_features_in_ = d
        self._set_oob(X, y, in_bag)
        return self

    def _set_oob(self, X, y, in_bag):
        votes = np.zeros((X.shape[0], self.n_classes))
        for tree, bag in zip(self.estimators_, in_bag):
            out = ~bag
            if out.any():
                votes[out] += tree.predict_proba(X[out])
        has = votes.sum(axis=1) > 0
        if has.any():
            self.oob_score_ = float(np.mean(
                votes[has].argmax(axis=1) == y[has]))
        else:
            self.oob_score_ = float("nan")

    def predict_proba(self, X):
        check_is_fitted(self, "estimators_")
        X = check_array(X, dtype=np.float64)
        total = np.zeros((X.shape[0], self.n_classes))
        for tree in self.estimators_:
            total += tree.predict_proba(X)
        return total / len(self.estimators_)

    def predict(self, X):
        return self.predict_proba(X).argmax(axis=1)

    def to_dict(self):
        check_is_fitted(self, "estimators_")
        return {"kind": "rf", "version": 1, "params": self.get_params(),
                "n_features": self.n_features_in_,
                "trees": [t.to_dict() for t in self.estimators_]}

    @classmethod
    def from_dict(cls, d):
        est = cls(**d["params"])
        est.estimators_ = [Tree.from_dict(t) for t in d["trees"]]
        est.classes_ = np.arange(est.n_classes)
        est.n_features_in_ = d["n_features"]
        return est
