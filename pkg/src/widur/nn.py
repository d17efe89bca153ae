"""A small 1-D CNN written directly in numpy.

The network maps a 384-feature vector (one input channel) through three
strided "same"-padded convolutions and a stack of dense layers::

    conv1 16x7/2 -> conv2 32x5/2 -> conv3 64x3/2 -> fc1 3072->128
    -> fc2 128->64 -> fc3 64->5 (softmax)

All hidden layers use ReLU. ``fc1`` is the feature layer whose post-ReLU
activations feed the classical heads. Every layer carries a ``frozen`` flag
honoured by :func:`train`.

Training is single-threaded float64 numpy, so a fixed seed reproduces the
same parameters bit for bit.
"""
import base64
import copy
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .csi_model import LABELS
from .errors import EmptyDataset, NonFiniteInput, UnknownLabel

N_CLASSES = len(LABELS)
INPUT_LEN = 384
# (name, in_channels, out_channels, kernel, stride)
CONV_SPECS = (("conv1", 1, 16, 7, 2),
              ("conv2", 16, 32, 5, 2),
              ("conv3", 32, 64, 3, 2))
SOURCE_DENSE = (("fc1", 128), ("fc2", 64), ("fc3", N_CLASSES))
FEATURE_LAYER = "fc1"
CHECKPOINT_FORMAT = "widur-cnn"
CHECKPOINT_VERSION = 1


def _same_padding(length, kernel, stride):
    out = -(-length // stride)
    total = max((out - 1) * stride + kernel - length, 0)
    return out, total // 2, total - total // 2


@dataclass
class Layer:
    name: str
    kind: str                      # "conv" or "dense"
    W: np.ndarray
    b: np.ndarray
    stride: int = 1
    frozen: bool = False

    @property
    def params(self):
        return {"W": self.W, "b": self.b}


@dataclass
class CnnModel:
    """Parameters of the network plus per-layer freeze flags."""
    layers: list
    seed: int = 0
    input_len: int = INPUT_LEN
    meta: dict = field(default_factory=dict)

    def __getitem__(self, name):
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise KeyError(name)

    @property
    def layer_names(self):
        return [layer.name for layer in self.layers]

    @property
    def n_classes(self):
        return self.layers[-1].W.shape[1]

    def copy(self):
        return copy.deepcopy(self)

    def set_frozen(self, names, frozen=True):
        for name in names:
            self[name].frozen = frozen
        return self

    def trainable(self):
        return [layer for layer in self.layers if not layer.frozen]

    def n_params(self):
        return sum(layer.W.size + layer.b.size for layer in self.layers)

    def param_digest(self, names=None):
        """SHA-256 over the raw float64 bytes of the named layers."""
        h = hashlib.sha256()
        for layer in self.layers:
            if names is None or layer.name in names:
                h.update(layer.name.encode())
                h.update(np.ascontiguousarray(layer.W, "<f8").tobytes())
                h.update(np.ascontiguousarray(layer.b, "<f8").tobytes())
        return h.hexdigest()

    def __eq__(self, other):
        if not isinstance(other, CnnModel):
            return NotImplemented
        return (self.layer_names == other.layer_names
                and all(a.frozen == b.frozen
                        and np.array_equal(a.W, b.W)
                        and np.array_equal(a.b, b.b)
                        for a, b in zip(self.layers, other.layers)))

    __hash__ = None


def _dense(name, n_in, n_out, rng):
    W = rng.normal(0.0, np.sqrt(2.0 / n_in), size=(n_in, n_out))
    return Layer(name, "dense", W, np.zeros(n_out))


def init_model(seed=0, dense=SOURCE_DENSE, input_len=INPUT_LEN):
    """He-initialised network; biases start at zero.

    The generator is numpy's PCG64 seeded with ``seed``; draws happen layer
    by layer in network order.
    """
    rng = np.random.default_rng(seed)
    layers = []
    length = input_len
    for name, c_in, c_out, k, s in CONV_SPECS:
        W = rng.normal(0.0, np.sqrt(2.0 / (c_in * k)), size=(c_out, c_in, k))
        layers.append(Layer(name, "conv", W, np.zeros(c_out), stride=s))
        length, _, _ = _same_padding(length, k, s)
    n_in = CONV_SPECS[-1][2] * length
    for name, n_out in dense:
        layers.append(_dense(name, n_in, n_out, rng))
        n_in = n_out
    return CnnModel(layers, seed=seed, input_len=input_len)


# -- forward / backward -----------------------------------------------------

def _conv_forward(x, layer):
    # activations are channels-last: (batch, length, channels)
    c_out, c_in, k = layer.W.shape
    out, pl, pr = _same_padding(x.shape[1], k, layer.stride)
    xp = np.pad(x, ((0, 0), (pl, pr), (0, 0)))
    idx = layer.stride * np.arange(out)[:, None] + np.arange(k)
    cols = xp[:, idx, :].reshape(x.shape[0], out, k * c_in)
    Wm = layer.W.transpose(0, 2, 1).reshape(c_out, k * c_in)
    y = cols @ Wm.T + layer.b
    return y, (cols, xp.shape, pl, idx, x.shape[1])


def _conv_backward(dy, layer, cache, need_dx):
    cols, xp_shape, pl, idx, length = cache
    c_out, c_in, k = layer.W.shape
    B, out, _ = dy.shape
    dy2 = dy.reshape(-1, c_out)
    dW = (dy2.T @ cols.reshape(-1, k * c_in)).reshape(
        c_out, k, c_in).transpose(0, 2, 1)
    db = dy2.sum(axis=0)
    if not need_dx:
        return None, dW, db
    Wm = layer.W.transpose(0, 2, 1).reshape(c_out, k * c_in)
    dcols = (dy @ Wm).reshape(B, out, k, c_in)
    dxp = np.zeros(xp_shape)
    for j in range(k):
        dxp[:, idx[:, j], :] += dcols[:, :, j, :]
    return dxp[:, pl:pl + length, :], dW, db


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _check_input(model, X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != model.input_len:
        raise ValueError(f"expected {model.input_len} features, "
                         f"got {X.shape[1]}")
    if not np.all(np.isfinite(X)):
        raise NonFiniteInput("input contains non-finite values")
    return X


def conv_features(model, X):
    """Flattened conv3 output (the input of the first dense layer)."""
    h = _check_input(model, X)[:, :, None]
    for layer in model.layers:
        if layer.kind != "conv":
            break
        h, _ = _conv_forward(h, layer)
        h = np.maximum(h, 0.0)
    return h.reshape(h.shape[0], -1)


def _forward(model, X, start_dense=None, keep=False):
    """Run the network; returns (logits, fc1 activations, caches)."""
    caches = []
    if start_dense is None:
        h = _check_input(model, X)[:, :, None]
    else:
        h = start_dense
    feat = None
    for i, layer in enumerate(model.layers):
        last = i == len(model.layers) - 1
        if layer.kind == "conv":
            if start_dense is not None:
                continue
            z, cache = _conv_forward(h, layer)
        else:
            if h.ndim == 3:
                caches.append(("flatten", h.shape))
                h = h.reshape(h.shape[0], -1)
            cache = h
            z = h @ layer.W + layer.b
        if last:
            caches.append((layer, cache, None))
            h = z
            break
        a = np.maximum(z, 0.0)
        caches.append((layer, cache, z > 0))
        h = a
        if layer.name == FEATURE_LAYER:
            feat = a
    return h, feat, (caches if keep else None)


def forward(model, x):
    """Forward pass for one vector or a batch.

    Returns ``(logits, probs, fc1_activations)``; a 1-D ``x`` gives 1-D
    outputs.
    """
    single = np.ndim(x) == 1
    logits, feat, _ = _forward(model, x)
    probs = softmax(logits)
    if single:
        return logits[0], probs[0], feat[0]
    return logits, probs, feat


def predict_proba(model, X, batch_size=256):
    X = _check_input(model, X)
    out = [softmax(_forward(model, X[i:i + batch_size])[0])
           for i in range(0, X.shape[0], batch_size)]
    return np.vstack(out)


def feature_activations(model, X, batch_size=256):
    """Post-ReLU activations of the feature layer, shape ``(n, 128)``."""
    X = _check_input(model, X)
    out = [_forward(model, X[i:i + batch_size])[1]
           for i in range(0, X.shape[0], batch_size)]
    return np.vstack(out)


def loss_and_grads(model, X, y, start_dense=None):
    """Mean cross-entropy and gradients for all non-frozen layers.

    Backpropagation stops below the lowest trainable layer.
    """
    loss, grads, _ = _loss_grads(model, X, y, start_dense)
    return loss, grads


def _loss_grads(model, X, y, start_dense=None):
    logits, _, caches = _forward(model, X, start_dense=start_dense,
                                 keep=True)
    B = logits.shape[0]
    p = softmax(logits)
    pred = p.argmax(axis=1)
    loss = -np.mean(np.log(p[np.arange(B), y]))
    grads = {}
    trainable = [i for i, l in enumerate(model.layers) if not l.frozen]
    if not trainable:
        return loss, grads, pred
    lowest = trainable[0]

    d = p
    d[np.arange(B), y] -= 1.0
    d /= B
    for entry in reversed(caches):
        if entry[0] == "flatten":
            d = d.reshape(entry[1])
            continue
        layer, cache, mask = entry
        idx = model.layers.index(layer)
        if mask is not None:
            d = d * mask
        need_dx = idx > lowest
        if layer.kind == "dense":
            if not layer.frozen:
                grads[layer.name] = {"W": cache.T @ d, "b": d.sum(axis=0)}
            if need_dx:
                d = d @ layer.W.T
        else:
            d, dW, db = _conv_backward(d, layer, cache, need_dx)
            if not layer.frozen:
                grads[layer.name] = {"W": dW, "b": db}
        if not need_dx:
            break
    return loss, grads, pred


# -- training ---------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.lr > 0:
            raise ValueError("lr must be > 0")


@dataclass
class TrainHistory:
    loss: list = field(default_factory=list)
    accuracy: list = field(default_factory=list)
    val_accuracy: list = field(default_factory=list)

    def __eq__(self, other):
        return (self.loss == other.loss and self.accuracy == other.accuracy
                and self.val_accuracy == other.val_accuracy)


class Adam:
    def __init__(self, cfg):
        self.cfg = cfg
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, model, grads):
        c = self.cfg
        self.t += 1
        step_size = c.lr / (1.0 - c.beta1 ** self.t)
        inv_bc2 = 1.0 / np.sqrt(1.0 - c.beta2 ** self.t)
        for name in sorted(grads):
            layer = model[name]
            for pname, g in grads[name].items():
                key = (name, pname)
                if key not in self.m:
                    self.m[key] = np.zeros_like(g)
                    self.v[key] = np.zeros_like(g)
                m, v = self.m[key], self.v[key]
                m *= c.beta1
                m += (1.0 - c.beta1) * g
                v *= c.beta2
                g = g * g
                g *= 1.0 - c.beta2
                v += g
                denom = np.sqrt(v)
                denom *= inv_bc2
                denom += c.eps
                np.divide(m, denom, out=denom)
                denom *= step_size
                getattr(layer, pname).__isub__(denom)


def _check_labels(y, n_classes):
    y = np.asarray(y)
    if y.size == 0:
        raise EmptyDataset("no training examples")
    if not np.issubdtype(y.dtype, np.integer):
        raise UnknownLabel("labels must be integer class indices")
    if y.min() < 0 or y.max() >= n_classes:
        raise UnknownLabel(f"labels must lie in [0, {n_classes})")
    return y.astype(np.int64)


def train(model, X, y, cfg=None, X_val=None, y_val=None):
    """Mini-batch Adam on softmax cross-entropy.

    Returns a trained copy and its :class:`TrainHistory`; ``model`` itself is
    left untouched. Frozen layers never change. When every conv layer is
    frozen the conv features are computed once and reused across epochs.
    """
    cfg = cfg or TrainConfig()
    model = model.copy()
    X = _check_input(model, X)
    y = _check_labels(y, model.n_classes)
    if X.shape[0] != y.size:
        raise ValueError("X and y lengths differ")
    history = TrainHistory()
    if not model.trainable():
        history.loss = [float(_mean_loss(model, X, y))] * cfg.epochs
        acc = float(np.mean(predict_proba(model, X).argmax(1) == y))
        history.accuracy = [acc] * cfg.epochs
        return model, history

    convs_frozen = all(l.frozen for l in model.layers if l.kind == "conv")
    cached = conv_features(model, X) if convs_frozen else None
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(cfg)
    n = X.shape[0]
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        total, correct = 0.0, 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            if cached is not None:
                loss, grads, pred = _loss_grads(model, None, y[idx],
                                                start_dense=cached[idx])
            else:
                loss, grads, pred = _loss_grads(model, X[idx], y[idx])
            total += loss * idx.size
            correct += int(np.sum(pred == y[idx]))
            opt.step(model, grads)
        # running figures over the epoch's mini-batches
        history.loss.append(float(total / n))
        history.accuracy.append(correct / n)
        if X_val is not None:
            vp = predict_proba(model, X_val).argmax(1)
            history.val_accuracy.append(float(np.mean(vp == y_val)))
    return model, history


def _mean_loss(model, X, y):
    p = predict_proba(model, X)
    return -np.mean(np.log(p[np.arange(y.size), y]))


# -- verification -----------------------------------------------------------

def grad_check(model, x, y, epsilon=1e-5, n_params=100, seed=0):
    """Max relative error between backprop and central differences.

    ``n_params`` parameters are drawn uniformly from the trainable layers;
    the error of one parameter is ``|g_bp - g_fd| / max(|g_bp| + |g_fd|,
    1e-8)``.
    """
    model = model.copy()
    X = np.atleast_2d(np.asarray(x, dtype=np.float64))
    Y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    _, grads = loss_and_grads(model, X, Y)
    slots = [(layer.name, pname, arr.size)
             for layer in model.trainable()
             for pname, arr in layer.params.items()]
    sizes = np.array([s[2] for s in slots])
    total = sizes.sum()
    rng = np.random.default_rng(seed)
    picks = rng.choice(total, size=min(n_params, total), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    worst = 0.0
    for flat in np.sort(picks):
        s = np.searchsorted(offsets, flat, side="right") - 1
        name, pname, _ = slots[s]
        arr = getattr(model[name], pname).reshape(-1)
        j = flat - offsets[s]
        orig = arr[j]
        arr[j] = orig + epsilon
        lp = _mean_loss(model, X, Y)
        arr[j] = orig - epsilon
        lm = _mean_loss(model, X, Y)
        arr[j] = orig
        g_fd = (lp - lm) / (2 * epsilon)
        g_bp = grads[name][pname].reshape(-1)[j]
        err = abs(g_bp - g_fd) / max(abs(g_bp) + abs(g_fd), 1e-8)
        worst = max(worst, err)
    return float(worst)


# -- checkpoints ------------------------------------------------------------

def _encode(a):
    return base64.b64encode(np.ascontiguousarray(a, "<f8").tobytes()).decode()


def _decode(s, shape):
    return np.frombuffer(base64.b64decode(s), dtype="<f8").reshape(
        shape).astype(np.float64)


def model_to_dict(model):
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "seed": model.seed,
        "input_len": model.input_len,
        "meta": model.meta,
        "layers": [{
            "name": l.name, "kind": l.kind, "stride": l.stride,
            "frozen": l.frozen,
            "W_shape": list(l.W.shape), "b_shape": list(l.b.shape),
            "W": _encode(l.W), "b": _encode(l.b),
        } for l in model.layers],
    }


def model_from_dict(obj):
    if obj.get("format") != CHECKPOINT_FORMAT:
        raise ValueError("not a widur CNN checkpoint")
    if obj.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {obj.get('version')}")
    layers = [Layer(d["name"], d["kind"], _decode(d["W"], d["W_shape"]),
                    _decode(d["b"], d["b_shape"]), d["stride"], d["frozen"])
              for d in obj["layers"]]
    return CnnModel(layers, seed=obj["seed"], input_len=obj["input_len"],
                    meta=obj.get("meta", {}))


def save_model(model, path):
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh)
        fh.write("\n")


def load_model(path):
    with open(path) as fh:
        return model_from_dict(json.load(fh))


class CnnClassifier(ClassifierMixin, BaseEstimator):
    """scikit-learn wrapper around :func:`init_model` and :func:`train`.

    ``y`` holds integer class indices in ``range(5)`` (see
    :data:`widur.csi_model.LABELS`); ``classes_`` is always the full
    codebook so probability columns line up across datasets.
    """

    def __init__(self, epochs=30, batch_size=32, learning_rate=1e-3,
                 seed=0):
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.seed = seed

    def fit(self, X, y, X_val=None, y_val=None):
        X = check_array(X, dtype=np.float64)
        cfg = TrainConfig(epochs=self.epochs, batch_size=self.batch_size,
                          lr=self.learning_rate, seed=self.seed)
        self.model_, self.history_ = train(init_model(self.seed), X, y, cfg,
                                           X_val, y_val)
        self.classes_ = np.arange(N_CLASSES)
        self.n_features_in_ = X.shape[1]
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        return predict_proba(self.model_, check_array(X, dtype=np.float64))

    def predict(self, X):
        return self.classes_[self.predict_proba(X).argmax(axis=1)]

    def transform(self, X):
        check_is_fitted(self, "model_")
        return feature_activations(self.model_,
                                   check_array(X, dtype=np.float64))
