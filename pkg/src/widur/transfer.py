"""Source pre-training, conv-frozen fine-tuning, and hybrid heads.

The transfer recipe: train the full CNN on the source domain; keep its
convolutional trunk frozen; cut the network after ``fc1``; attach a fresh
128->5 softmax head and fine-tune ``fc1`` plus that head on target data;
then optionally train a classical classifier on the fine-tuned ``fc1``
activations.
"""
import json
import os
from dataclasses import asdict, dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import nn
from .classical import CartForestClassifier, SmoSvmClassifier
from .csi_model import LABELS
from .errors import (ConfigError, EmptyDataset, FrozenViolation,
                     SingleClass)
from .metrics import accuracy, confusion_matrix, macro_f1
from .pipeline import stratified_split

HEAD_KINDS = ("none", "svm", "rf")
CONV_LAYERS = tuple(spec[0] for spec in nn.CONV_SPECS)
HEAD_LAYER = "head"
HEAD_SEED_OFFSET = 1000


@dataclass(frozen=True)
class TransferConfig:
    finetune_epochs: int = 15
    finetune_lr: float = 1e-4
    head_kind: str = "svm"
    batch_size: int = 32
    seed: int = 0
    svm_C: float = 1.0
    svm_kernel: str = "linear"
    rf_trees: int = 100
    feature_layer: str = nn.FEATURE_LAYER

    def __post_init__(self):
        if self.finetune_epochs < 1:
            raise ConfigError("finetune_epochs must be >= 1")
        if not self.finetune_lr > 0:
            raise ConfigError("finetune_lr must be > 0")
        if self.head_kind not in HEAD_KINDS:
            raise ConfigError(f"head_kind must be one of {HEAD_KINDS}")
        if self.feature_layer != nn.FEATURE_LAYER:
            raise ConfigError("only fc1 can serve as the feature layer")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")


def evaluate(preds, truth):
    """Accuracy, macro-F1 and confusion matrix as plain JSON types."""
    return {"accuracy": accuracy(preds, truth),
            "macro_f1": macro_f1(preds, truth),
            "confusion": confusion_matrix(preds, truth).tolist()}


def pretrain_source(X, y, train_cfg=None, val_fraction=0.1):
    """Train the full network on source data with a seeded held-out split.

    Returns ``(model, report)`` where ``report`` holds the held-out metrics
    and the training history.
    """
    train_cfg = train_cfg or nn.TrainConfig()
    y = np.asarray(y)
    missing = [LABELS[c] for c in range(len(LABELS)) if not np.any(y == c)]
    if missing:
        raise EmptyDataset(f"source data has no examples of {missing}")
    tr, te = stratified_split(y, val_fraction, train_cfg.seed)
    model, hist = nn.train(nn.init_model(train_cfg.seed), X[tr], y[tr],
                           train_cfg)
    preds = nn.predict_proba(model, X[te]).argmax(axis=1)
    report = {"heldout": evaluate(preds, y[te]),
              "n_train": int(tr.size), "n_heldout": int(te.size),
              "history": {"loss": hist.loss, "accuracy": hist.accuracy}}
    return model, report


def conv_digest(model):
    return model.param_digest(CONV_LAYERS)


def attach_fresh_head(pretrained, seed):
    """Copy of ``pretrained`` cut after fc1, with a new seeded 128->5 head.

    Conv layers come out frozen; fc1 and the head are trainable.
    """
    fc1 = pretrained[nn.FEATURE_LAYER]
    rng = np.random.default_rng(seed)
    n_in = fc1.W.shape[1]
    head = nn.Layer(HEAD_LAYER, "dense",
                    rng.normal(0.0, np.sqrt(2.0 / n_in),
                               size=(n_in, nn.N_CLASSES)),
                    np.zeros(nn.N_CLASSES))
    keep = [layer for layer in pretrained.copy().layers
            if layer.kind == "conv" or layer.name == nn.FEATURE_LAYER]
    trunk = nn.CnnModel(keep + [head], seed=pretrained.seed,
                        input_len=pretrained.input_len,
                        meta=dict(pretrained.meta))
    for layer in trunk.layers:
        layer.frozen = layer.kind == "conv"
    return trunk


def transfer_finetune(pretrained, X, y, cfg=None):
    """Fine-tune fc1 and a fresh softmax head on target data.

    Raises :class:`FrozenViolation` if the conv parameters changed, which
    would mean the freeze mechanism is broken.
    """
    cfg = cfg or TransferConfig()
    y = np.asarray(y)
    if y.size == 0:
        raise EmptyDataset("no target examples")
    if np.unique(y).size < 2:
        raise SingleClass("fine-tuning needs at least 2 target classes")
    trunk = attach_fresh_head(pretrained, cfg.seed + HEAD_SEED_OFFSET)
    before = conv_digest(pretrained)
    tcfg = nn.TrainConfig(epochs=cfg.finetune_epochs,
                          batch_size=cfg.batch_size, lr=cfg.finetune_lr,
                          seed=cfg.seed)
    trunk, _ = nn.train(trunk, X, y, tcfg)
    if conv_digest(trunk) != before:
        raise FrozenViolation("conv parameters changed during fine-tuning")
    trunk.meta["conv_sha256"] = before
    return trunk


def make_head(kind, seed=0, cfg=None):
    cfg = cfg or TransferConfig(head_kind=kind)
    if kind == "svm":
        return SmoSvmClassifier(C=cfg.svm_C, kernel=cfg.svm_kernel,
                                seed=seed)
    if kind == "rf":
        return CartForestClassifier(n_estimators=cfg.rf_trees, seed=seed)
    raise ConfigError(f"no classical head for kind {kind!r}")


@dataclass
class HybridModel:
    """Fine-tuned trunk plus an optional classical head on fc1."""
    trunk: nn.CnnModel
    head_kind: str = "none"
    head: object = None
    labels: tuple = LABELS

    def predict_proba(self, X):
        if self.head_kind == "none":
            return nn.predict_proba(self.trunk, X)
        return self.head.predict_proba(nn.feature_activations(self.trunk, X))

    def predict(self, X):
        return self.predict_proba(X).argmax(axis=1)

    def head_dict(self):
        if self.head is None:
            return {"kind": "none", "version": 1}
        return self.head.to_dict()


def fit_head(trunk, X, y, head_kind="svm", seed=0, cfg=None):
    """Train the classical head on fc1 activations of target data."""
    if head_kind not in HEAD_KINDS:
        raise ConfigError(f"head_kind must be one of {HEAD_KINDS}")
    if head_kind == "none":
        return HybridModel(trunk, "none", None)
    feats = nn.feature_activations(trunk, X)
    head = make_head(head_kind, seed, cfg).fit(feats, y)
    return HybridModel(trunk, head_kind, head)


def hybrid_predict(model, x):
    """Label and 5-class probabilities for one feature vector."""
    probs = model.predict_proba(np.asarray(x, dtype=np.float64)[None, :])[0]
    return int(np.argmax(probs)), probs


def head_from_dict(d):
    kind = d.get("kind")
    if kind == "svm":
        return SmoSvmClassifier.from_dict(d)
    if kind == "rf":
        return CartForestClassifier.from_dict(d)
    if kind == "none":
        return None
    raise ValueError(f"unknown head kind {kind!r}")


def save_hybrid(model, out_dir):
    """Write ``trunk.ckpt`` and ``head.json`` into ``out_dir``."""
    os.makedirs(out_dir, exist_ok=True)
    nn.save_model(model.trunk, os.path.join(out_dir, "trunk.ckpt"))
    with open(os.path.join(out_dir, "head.json"), "w") as fh:
        json.dump(model.head_dict(), fh)
        fh.write("\n")


def load_hybrid(out_dir):
    trunk = nn.load_model(os.path.join(out_dir, "trunk.ckpt"))
    with open(os.path.join(out_dir, "head.json")) as fh:
        d = json.load(fh)
    return HybridModel(trunk, d.get("kind", "none"), head_from_dict(d))


class TransferHybridClassifier(ClassifierMixin, BaseEstimator):
    """Fine-tune a pre-trained CNN on target data and fit a head.

    Parameters
    ----------
    pretrained : CnnModel
        Source-domain network; it is never modified.
    head : {"none", "svm", "rf"}
    finetune_epochs, finetune_lr, seed
        See :class:`TransferConfig`.
    """

    def __init__(self, pretrained=None, head="svm", finetune_epochs=15,
                 finetune_lr=1e-4, seed=0):
        self.pretrained = pretrained
        self.head = head
        self.finetune_epochs = finetune_epochs
        self.finetune_lr = finetune_lr
        self.seed = seed

    def _config(self):
        return TransferConfig(finetune_epochs=self.finetune_epochs,
                              finetune_lr=self.finetune_lr,
                              head_kind=self.head, seed=self.seed)

    def fit(self, X, y):
        if self.pretrained is None:
            raise ConfigError("a pre-trained model is required")
        X = check_array(X, dtype=np.float64)
        cfg = self._config()
        trunk = transfer_finetune(self.pretrained, X, y, cfg)
        self.model_ = fit_head(trunk, X, y, cfg.head_kind, cfg.seed, cfg)
        self.classes_ = np.arange(nn.N_CLASSES)
        self.n_features_in_ = X.shape[1]
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        return self.model_.predict_proba(check_array(X, dtype=np.float64))

    def predict(self, X):
        return self.predict_proba(X).argmax(axis=1)

    def transform(self, X):
        check_is_fitted(self, "model_")
        return nn.feature_activations(self.model_.trunk,
                                      check_array(X, dtype=np.float64))


def config_dict(cfg):
    return asdict(cfg)
