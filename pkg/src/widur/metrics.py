"""Classification metrics on integer class labels."""
import numpy as np

from .errors import EmptyInput, LengthMismatch


def _pair(preds, truth):
    preds = np.asarray(preds).ravel()
    truth = np.asarray(truth).ravel()
    if preds.size != truth.size:
        raise LengthMismatch(f"{preds.size} predictions for "
                             f"{truth.size} labels")
    if truth.size == 0:
        raise EmptyInput("no labels")
    return preds, truth


def accuracy(preds, truth):
    preds, truth = _pair(preds, truth)
    return float(np.mean(preds == truth))


def confusion_matrix(preds, truth, num_classes=5):
    """``cm[i, j]`` counts samples of true class ``i`` predicted as ``j``."""
    preds, truth = _pair(preds, truth)
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (truth.astype(int), preds.astype(int)), 1)
    return cm


def per_class_f1(cm):
    tp = np.diag(cm).astype(float)
    denom = cm.sum(axis=0) + cm.sum(axis=1)  # 2tp + fp + fn
    with np.errstate(invalid="ignore", divide="ignore"):
        f1 = np.where(denom > 0, 2 * tp / denom, 0.0)
    return f1


def macro_f1(preds, truth, num_classes=5):
    """Unweighted mean F1 over the classes that occur in ``truth``.

    A class with no true positives, false positives or false negatives
    contributes nothing; a present class that is never predicted correctly
    scores 0.
    """
    cm = confusion_matrix(preds, truth, num_classes)
    present = cm.sum(axis=1) > 0
    return float(per_class_f1(cm)[present].mean())
