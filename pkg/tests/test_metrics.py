import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from widur.errors import EmptyInput, LengthMismatch
from widur.metrics import accuracy, confusion_matrix, macro_f1


def test_accuracy_identical():
    assert accuracy([0, 1, 2, 3, 4], [0, 1, 2, 3, 4]) == 1.0


def test_accuracy_disjoint():
    assert accuracy([1, 2, 3], [0, 0, 0]) == 0.0


def test_accuracy_fixture():
    assert accuracy([0, 1, 1, 2], [0, 1, 2, 2]) == 0.75


def test_macro_f1_two_class_fixture():
    # class 0: tp 1, fn 1 -> f1 2/3; class 1: tp 2, fp 1 -> f1 4/5
    got = macro_f1([0, 1, 1, 1], [0, 0, 1, 1], num_classes=2)
    assert got == (2 / 3 + 4 / 5) / 2
    assert got == pytest.approx(0.7333333333333333, abs=1e-15)


def test_macro_f1_perfect():
    y = np.arange(5).repeat(3)
    assert macro_f1(y, y) == 1.0


def test_macro_f1_absent_class_excluded():
    # class 4 is neither present nor predicted: mean over 2 classes
    assert macro_f1([0, 1], [0, 1], num_classes=5) == 1.0


def test_macro_f1_predicted_but_absent_class_does_not_count():
    # class 2 only appears as a false positive
    got = macro_f1([0, 2], [0, 1], num_classes=3)
    assert got == pytest.approx((1.0 + 0.0) / 2)


def test_confusion_rows_are_truth():
    cm = confusion_matrix([1, 1, 0], [0, 1, 0], num_classes=2)
    assert cm.tolist() == [[1, 1], [0, 1]]


def test_length_mismatch():
    with pytest.raises(LengthMismatch):
        accuracy([0, 1], [0])
    with pytest.raises(LengthMismatch):
        macro_f1([0, 1], [0])


def test_empty():
    with pytest.raises(EmptyInput):
        accuracy([], [])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4)),
                min_size=1, max_size=40))
def test_metric_ranges_and_confusion_totals(pairs):
    preds, truth = map(np.array, zip(*pairs))
    cm = confusion_matrix(preds, truth)
    assert cm.sum() == len(pairs)
    assert np.array_equal(cm.sum(axis=1), np.bincount(truth, minlength=5))
    assert 0 <= accuracy(preds, truth) <= 1
    assert 0 <= macro_f1(preds, truth) <= 1
    assert accuracy(preds, truth) == np.trace(cm) / len(pairs)
