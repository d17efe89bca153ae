import numpy as np
import pytest

from widur import nn
from widur.errors import ConfigError, EmptyDataset, SingleClass
from widur.pipeline import domain_dataset, stratified_split
from widur.synth import make_transfer_benchmark
from widur.transfer import (HEAD_LAYER, TransferConfig,
                            TransferHybridClassifier, attach_fresh_head,
                            conv_digest, fit_head, hybrid_predict,
                            load_hybrid, pretrain_source, save_hybrid,
                            transfer_finetune)


@pytest.fixture(scope="module")
def small_task():
    bench = make_transfer_benchmark(1, scale=0.2)
    XA, yA = domain_dataset(bench["A"])
    XB, yB = domain_dataset(bench["B"])
    source, report = pretrain_source(XA, yA, nn.TrainConfig(epochs=8,
                                                            seed=1))
    return source, report, XB, yB


@pytest.fixture(scope="module")
def trunk(small_task):
    source, _, XB, yB = small_task
    return transfer_finetune(source, XB, yB, TransferConfig(seed=1))


def test_pretrain_report(small_task):
    _, report, _, _ = small_task
    assert report["n_train"] + report["n_heldout"] == 300
    assert 0 <= report["heldout"]["accuracy"] <= 1
    assert len(report["history"]["loss"]) == 8


def test_pretrain_missing_class():
    X = np.zeros((8, 384))
    with pytest.raises(EmptyDataset, match="undress"):
        pretrain_source(X, np.array([0, 1, 2, 4] * 2))


def test_fresh_head_layout(small_task):
    source = small_task[0]
    t = attach_fresh_head(source, 7)
    assert t.layer_names == ["conv1", "conv2", "conv3", "fc1", HEAD_LAYER]
    assert t[HEAD_LAYER].W.shape == (128, 5)
    assert [l.frozen for l in t.layers] == [True] * 3 + [False] * 2
    assert np.array_equal(attach_fresh_head(source, 7)[HEAD_LAYER].W,
                          t[HEAD_LAYER].W)
    assert np.array_equal(t["fc1"].W, source["fc1"].W)


def test_freeze_contract(small_task, trunk):
    source = small_task[0]
    assert conv_digest(trunk) == conv_digest(source)
    assert trunk.meta["conv_sha256"] == conv_digest(source)
    assert not np.array_equal(trunk["fc1"].W, source["fc1"].W)


def test_source_model_untouched(small_task):
    source, _, XB, yB = small_task
    before = source.copy()
    transfer_finetune(source, XB, yB, TransferConfig(finetune_epochs=1))
    assert source == before


def test_zero_epochs_rejected():
    with pytest.raises(ConfigError):
        TransferConfig(finetune_epochs=0)
    with pytest.raises(ConfigError):
        TransferConfig(head_kind="knn")


def test_single_target_class_rejected(small_task):
    source = small_task[0]
    with pytest.raises(SingleClass):
        transfer_finetune(source, np.zeros((4, 384)), np.zeros(4, int))


def test_head_none_is_softmax(small_task, trunk):
    XB = small_task[2]
    model = fit_head(trunk, XB, small_task[3], "none")
    assert np.array_equal(model.predict(XB),
                          nn.predict_proba(trunk, XB).argmax(axis=1))


def test_svm_head_seed_invariant(small_task, trunk):
    _, _, XB, yB = small_task
    a = fit_head(trunk, XB, yB, "svm", seed=0)
    b = fit_head(trunk, XB, yB, "svm", seed=123)
    for ma, mb in zip(a.head.machines_, b.head.machines_):
        assert np.array_equal(ma.support_vectors, mb.support_vectors)


@pytest.mark.parametrize("kind", ["none", "svm", "rf"])
def test_hybrid_predict_probabilities(small_task, trunk, kind):
    _, _, XB, yB = small_task
    model = fit_head(trunk, XB, yB, kind, seed=0)
    label, probs = hybrid_predict(model, XB[0])
    assert probs.shape == (5,) and abs(probs.sum() - 1) <= 1e-12
    assert np.all((probs >= 0) & (probs <= 1)) and label == probs.argmax()
    assert hybrid_predict(model, XB[0])[0] == label


@pytest.mark.parametrize("kind", ["none", "svm", "rf"])
def test_bundle_round_trip(small_task, trunk, kind, tmp_path):
    _, _, XB, yB = small_task
    model = fit_head(trunk, XB, yB, kind, seed=0)
    save_hybrid(model, tmp_path)
    back = load_hybrid(tmp_path)
    assert np.array_equal(back.predict_proba(XB), model.predict_proba(XB))


def test_estimator_wrapper(small_task):
    source, _, XB, yB = small_task
    tr, te = stratified_split(yB, 0.5, 0)
    clf = TransferHybridClassifier(source, head="svm", seed=1)
    clf.fit(XB[tr], yB[tr])
    assert clf.predict(XB[te]).shape == te.shape
    assert clf.transform(XB[te]).shape == (te.size, 128)
    assert clf.get_params()["head"] == "svm"
    with pytest.raises(ConfigError):
        TransferHybridClassifier().fit(XB, yB)
