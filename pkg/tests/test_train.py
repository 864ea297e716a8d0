import csv

import numpy as np
import pytest

from avgraph.signal import synthesize_dataset, split_stratified
from avgraph.train import (
    TrainConfig,
    confusion_matrix,
    evaluate,
    lr_at,
    report_from_predictions,
    scores_from_confusion,
    train,
    write_metrics_log,
    write_report,
)

SMALL = dict(m=3, hidden=8, clusters=4, batch_size=16)


@pytest.fixture(scope="module")
def tiny():
    ds = synthesize_dataset(["BPSK", "AMDSB"], [10, 14], 12, 32, seed=3)
    return split_stratified(ds, 0.75, seed=0)


def test_lr_schedule_epoch_units():
    cfg = TrainConfig()
    assert lr_at(0, cfg) == pytest.approx(0.001)
    assert lr_at(9, cfg) == pytest.approx(0.001)
    assert lr_at(10, cfg) == pytest.approx(0.0008)
    assert lr_at(20, cfg) == pytest.approx(0.00064)
    with pytest.raises(ValueError):
        lr_at(-1, cfg)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(decay_unit="step")
    with pytest.raises(ValueError):
        TrainConfig(lr_decay=1.5)
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)


def test_two_class_metrics():
    cm = np.array([[8, 2], [3, 7]])
    s = scores_from_confusion(cm)
    assert s["accuracy"] == pytest.approx(0.75)
    assert s["recall_macro"] == pytest.approx(0.75)
    p0, r0, p1, r1 = 8 / 11, 0.8, 7 / 9, 0.7
    f1 = (2 * p0 * r0 / (p0 + r0) + 2 * p1 * r1 / (p1 + r1)) / 2
    assert s["f1_macro"] == pytest.approx(f1)
    assert s["f1_macro"] == pytest.approx(0.7494, abs=1e-4)


def test_confusion_matrix_counts():
    cm = confusion_matrix([0, 0, 1, 2, 2], [0, 1, 1, 2, 0], 3)
    assert cm.tolist() == [[1, 1, 0], [0, 1, 0], [1, 0, 1]]


def test_perfect_predictions():
    labels = np.array([0, 1, 2, 2, 1])
    rep = report_from_predictions(labels, labels, [0, 0, 2, 2, 4], ["a", "b", "c"])
    for name in ("accuracy", "f1_macro", "f1_weighted", "recall_macro", "recall_weighted"):
        assert getattr(rep, name) == 1.0
    assert sorted(rep.per_snr_accuracy) == [0, 2, 4]


def test_never_predicted_class_scores_zero():
    s = scores_from_confusion(np.array([[5, 0], [5, 0]]))
    assert s["recall_macro"] == pytest.approx(0.5)
    assert s["f1_macro"] == pytest.approx((2 * 0.5 / 1.5) / 2)


def test_metrics_invariant_to_reordering(rng):
    labels = rng.integers(0, 4, 60)
    preds = rng.integers(0, 4, 60)
    snrs = rng.choice([-2, 0, 2], 60)
    perm = rng.permutation(60)
    a = report_from_predictions(labels, preds, snrs, "abcd")
    b = report_from_predictions(labels[perm], preds[perm], snrs[perm], "abcd")
    assert a.f1_macro == pytest.approx(b.f1_macro)
    assert a.per_snr_accuracy == pytest.approx(b.per_snr_accuracy)
    np.testing.assert_array_equal(a.confusion, b.confusion)


def test_training_is_deterministic(tiny):
    tr, va = tiny
    cfg = TrainConfig(epochs=2, seed=7, **SMALL)
    a, b = train(tr, va, cfg), train(tr, va, cfg)
    assert [e.train_loss for e in a.history] == [e.train_loss for e in b.history]
    for name in a.params.store.names():
        np.testing.assert_array_equal(a.params.store[name].data, b.params.store[name].data)


def test_best_epoch_is_earliest_maximum(tiny):
    tr, va = tiny
    res = train(tr, va, TrainConfig(epochs=4, seed=1, **SMALL))
    accs = [e.val_accuracy for e in res.history]
    assert res.best_epoch == accs.index(max(accs))
    assert evaluate(va, res.params).accuracy == pytest.approx(res.best_val_accuracy)


def test_batch_unit_decay(tiny):
    tr, va = tiny
    cfg = TrainConfig(epochs=2, decay_every=1, decay_unit="batch", **SMALL)
    res = train(tr, va, cfg)
    steps_per_epoch = -(-len(tr) // cfg.batch_size)
    assert res.history[-1].lr == pytest.approx(lr_at(2 * steps_per_epoch - 1, cfg))


def test_loss_decreases_on_easy_task(tiny):
    tr, va = tiny
    res = train(tr, va, TrainConfig(epochs=6, initial_lr=0.01, **SMALL))
    assert res.history[-1].train_loss < res.history[0].train_loss


def test_incompatible_sets_rejected(tiny):
    tr, _ = tiny
    other = synthesize_dataset(["BPSK", "QPSK"], [10], 2, 32, seed=0)
    with pytest.raises(ValueError):
        train(tr, other, TrainConfig(epochs=1, **SMALL))
    with pytest.raises(ValueError):
        train(tr, tr, TrainConfig(epochs=1, **{**SMALL, "m": 64}))


def test_csv_outputs(tmp_path, tiny):
    tr, va = tiny
    res = train(tr, va, TrainConfig(epochs=2, **SMALL))
    write_metrics_log(res.history, tmp_path / "m.csv")
    rows = list(csv.reader(open(tmp_path / "m.csv")))
    assert rows[0] == ["epoch", "train_loss", "val_accuracy", "lr"]
    assert len(rows) == 3
    paths = write_report(evaluate(va, res.params), tmp_path / "rep")
    conf = list(csv.reader(open(paths["confusion"])))
    assert conf[0][1:] == ["BPSK", "AMDSB"]
    assert sum(int(v) for row in conf[1:] for v in row[1:]) == len(va)
    per_snr = list(csv.reader(open(paths["per_snr"])))
    assert [r[0] for r in per_snr[1:]] == ["10", "14"]


def test_callback_can_stop_early(tiny):
    tr, va = tiny
    res = train(tr, va, TrainConfig(epochs=5, **SMALL), on_epoch=lambda e: e.epoch == 1)
    assert len(res.history) == 2
