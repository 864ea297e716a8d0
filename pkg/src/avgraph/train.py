"""Training loop, learning-rate schedule, evaluation metrics and reports."""

from __future__ import annotations

import csv
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import nn
from .diffpool import ArchConfig, AvgNetParams, avgnet_forward
from .signal import Dataset

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 128
    initial_lr: float = 0.001
    lr_decay: float = 0.8
    decay_every: int = 10
    # "epoch": decay every `decay_every` epochs; "batch": every `decay_every` optimiser steps
    decay_unit: str = "epoch"
    m: int = 11
    hidden: int = 64
    clusters: int = 32
    embed_depth: int = 2
    pool_depth: int = 2
    post_depth: int = 1
    conv_bias: bool = True
    share_weights: bool = False
    aux_loss: bool = False
    seed: int = 0

    def __post_init__(self):
        for name in ("epochs", "batch_size", "decay_every", "m", "hidden", "clusters"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.initial_lr <= 0:
            raise ValueError("initial_lr must be positive")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ValueError("lr_decay must lie in (0, 1]")
        if self.decay_unit not in ("epoch", "batch"):
            raise ValueError("decay_unit must be 'epoch' or 'batch'")

    def arch(self, num_classes: int) -> ArchConfig:
        return ArchConfig(
            m=self.m,
            hidden=self.hidden,
            clusters=self.clusters,
            num_classes=num_classes,
            embed_depth=self.embed_depth,
            pool_depth=self.pool_depth,
            post_depth=self.post_depth,
            conv_bias=self.conv_bias,
            share_weights=self.share_weights,
        )

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


def lr_at(index: int, cfg: TrainConfig) -> float:
    """Step-decay schedule: ``initial_lr * lr_decay ** (index // decay_every)``.

    ``index`` counts epochs, or optimiser steps when ``decay_unit`` is
    ``"batch"``.
    """
    if index < 0:
        raise ValueError("index must be >= 0")
    return cfg.initial_lr * cfg.lr_decay ** (index // cfg.decay_every)


# ---------------------------------------------------------------------------
# metrics


@dataclass
class EvalReport:
    accuracy: float
    f1_macro: float
    f1_weighted: float
    recall_macro: float
    recall_weighted: float
    per_snr_accuracy: dict[int, float]
    confusion: np.ndarray
    class_names: tuple[str, ...] = ()

    @property
    def supports(self) -> np.ndarray:
        return self.confusion.sum(axis=1)

    @property
    def total(self) -> int:
        return int(self.confusion.sum())


def confusion_matrix(labels, preds, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    preds = np.asarray(preds, dtype=np.int64)
    return np.bincount(labels * num_classes + preds, minlength=num_classes ** 2).reshape(
        num_classes, num_classes
    )


def scores_from_confusion(confusion: np.ndarray) -> dict[str, float]:
    """Accuracy plus macro/weighted recall and F1; rows are true classes.

    Precision of a never-predicted class is 0, and F1 is 0 when precision
    and recall are both 0.
    """
    cm = np.asarray(confusion, dtype=np.float64)
    tp = np.diag(cm)
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        recall = np.where(support > 0, tp / support, 0.0)
        precision = np.where(predicted > 0, tp / predicted, 0.0)
        f1 = np.where(precision + recall > 0, 2 * precision * recall / (precision + recall), 0.0)
    weights = support / support.sum()
    return {
        "accuracy": float(tp.sum() / cm.sum()),
        "recall_macro": float(recall.mean()),
        "recall_weighted": float(weights @ recall),
        "f1_macro": float(f1.mean()),
        "f1_weighted": float(weights @ f1),
    }


def report_from_predictions(labels, preds, snrs, class_names: Sequence[str]) -> EvalReport:
    labels = np.asarray(labels, dtype=np.int64)
    preds = np.asarray(preds, dtype=np.int64)
    snrs = np.asarray(snrs, dtype=np.int64)
    if labels.size == 0:
        raise ValueError("cannot evaluate an empty dataset")
    cm = confusion_matrix(labels, preds, len(class_names))
    per_snr = {int(s): float(np.mean(preds[snrs == s] == labels[snrs == s])) for s in np.unique(snrs)}
    return EvalReport(per_snr_accuracy=per_snr, confusion=cm, class_names=tuple(class_names),
                      **scores_from_confusion(cm))


def _thread_count() -> int:
    raw = os.environ.get("AVGRAPH_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            log.warning("ignoring non-integer AVGRAPH_THREADS=%r", raw)
    return os.cpu_count() or 1


def predict_logits(signals: np.ndarray, params: AvgNetParams, batch_size: int = 256,
                   threads: int | None = None) -> np.ndarray:
    """Logits for ``(N, 2, n)`` signals; chunks may run on a thread pool."""
    signals = np.asarray(signals)
    chunks = [signals[k:k + batch_size] for k in range(0, len(signals), batch_size)]

    def run(chunk):
        return avgnet_forward(chunk.astype(np.float64), params).data

    threads = threads or _thread_count()
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, chunks))
    else:
        parts = [run(c) for c in chunks]
    if not parts:
        return np.zeros((0, params.arch.num_classes))
    return np.concatenate(parts)


def evaluate(dataset: Dataset, params: AvgNetParams, threads: int | None = None) -> EvalReport:
    if len(dataset) == 0:
        raise ValueError("cannot evaluate an empty dataset")
    if dataset.num_classes != params.arch.num_classes:
        raise ValueError(
            f"dataset has {dataset.num_classes} classes, model predicts {params.arch.num_classes}"
        )
    preds = predict_logits(dataset.signals, params, threads=threads).argmax(axis=1)
    return report_from_predictions(dataset.labels, preds, dataset.snrs, dataset.class_names)


# ---------------------------------------------------------------------------
# training


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_accuracy: float
    lr: float


@dataclass
class TrainResult:
    params: AvgNetParams
    history: list[EpochLog] = field(default_factory=list)
    best_epoch: int = -1

    @property
    def best_val_accuracy(self) -> float:
        return self.history[self.best_epoch].val_accuracy


def _check_compatible(train_ds: Dataset, val_ds: Dataset, cfg: TrainConfig) -> None:
    if len(train_ds) == 0 or len(val_ds) == 0:
        raise ValueError("training and validation sets must be non-empty")
    if train_ds.class_names != val_ds.class_names:
        raise ValueError("training and validation sets have different class names")
    if train_ds.frame_length != val_ds.frame_length:
        raise ValueError("training and validation frame lengths differ")
    if train_ds.frame_length < cfg.m:
        raise ValueError(f"frame length {train_ds.frame_length} is shorter than m={cfg.m}")


def train(
    train_ds: Dataset,
    val_ds: Dataset,
    cfg: TrainConfig,
    on_epoch: Callable[[EpochLog], bool | None] | None = None,
    params: AvgNetParams | None = None,
) -> TrainResult:
    """Mini-batch Adam on mean softmax cross-entropy.

    The training set is reshuffled every epoch from a generator seeded with
    ``cfg.seed``; the last partial batch is kept. After each epoch the
    validation accuracy is logged, and the returned parameters (with their
    optimiser state) are those of the best validation epoch, earliest on ties.
    A truthy return from ``on_epoch`` stops training after that epoch.
    """
    _check_compatible(train_ds, val_ds, cfg)
    if params is None:
        params = AvgNetParams.init(cfg.arch(train_ds.num_classes), cfg.seed)
    store = params.store
    rng = np.random.default_rng(cfg.seed)
    signals = train_ds.signals
    labels = train_ds.labels
    result = TrainResult(params)
    best_store = None
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(train_ds))
        total, seen = 0.0, 0
        lr = lr_at(epoch, cfg)
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            if cfg.decay_unit == "batch":
                lr = lr_at(step, cfg)
            store.zero_grad()
            aux: list | None = [] if cfg.aux_loss else None
            logits = avgnet_forward(signals[idx].astype(np.float64), params, aux)
            loss = nn.softmax_cross_entropy(logits, labels[idx])
            objective = loss
            for term in aux or ():
                objective = nn.add(objective, term)
            objective.backward()
            nn.adam_step(store, store.grads(), lr)
            step += 1
            total += loss.item() * len(idx)
            seen += len(idx)
        val_acc = evaluate(val_ds, params).accuracy
        entry = EpochLog(epoch, total / seen, val_acc, lr)
        result.history.append(entry)
        log.info("epoch %d loss %.4f val_acc %.4f lr %.6g", epoch, entry.train_loss, val_acc, lr)
        if best_store is None or val_acc > result.history[result.best_epoch].val_accuracy:
            result.best_epoch = epoch
            best_store = store.copy()
        if on_epoch is not None and on_epoch(entry):
            break
    result.params = AvgNetParams(best_store, params.arch)
    return result


def sweep_m(train_ds: Dataset, val_ds: Dataset, cfg: TrainConfig, m_values: Sequence[int]) -> list[tuple[int, float]]:
    """Train one model per span ``m``; returns ``(m, best validation accuracy)`` rows."""
    rows = []
    for m in m_values:
        run_cfg = TrainConfig(**{**{k: getattr(cfg, k) for k in cfg.field_names()}, "m": int(m)})
        rows.append((int(m), train(train_ds, val_ds, run_cfg).best_val_accuracy))
    return rows


# ---------------------------------------------------------------------------
# CSV emitters


def write_metrics_log(history: Sequence[EpochLog], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_accuracy", "lr"])
        for e in history:
            w.writerow([e.epoch, repr(e.train_loss), repr(e.val_accuracy), repr(e.lr)])


def write_report(report: EvalReport, out_dir) -> dict[str, Path]:
    """Write ``report.csv``, ``per_snr.csv`` and ``confusion.csv`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"report": out / "report.csv", "per_snr": out / "per_snr.csv", "confusion": out / "confusion.csv"}
    with open(paths["report"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "value"])
        for name in ("accuracy", "f1_macro", "f1_weighted", "recall_macro", "recall_weighted"):
            w.writerow([name, repr(getattr(report, name))])
        w.writerow(["frames", report.total])
    with open(paths["per_snr"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["snr", "accuracy"])
        for snr in sorted(report.per_snr_accuracy):
            w.writerow([snr, repr(report.per_snr_accuracy[snr])])
    names = report.class_names or tuple(str(k) for k in range(len(report.confusion)))
    with open(paths["confusion"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["true\\pred", *names])
        for name, row in zip(names, report.confusion):
            w.writerow([name, *row.tolist()])
    return paths
