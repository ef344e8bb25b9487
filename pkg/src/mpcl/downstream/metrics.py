"""Confusion counts, accuracy, balanced (weighted) accuracy and F1."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from ..exceptions import ShapeError


@dataclass
class ClassMetrics:
    tp: int
    fp: int
    tn: int
    fn: int
    acc: float
    wacc: float | None
    f1: float | None


@dataclass
class MetricsReport:
    task: str
    per_class: dict
    overall: dict
    accuracy: float | None = None
    n: int = 0
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        per_class = {}
        for name, m in self.per_class.items():
            entry = {"wacc": m.wacc, "f1": m.f1, "acc": m.acc,
                     "tp": m.tp, "fp": m.fp, "tn": m.tn, "fn": m.fn}
            per_class[name] = entry
        overall = dict(self.overall)
        if self.accuracy is not None:
            overall["acc"] = self.accuracy
        return {"task": self.task, "n": self.n, "per_class": per_class, "overall": overall,
                "notes": list(self.notes)}


def _binary_counts(pred: np.ndarray, truth: np.ndarray):
    tp = int(np.sum(pred & truth))
    fp = int(np.sum(pred & ~truth))
    tn = int(np.sum(~pred & ~truth))
    fn = int(np.sum(~pred & truth))
    return tp, fp, tn, fn


def class_metrics(tp, fp, tn, fn) -> ClassMetrics:
    pos, neg = tp + fn, tn + fp
    total = pos + neg
    wacc = (tp / pos + tn / neg) / 2 if pos and neg else None
    denom = 2 * tp + fp + fn
    f1 = 2 * tp / denom if denom else None
    return ClassMetrics(tp, fp, tn, fn, (tp + tn) / total, wacc, f1)


def compute_metrics(predictions, labels, task: str = "multiclass", class_names=None,
                    n_classes: int | None = None) -> MetricsReport:
    """Per-class one-vs-rest counts and the derived rates.

    ``overall`` is the unweighted mean across classes of the defined w-ACC
    and F1 values; undefined entries (a class with no positives or no
    negatives) are reported as ``None`` and left out of the mean.
    """
    pred = np.asarray(predictions)
    truth = np.asarray(labels)
    if pred.shape != truth.shape:
        raise ShapeError(f"predictions {pred.shape} and labels {truth.shape} differ in shape")
    if pred.shape[0] == 0:
        raise ShapeError("metrics need at least one sample")
    if task == "multiclass":
        if n_classes is None:
            n_classes = len(class_names) if class_names is not None else int(max(pred.max(), truth.max())) + 1
        pred_bin = pred[:, None] == np.arange(n_classes)[None, :]
        truth_bin = truth[:, None] == np.arange(n_classes)[None, :]
    elif task == "multilabel":
        pred_bin = pred.astype(bool)
        truth_bin = truth.astype(bool)
        n_classes = pred.shape[1]
    else:
        raise ValueError(f"unknown task {task!r}")
    names = list(class_names) if class_names is not None else [str(c) for c in range(n_classes)]
    per_class, notes = {}, []
    for c, name in enumerate(names):
        m = class_metrics(*_binary_counts(pred_bin[:, c], truth_bin[:, c]))
        per_class[name] = m
        if m.wacc is None:
            notes.append(f"class {name!r}: w-ACC undefined (no positives or no negatives)")
        if m.f1 is None:
            notes.append(f"class {name!r}: F1 undefined (never present, never predicted)")
    for note in notes:
        warnings.warn(note, stacklevel=2)
    waccs = [m.wacc for m in per_class.values() if m.wacc is not None]
    f1s = [m.f1 for m in per_class.values() if m.f1 is not None]
    overall = {"wacc": float(np.mean(waccs)) if waccs else None,
               "f1": float(np.mean(f1s)) if f1s else None}
    accuracy = float(np.mean(pred == truth)) if task == "multiclass" else None
    return MetricsReport(task, per_class, overall, accuracy, int(pred.shape[0]), notes)


def _flat(report: MetricsReport) -> dict:
    out = {f"overall.{k}": v for k, v in report.overall.items()}
    if report.accuracy is not None:
        out["acc"] = report.accuracy
    for name, m in report.per_class.items():
        out[f"{name}.wacc"] = m.wacc
        out[f"{name}.f1"] = m.f1
    return out


def summarize_folds(reports) -> tuple[dict, dict]:
    """Mean and (population) standard deviation of every scalar across folds."""
    flats = [_flat(r) for r in reports]
    keys = list(flats[0]) if flats else []
    mean, std = {}, {}
    for key in keys:
        vals = [f[key] for f in flats if f.get(key) is not None]
        mean[key] = float(np.mean(vals)) if vals else None
        std[key] = float(np.std(vals)) if vals else None
    return mean, std
