"""Classification metrics: accuracy, macro precision/recall/F1, multiclass MCC."""

from __future__ import annotations

import numpy as np


def confusion_matrix(labels, predictions, n_classes: int | None = None) -> np.ndarray:
    y = np.asarray(labels, dtype=np.int64)
    p = np.asarray(predictions, dtype=np.int64)
    if y.shape != p.shape:
        raise ValueError("labels and predictions must have equal length")
    c = n_classes if n_classes is not None else int(max(y.max(initial=0), p.max(initial=0)) + 1)
    cm = np.zeros((c, c), dtype=np.int64)
    np.add.at(cm, (y, p), 1)
    return cm


def mcc(cm: np.ndarray) -> float:
    """Matthews correlation from a full confusion matrix (rows = truth)."""
    cm = np.asarray(cm, dtype=np.float64)
    s = cm.sum()
    c = np.trace(cm)
    t = cm.sum(axis=1)
    p = cm.sum(axis=0)
    denom = np.sqrt((s * s - p @ p) * (s * s - t @ t))
    if denom == 0:
        return 0.0
    return float((c * s - t @ p) / denom)


def compute_metrics(predictions, labels, n_classes: int | None = None) -> dict[str, float]:
    """Accuracy, macro-averaged precision/recall/F1 and MCC.

    Macro averages run over the classes that occur in either labels or
    predictions; a class with no predicted (or true) rows scores 0 precision
    (or recall).
    """
    cm = confusion_matrix(labels, predictions, n_classes)
    present = np.flatnonzero(cm.sum(axis=0) + cm.sum(axis=1))
    tp = np.diag(cm).astype(np.float64)[present]
    pred_tot = cm.sum(axis=0)[present].astype(np.float64)
    true_tot = cm.sum(axis=1)[present].astype(np.float64)
    prec = np.divide(tp, pred_tot, out=np.zeros_like(tp), where=pred_tot > 0)
    rec = np.divide(tp, true_tot, out=np.zeros_like(tp), where=true_tot > 0)
    f1 = np.divide(2 * prec * rec, prec + rec, out=np.zeros_like(tp), where=(prec + rec) > 0)
    return {
        "accuracy": float(np.trace(cm) / cm.sum()),
        "precision": float(prec.mean()),
        "recall": float(rec.mean()),
        "f1": float(f1.mean()),
        "mcc": mcc(cm),
    }


def macro_f1(labels, predictions) -> float:
    return compute_metrics(predictions, labels)["f1"]


def accuracy(labels, predictions) -> float:
    return float(np.mean(np.asarray(labels) == np.asarray(predictions)))
