"""Classification metrics: confusion matrix, precision/recall/F1, ROC-AUC, accuracy.

Binary problems report the positive class (label 1). Multiclass problems
report macro averages over the classes present in the labels; classes
absent from the labels are excluded from the means and listed in
``undefined_classes``.
"""

import json
from dataclasses import asdict, dataclass, field

import numpy as np


@dataclass
class MetricsReport:
    precision: float
    recall: float
    f1: float
    roc_auc: float
    accuracy: float
    per_class: dict = field(default_factory=dict)
    confusion: list = field(default_factory=list)
    undefined_classes: list = field(default_factory=list)

    def to_json(self):
        return json.dumps(asdict(self), indent=2)


def confusion_matrix(labels, predicted, k):
    """``cm[i, j]`` counts samples of true class ``i`` predicted as ``j``."""
    cm = np.zeros((k, k), dtype=np.int64)
    np.add.at(cm, (np.asarray(labels), np.asarray(predicted)), 1)
    return cm


def average_ranks(x):
    """1-based ranks with ties given their mean rank."""
    _, inverse, counts = np.unique(x, return_inverse=True, return_counts=True)
    upper = np.cumsum(counts)
    return (upper - (counts - 1) / 2.0)[inverse]


def roc_auc_binary(scores, positives):
    """Mann-Whitney estimate: P(score_pos > score_neg) + 0.5 P(tie)."""
    scores = np.asarray(scores, dtype=np.float64)
    positives = np.asarray(positives, dtype=bool)
    n_pos = int(positives.sum())
    n_neg = len(positives) - n_pos
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    r = average_ranks(scores)
    return float((r[positives].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def _prf(cm, c):
    tp = cm[c, c]
    fp = cm[:, c].sum() - tp
    fn = cm[c, :].sum() - tp
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else float("nan")
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return float(precision), float(recall), float(f1)


def compute_metrics(probs, labels, num_classes=None):
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    if probs.ndim != 2 or len(probs) != len(labels):
        raise ValueError("probs must be N x k with one label per row")
    if len(labels) == 0:
        raise ValueError("cannot compute metrics on an empty set")
    k = num_classes or probs.shape[1]
    predicted = probs.argmax(axis=1)  # ties -> lowest index
    cm = confusion_matrix(labels, predicted, k)
    present = [c for c in range(k) if cm[c].sum() > 0]
    undefined = [c for c in range(k) if c not in present]

    per_class = {}
    for c in range(k):
        p, r, f = _prf(cm, c)
        auc = roc_auc_binary(probs[:, c], labels == c)
        per_class[str(c)] = {"precision": p, "recall": r, "f1": f, "roc_auc": auc,
                             "support": int(cm[c].sum())}

    if k == 2:
        pos = per_class["1"]
        precision, recall, f1 = pos["precision"], pos["recall"], pos["f1"]
        roc_auc = pos["roc_auc"]
    else:
        precision = float(np.mean([per_class[str(c)]["precision"] for c in present]))
        recall = float(np.mean([per_class[str(c)]["recall"] for c in present]))
        f1 = float(np.mean([per_class[str(c)]["f1"] for c in present]))
        aucs = [per_class[str(c)]["roc_auc"] for c in present if not np.isnan(per_class[str(c)]["roc_auc"])]
        roc_auc = float(np.mean(aucs)) if aucs else float("nan")
    accuracy = float(np.trace(cm) / cm.sum())
    return MetricsReport(precision, recall, f1, roc_auc, accuracy, per_class, cm.tolist(), undefined)
