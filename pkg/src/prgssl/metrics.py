"""Evaluation metrics. Rates are fractions in [0, 1]; percent formatting is left to callers."""

from dataclasses import dataclass, field

import numpy as np


def confusion_matrix(y_true, y_pred, k: int) -> np.ndarray:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    return np.bincount(y_true * k + y_pred, minlength=k * k).reshape(k, k)


def accuracy(confusion) -> float:
    confusion = np.asarray(confusion)
    total = confusion.sum()
    if total == 0:
        raise ValueError("accuracy of an empty confusion matrix")
    return float(np.trace(confusion) / total)


def per_class_precision_recall(confusion):
    """Precision per predicted column and recall per true row; empty rows/columns give 0."""
    confusion = np.asarray(confusion, dtype=float)
    diag = np.diag(confusion)
    col = confusion.sum(axis=0)
    row = confusion.sum(axis=1)
    precision = np.divide(diag, col, out=np.zeros_like(diag), where=col > 0)
    recall = np.divide(diag, row, out=np.zeros_like(diag), where=row > 0)
    return precision, recall


def gm_score(recall) -> float:
    recall = np.asarray(recall, dtype=float)
    if np.any(recall <= 0):
        return 0.0
    return float(np.exp(np.mean(np.log(recall))))


def pseudo_label_error_rates(hidden_labels, pseudo_labels, accepted, k: int):
    """Per true class, the error rate among accepted pseudo-labels.

    Classes with no accepted sample report 1.0 and are flagged in the second
    return value (no coverage).
    """
    hidden_labels = np.asarray(hidden_labels, dtype=np.int64)
    pseudo_labels = np.asarray(pseudo_labels, dtype=np.int64)
    accepted = np.asarray(accepted, dtype=bool)
    y = hidden_labels[accepted]
    wrong = (pseudo_labels[accepted] != y)
    n = np.bincount(y, minlength=k)
    errors = np.bincount(y, weights=wrong.astype(float), minlength=k)
    uncovered = n == 0
    rates = np.divide(errors, n, out=np.ones(k), where=~uncovered)
    return rates, uncovered


@dataclass
class MetricRecord:
    iteration: int
    test_accuracy: float
    gm_score: float
    per_class_precision: np.ndarray
    per_class_recall: np.ndarray
    pseudo_error_per_class: np.ndarray
    accepted_fraction: float
    tracking_symmetry_score: float
    pseudo_uncovered: np.ndarray = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "test_accuracy": self.test_accuracy,
            "gm": self.gm_score,
            "accepted_fraction": self.accepted_fraction,
            "recall": [float(v) for v in self.per_class_recall],
            "precision": [float(v) for v in self.per_class_precision],
            "pseudo_error": [float(v) for v in self.pseudo_error_per_class],
            "pseudo_uncovered": [bool(v) for v in self.pseudo_uncovered]
            if self.pseudo_uncovered is not None else None,
            "symmetry": self.tracking_symmetry_score,
        }


def csv_header(k: int) -> str:
    cols = ["iteration", "test_accuracy", "gm", "accepted_fraction"]
    cols += [f"recall_{i + 1}" for i in range(k)]
    cols += [f"precision_{i + 1}" for i in range(k)]
    cols += [f"pseudo_err_{i + 1}" for i in range(k)]
    cols.append("symmetry")
    return ",".join(cols)


def csv_row(rec: MetricRecord) -> str:
    vals = [rec.test_accuracy, rec.gm_score, rec.accepted_fraction]
    vals += list(rec.per_class_recall) + list(rec.per_class_precision)
    vals += list(rec.pseudo_error_per_class)
    vals.append(rec.tracking_symmetry_score)
    return ",".join([str(rec.iteration)] + [f"{float(v):.6f}" for v in vals])
