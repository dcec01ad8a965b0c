"""Classification metrics: confusion matrix, class-wise ACC/F1, weighted F1.

Class-wise ACC is the per-class recall (diagonal over row sum); overall ACC
is trace over total; weighted F1 averages per-class F1 with class supports
as weights. Zero-support or zero-prediction classes contribute F1 = 0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np


@dataclass
class MetricsReport:
    classes: list[str]
    confusion: np.ndarray  # rows: true label, cols: predicted
    class_acc: np.ndarray
    class_f1: np.ndarray
    accuracy: float
    weighted_f1: float

    def to_dict(self) -> dict:
        return {
            "classes": self.classes,
            "confusion": self.confusion.tolist(),
            "class_acc": [round(float(x), 6) for x in self.class_acc],
            "class_f1": [round(float(x), 6) for x in self.class_f1],
            "accuracy": round(float(self.accuracy), 6),
            "weighted_f1": round(float(self.weighted_f1), 6),
        }

    def json_line(self) -> str:
        return json.dumps(self.to_dict())

    def table(self) -> str:
        width = max(len(c) for c in self.classes + ["overall"]) + 2
        lines = [f"{'class':<{width}}{'ACC':>8}{'F1':>8}"]
        for i, c in enumerate(self.classes):
            lines.append(f"{c:<{width}}{self.class_acc[i] * 100:>8.2f}{self.class_f1[i] * 100:>8.2f}")
        lines.append(f"{'overall':<{width}}{self.accuracy * 100:>8.2f}{'':>8}")
        lines.append(f"{'w-F1':<{width}}{self.weighted_f1 * 100:>8.2f}{'':>8}")
        return "\n".join(lines)


def confusion_matrix(y_true: np.ndarray, y_pred: np.ndarray, num_classes: int) -> np.ndarray:
    matrix = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(matrix, (np.asarray(y_true, dtype=np.int64), np.asarray(y_pred, dtype=np.int64)), 1)
    return matrix


def report_from_confusion(matrix: np.ndarray, classes: list[str]) -> MetricsReport:
    matrix = np.asarray(matrix, dtype=np.int64)
    support = matrix.sum(axis=1)
    predicted = matrix.sum(axis=0)
    diag = np.diag(matrix).astype(np.float64)
    total = matrix.sum()

    class_acc = np.divide(diag, support, out=np.zeros_like(diag), where=support > 0)
    precision = np.divide(diag, predicted, out=np.zeros_like(diag), where=predicted > 0)
    pr_sum = precision + class_acc
    class_f1 = np.divide(2 * precision * class_acc, pr_sum, out=np.zeros_like(diag), where=pr_sum > 0)

    accuracy = float(diag.sum() / total) if total else 0.0
    weighted_f1 = float((class_f1 * support).sum() / support.sum()) if support.sum() else 0.0
    return MetricsReport(
        classes=list(classes),
        confusion=matrix,
        class_acc=class_acc,
        class_f1=class_f1,
        accuracy=accuracy,
        weighted_f1=weighted_f1,
    )


def compute_metrics(y_true: np.ndarray, y_pred: np.ndarray, classes: list[str]) -> MetricsReport:
    return report_from_confusion(confusion_matrix(y_true, y_pred, len(classes)), classes)
