"""Classification metrics and the cross-validation report."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    """Counts with rows = true class, columns = predicted class."""
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true), np.asarray(y_pred)), 1)
    return cm


def metrics(confusion) -> tuple[float, float]:
    """Return ``(accuracy, macro_f1)`` for a confusion matrix.

    Classes with neither support nor predictions are left out of the
    macro average; any other class with no true positives scores F1 = 0.
    """
    cm = np.asarray(confusion)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise ValueError(f"confusion matrix must be square, got shape {cm.shape}")
    if (cm < 0).any():
        raise ValueError("confusion matrix has negative counts")
    total = cm.sum()
    if total == 0:
        raise ValueError("confusion matrix is all zeros")
    tp = np.diag(cm).astype(float)
    support = cm.sum(axis=1).astype(float)
    predicted = cm.sum(axis=0).astype(float)
    present = (support + predicted) > 0
    # F1 = 2TP / (support + predicted) is 2PR/(P+R) without the 0/0 cases
    f1 = np.where(present, 2.0 * tp / np.where(present, support + predicted, 1.0), 0.0)
    return float(tp.sum() / total), float(f1[present].mean())


@dataclass
class FoldResult:
    fold: int
    accuracy: float
    macro_f1: float
    confusion: list[list[int]]
    n_test: int
    best_epoch: int | None = None


@dataclass
class EvalReport:
    mode: str
    classes: list[str]
    folds: list[FoldResult] = field(default_factory=list)

    def add_fold(self, fold: int, y_true, y_pred, best_epoch: int | None = None) -> FoldResult:
        cm = confusion_matrix(y_true, y_pred, len(self.classes))
        acc, f1 = metrics(cm)
        result = FoldResult(fold, acc, f1, cm.tolist(), int(cm.sum()), best_epoch)
        self.folds.append(result)
        return result

    def _stat(self, key: str, fn) -> float:
        return float(fn([getattr(f, key) for f in self.folds]))

    @property
    def mean_accuracy(self) -> float:
        return self._stat("accuracy", np.mean)

    @property
    def mean_macro_f1(self) -> float:
        return self._stat("macro_f1", np.mean)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "classes": self.classes,
            "folds": [f.__dict__ for f in self.folds],
            "mean": {"accuracy": self.mean_accuracy, "macro_f1": self.mean_macro_f1},
            "std": {"accuracy": self._stat("accuracy", np.std), "macro_f1": self._stat("macro_f1", np.std)},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(d["mode"], list(d["classes"]), [FoldResult(**f) for f in d["folds"]])
