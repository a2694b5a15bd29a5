"""Measurement utilities: augmentation-stability rate, evaluation metrics,
and rank statistics for the bias-pattern report.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import data as synth
from . import network
from .control import predict_calibrated
from .network import Model

__all__ = [
    "EvalReport",
    "separation_violation_rate",
    "evaluate",
    "spearman_correlation",
    "bias_pattern_report",
]


def separation_violation_rate(model: Model, head: str, samples: np.ndarray, n_aug: int,
                              noise: float, strength: float = synth.DEFAULT_STRONG_STRENGTH,
                              dropout: float = synth.DEFAULT_DROPOUT, seed: int = 0) -> float:
    """Fraction of samples whose predicted class flips under at least one of
    n_aug strong augmentations, relative to the unaugmented prediction.

    Empirical stand-in for the expansion assumption's violation rate; feeds
    the denoising bound 2c/(c-3)*mu.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("samples must be a nonempty (N, D) array")
    if n_aug < 1:
        raise ValueError("n_aug must be >= 1")
    base = network.predict(model, head, x)
    violated = np.zeros(x.shape[0], dtype=bool)
    rng = np.random.default_rng(seed)
    for _ in range(n_aug):
        aug = synth.strong_augment_batch(x, noise, strength, dropout, rng)
        violated |= network.predict(model, head, aug) != base
    return float(violated.mean())


@dataclass(frozen=True)
class EvalReport:
    accuracy: float
    balanced_accuracy: float
    per_class_recall: np.ndarray
    confusion: np.ndarray  # rows: true class, cols: predicted

    def recall_over(self, class_mask: np.ndarray) -> float:
        return float(self.per_class_recall[np.asarray(class_mask, dtype=bool)].mean())


def evaluate(model: Model, test_x: np.ndarray, test_y: np.ndarray,
             head: str = "output", calibrated: bool = False) -> EvalReport:
    """Balanced accuracy is the mean per-class recall; calibrated evaluation
    predicts from the output head's bias-stripped logits."""
    x = np.asarray(test_x, dtype=np.float64)
    y = np.asarray(test_y)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("test set must be nonempty")
    if calibrated:
        preds = predict_calibrated(model, x)
    else:
        preds = network.predict(model, head, x)
    k = model.k
    confusion = np.zeros((k, k), dtype=np.int64)
    np.add.at(confusion, (y, preds), 1)
    row = confusion.sum(axis=1)
    if np.any(row == 0):
        raise ValueError("every class needs at least one test sample")
    recall = np.diag(confusion) / row
    return EvalReport(
        accuracy=float((preds == y).mean()),
        balanced_accuracy=float(recall.mean()),
        per_class_recall=recall,
        confusion=confusion,
    )


def _average_ranks(v: np.ndarray) -> np.ndarray:
    order = np.argsort(v, kind="stable")
    sorted_v = v[order]
    ranks = np.empty(v.size, dtype=np.float64)
    base = np.arange(1, v.size + 1, dtype=np.float64)
    i = 0
    while i < v.size:
        j = i
        while j + 1 < v.size and sorted_v[j + 1] == sorted_v[i]:
            j += 1
        ranks[order[i : j + 1]] = base[i : j + 1].mean()
        i = j + 1
    return ranks


def spearman_correlation(a: np.ndarray, b: np.ndarray) -> float:
    """Rank correlation with average ranks on ties; nan when either vector is
    constant (undefined, reported rather than failed)."""
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise ValueError("inputs must be equal-length vectors of size >= 2")
    if np.all(x == x[0]) or np.all(y == y[0]):
        return float("nan")
    rx = _average_ranks(x)
    ry = _average_ranks(y)
    rx -= rx.mean()
    ry -= ry.mean()
    return float((rx * ry).sum() / np.sqrt((rx * rx).sum() * (ry * ry).sum()))


def bias_pattern_report(model: Model, labeled_counts: np.ndarray) -> dict[str, float]:
    """Spearman correlation of each head's bias vector against the labeled
    class counts: (original, output, expansive)."""
    counts = np.asarray(labeled_counts, dtype=np.float64)
    return {name: spearman_correlation(model.heads[name].b, counts)
            for name in network.HEAD_NAMES}
