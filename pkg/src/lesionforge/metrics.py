"""Task 1 overlap and Task 3 balanced-accuracy metrics."""
from __future__ import annotations

from typing import Sequence

import numpy as np

CLASS_LABELS = ("MEL", "NV", "BCC", "AKIEC", "BKL", "DF", "VASC")
JACCARD_CUTOFF = 0.65


def jaccard(pred: np.ndarray, truth: np.ndarray, thresholded: bool = False) -> float:
    """Intersection over union of two binary masks.

    Two empty masks score 1.0. With ``thresholded`` scores below 0.65 become 0,
    as on the 2018 challenge leaderboard.
    """
    a = np.asarray(pred).astype(bool)
    b = np.asarray(truth).astype(bool)
    if a.shape != b.shape:
        raise ValueError(f"mask dims differ: {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    score = 1.0 if union == 0 else np.count_nonzero(a & b) / union
    if thresholded and score < JACCARD_CUTOFF:
        return 0.0
    return float(score)


def mean_jaccard(pairs, thresholded: bool = False) -> float:
    scores = [jaccard(p, t, thresholded) for p, t in pairs]
    if not scores:
        raise ValueError("no mask pairs to score")
    return float(np.mean(scores))


def confusion_matrix(
    truth: Sequence[str], pred: Sequence[str], labels: Sequence[str] = CLASS_LABELS
) -> np.ndarray:
    """Rows are true classes, columns predicted, in ``labels`` order."""
    index = {c: i for i, c in enumerate(labels)}
    cm = np.zeros((len(labels), len(labels)), dtype=np.int64)
    for t, p in zip(truth, pred, strict=True):
        cm[index[t], index[p]] += 1
    return cm


def per_class_recall(cm: np.ndarray) -> np.ndarray:
    """Recall per row; NaN where a class has no ground-truth samples."""
    cm = np.asarray(cm, dtype=np.float64)
    support = cm.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(support > 0, np.diag(cm) / support, np.nan)


def balanced_accuracy(cm: np.ndarray) -> float:
    """Mean recall over classes that occur in the ground truth."""
    cm = np.asarray(cm)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise ValueError("confusion matrix must be square")
    if np.any(cm < 0):
        raise ValueError("confusion matrix entries must be non-negative")
    recall = per_class_recall(cm)
    present = ~np.isnan(recall)
    if not present.any():
        raise ValueError("confusion matrix has no samples")
    return float(recall[present].mean())
