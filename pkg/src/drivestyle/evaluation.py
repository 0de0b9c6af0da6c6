"""Segmentation scoring against ground truth."""
import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import LengthMismatch


def confusion(truth, pred) -> np.ndarray:
    truth, pred = np.asarray(truth), np.asarray(pred)
    if truth.shape != pred.shape:
        raise LengthMismatch(f"{len(pred)} predicted labels vs {len(truth)} true labels")
    c = np.zeros((pred.max() + 1, truth.max() + 1), dtype=np.int64)
    np.add.at(c, (pred, truth), 1)
    return c


def matched_accuracy(truth, pred) -> float:
    """Accuracy under the best one-to-one matching of predicted to true
    labels; unmatched predicted clusters count as errors."""
    c = confusion(truth, pred)
    rows, cols = linear_sum_assignment(-c)
    return float(c[rows, cols].sum() / c.sum())


def label_switches(labels) -> int:
    labels = np.asarray(labels)
    return int(np.count_nonzero(labels[1:] != labels[:-1]))


def occupied(labels) -> int:
    return int(np.unique(labels).size)
