"""Threshold-free ranking metrics for rare binary events.

Both metrics treat tied scores as one group, so they depend on the scores
only through their ordering.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class MetricError(ValueError):
    """Raised when a metric is undefined for the given labels."""


@dataclass
class ScoredPredictions:
    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        self.labels = np.asarray(self.labels).reshape(-1).astype(np.int64)
        if self.scores.shape != self.labels.shape:
            raise ValueError(f"{self.scores.size} scores but {self.labels.size} labels")
        if self.scores.size == 0:
            raise ValueError("no predictions")
        if not np.all(np.isfinite(self.scores)):
            raise ValueError("scores must be finite")
        if not np.all((self.labels == 0) | (self.labels == 1)):
            raise ValueError("labels must be 0 or 1")

    @property
    def n_pos(self) -> int:
        return int(self.labels.sum())

    @property
    def n_neg(self) -> int:
        return int(self.labels.size - self.labels.sum())

    @property
    def prior(self) -> float:
        return self.n_pos / self.labels.size


def _tie_groups(scores, labels):
    """Positive and negative counts per distinct score, ascending by score."""
    _, inv = np.unique(scores, return_inverse=True)
    pos = np.bincount(inv, weights=labels, minlength=inv.max() + 1).astype(np.int64)
    tot = np.bincount(inv, minlength=inv.max() + 1).astype(np.int64)
    return pos, tot - pos


def auroc(scores, labels=None) -> float:
    """Mann-Whitney AUROC: (concordant + tied/2) / (positives * negatives)."""
    sp = scores if isinstance(scores, ScoredPredictions) else ScoredPredictions(scores, labels)
    n_pos, n_neg = sp.n_pos, sp.n_neg
    if n_pos == 0 or n_neg == 0:
        raise MetricError(f"AUROC needs both classes (positives={n_pos}, negatives={n_neg})")
    pos, neg = _tie_groups(sp.scores, sp.labels)
    neg_below = np.concatenate([[0], np.cumsum(neg)[:-1]])
    concordant = int(np.dot(pos, neg_below))
    tied = int(np.dot(pos, neg))
    return (concordant + 0.5 * tied) / (n_pos * n_neg)


def auprc(scores, labels=None) -> float:
    """Average precision, sum over tie groups of recall increment * precision."""
    sp = scores if isinstance(scores, ScoredPredictions) else ScoredPredictions(scores, labels)
    n_pos = sp.n_pos
    if n_pos == 0:
        raise MetricError("AUPRC needs at least one positive")
    pos, neg = _tie_groups(sp.scores, sp.labels)
    pos, neg = pos[::-1], neg[::-1]
    tp = np.cumsum(pos)
    fp = np.cumsum(neg)
    precision = tp / (tp + fp)
    return float(np.sum(pos * precision) / n_pos)
