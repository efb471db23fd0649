"""Sequence-level detection metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata


class UndefinedMetricError(ValueError):
    """The metric needs both normal and anomalous examples."""


@dataclass(frozen=True)
class ScoredSet:
    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        y = np.asarray(self.labels).reshape(-1)
        if s.shape != y.shape:
            raise ValueError(f"{len(s)} scores but {len(y)} labels")
        if not np.all(np.isin(y, (0, 1))):
            raise ValueError("labels must be 0 or 1")
        if not np.all(np.isfinite(s)):
            raise ValueError("scores must be finite")
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "labels", y.astype(np.int64))

    def require_both_classes(self) -> None:
        pos = int(self.labels.sum())
        if pos == 0 or pos == len(self.labels):
            raise UndefinedMetricError("metric is undefined without both classes present")


def _scored(s, labels) -> ScoredSet:
    return s if isinstance(s, ScoredSet) else ScoredSet(s, labels)


def auroc(s, labels=None) -> float:
    """Area under the ROC curve via the rank-sum statistic; ties count one half."""
    s = _scored(s, labels)
    s.require_both_classes()
    ranks = rankdata(s.scores)  # average ranks handle ties
    pos = s.labels == 1
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def best_f1(s, labels=None) -> float:
    """Best F1 over thresholds at each distinct score; anomalous iff score >= threshold.

    Defined whenever there is at least one positive (all-positive sets score 1).
    """
    s = _scored(s, labels)
    if not s.labels.any():
        raise UndefinedMetricError("best F1 is undefined without anomalous examples")
    order = np.argsort(-s.scores, kind="stable")
    scores, y = s.scores[order], s.labels[order]
    tp = np.cumsum(y)
    # a threshold at a score includes every tied element, so evaluate at the last index of each tie run
    last = np.r_[np.flatnonzero(np.diff(scores) != 0), len(scores) - 1]
    tp = tp[last]
    predicted = last + 1
    total_pos = y.sum()
    f1 = 2.0 * tp / (predicted + total_pos)
    return float(f1.max())
