"""Evaluation metrics: MAE, MRE (ratio of sums), AUROC, AUPRC.

MRE uses the ratio-of-sums convention sum|truth - est| / sum|truth|, under
which an all-zero estimator on standardized data scores exactly 1. AUROC is
the Mann-Whitney statistic (ties count half); AUPRC is average precision
with step interpolation, processing tied scores as one group.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ContractError, DegenerateInputError, UndefinedMetricError


@dataclass(frozen=True)
class EvalPairs:
    """Aligned truth/estimate arrays, optionally with labels and scores."""

    truths: np.ndarray
    estimates: np.ndarray
    labels: Optional[np.ndarray] = None
    scores: Optional[np.ndarray] = None

    def __post_init__(self):
        t = np.asarray(self.truths, dtype=np.float64)
        e = np.asarray(self.estimates, dtype=np.float64)
        if t.shape != e.shape or t.ndim != 1:
            raise ContractError("truths and estimates must be equal-length 1-D arrays")
        if t.size == 0:
            raise DegenerateInputError("EvalPairs must be non-empty")
        object.__setattr__(self, "truths", t)
        object.__setattr__(self, "estimates", e)


def mae(truths: Sequence[float], estimates: Sequence[float]) -> float:
    truths = np.asarray(truths, dtype=np.float64)
    estimates = np.asarray(estimates, dtype=np.float64)
    if truths.size == 0 or truths.shape != estimates.shape:
        raise DegenerateInputError("mae needs non-empty, equal-length inputs")
    return float(np.mean(np.abs(truths - estimates)))


def mre(truths: Sequence[float], estimates: Sequence[float]) -> float:
    truths = np.asarray(truths, dtype=np.float64)
    estimates = np.asarray(estimates, dtype=np.float64)
    if truths.size == 0 or truths.shape != estimates.shape:
        raise DegenerateInputError("mre needs non-empty, equal-length inputs")
    denom = np.sum(np.abs(truths))
    if denom == 0.0:
        raise UndefinedMetricError("mre undefined: sum |truth| is zero")
    return float(np.sum(np.abs(truths - estimates)) / denom)


def _check_labels(labels, scores):
    labels = np.asarray(labels)
    scores = np.asarray(scores, dtype=np.float64)
    if labels.shape != scores.shape or labels.ndim != 1 or labels.size == 0:
        raise DegenerateInputError("labels and scores must be non-empty 1-D and aligned")
    if not np.all((labels == 0) | (labels == 1)):
        raise ContractError("labels must be 0 or 1")
    return labels.astype(np.int64), scores


def auroc(labels: Sequence[int], scores: Sequence[float]) -> float:
    """Mann-Whitney formulation via average ranks; ties contribute 1/2."""
    labels, scores = _check_labels(labels, scores)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("auroc undefined: both classes required")

    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(labels.size, dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < labels.size:
        j = i
        while j + 1 < labels.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0  # average 1-based rank
        i = j + 1

    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auprc(labels: Sequence[int], scores: Sequence[float]) -> float:
    """Average precision over descending thresholds, tied scores as one group."""
    labels, scores = _check_labels(labels, scores)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise UndefinedMetricError("auprc undefined: no positive labels")

    order = np.argsort(-scores, kind="mergesort")
    sorted_scores = scores[order]
    sorted_labels = labels[order]

    ap = 0.0
    tp = 0
    fp = 0
    recall_prev = 0.0
    i = 0
    while i < labels.size:
        j = i
        while j + 1 < labels.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        tp += int(sorted_labels[i : j + 1].sum())
        fp += int(j - i + 1 - sorted_labels[i : j + 1].sum())
        recall = tp / n_pos
        precision = tp / (tp + fp)
        ap += (recall - recall_prev) * precision
        recall_prev = recall
        i = j + 1
    return float(ap)
