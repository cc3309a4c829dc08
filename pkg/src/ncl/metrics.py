"""Ranking and agreement metrics: AUROC, AUPRC and linear-weighted kappa."""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata

from .exceptions import DataError


def _binary(scores, labels):
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise DataError(f"scores and labels differ in length: {scores.shape} vs {labels.shape}")
    y = labels > 0
    if y.all() or not y.any():
        raise DataError("AUROC/AUPRC need both classes present")
    return scores, y


def auroc(scores, labels) -> float:
    """Probability a random positive outscores a random negative; ties count one half.

    Computed from mid-ranks, which is the concordant-pair fraction without
    the quadratic pair loop.
    """
    scores, y = _binary(scores, labels)
    ranks = rankdata(scores)  # average ranks for ties
    n_pos = y.sum()
    n_neg = len(y) - n_pos
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def auprc(scores, labels) -> float:
    """Step-wise area under the precision-recall curve (average precision).

    Thresholds run over distinct scores from high to low; precision at each
    threshold is weighted by the recall it adds.
    """
    scores, y = _binary(scores, labels)
    order = np.argsort(-scores, kind="mergesort")
    s, yy = scores[order], y[order]
    tp = np.cumsum(yy)
    fp = np.cumsum(~yy)
    last = np.r_[np.nonzero(np.diff(s))[0], len(s) - 1]
    tp, fp = tp[last], fp[last]
    precision = tp / (tp + fp)
    recall = tp / y.sum()
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def linear_weighted_kappa(pred_bins, true_bins, n_classes=10) -> float:
    """Cohen's kappa with weights ``|i - j| / (K - 1)``."""
    pred = np.asarray(pred_bins).astype(np.int64).ravel()
    true = np.asarray(true_bins).astype(np.int64).ravel()
    if pred.size == 0:
        raise DataError("kappa of an empty input")
    if pred.shape != true.shape:
        raise DataError("pred and true bins differ in length")
    if min(pred.min(), true.min()) < 0 or max(pred.max(), true.max()) >= n_classes:
        raise DataError(f"bins must lie in 0..{n_classes - 1}")
    observed = np.zeros((n_classes, n_classes))
    np.add.at(observed, (true, pred), 1.0)
    observed /= observed.sum()
    expected = np.outer(observed.sum(axis=1), observed.sum(axis=0))
    idx = np.arange(n_classes)
    weights = np.abs(idx[:, None] - idx[None, :]) / (n_classes - 1)
    denom = (weights * expected).sum()
    if denom == 0:
        # both raters constant and equal
        return 1.0
    return float(1.0 - (weights * observed).sum() / denom)
