"""Detection metrics where a LOW score means anomalous.

Scores are window probabilities, so ranking by ascending score is ranking by
descending anomaly.  Labels are truthy for attack steps.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ciota.errors import InvalidInput, UndefinedMetric


def _prepare(scores: Sequence[float], labels: Sequence[bool]) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=bool)
    if s.shape != y.shape or s.ndim != 1:
        raise InvalidInput(f"scores and labels must be equal-length 1-d sequences ({s.shape} vs {y.shape})")
    if np.isnan(s).any():
        raise InvalidInput("scores contain NaN")
    return s, y


def roc_points(scores: Sequence[float], labels: Sequence[bool]) -> list[tuple[float, float, float]]:
    """(threshold, fpr, tpr) for every distinct score, flagging ``score <= threshold``.

    The first point is (-inf, 0, 0): nothing flagged.
    """
    s, y = _prepare(scores, labels)
    pos = int(y.sum())
    neg = y.size - pos
    if pos == 0 or neg == 0:
        raise UndefinedMetric("ROC needs both benign and attack labels")
    order = np.argsort(s, kind="mergesort")
    s, y = s[order], y[order]
    tp = np.cumsum(y)
    fp = np.cumsum(~y)
    # last index of each run of tied scores
    last = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    pts = [(float("-inf"), 0.0, 0.0)]
    pts.extend((float(s[i]), float(fp[i] / neg), float(tp[i] / pos)) for i in last)
    return pts


def compute_auc(scores: Sequence[float], labels: Sequence[bool]) -> float:
    """Trapezoidal area under the ROC curve."""
    pts = roc_points(scores, labels)
    fpr = np.array([p[1] for p in pts])
    tpr = np.array([p[2] for p in pts])
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


def compute_avprc(scores: Sequence[float], labels: Sequence[bool]) -> float:
    """Average precision: precision at each threshold weighted by the recall gained there."""
    s, y = _prepare(scores, labels)
    pos = int(y.sum())
    if pos == 0:
        raise UndefinedMetric("average precision needs at least one attack label")
    order = np.argsort(s, kind="mergesort")
    s, y = s[order], y[order]
    tp = np.cumsum(y)
    last = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    tp_t = tp[last]
    flagged = last + 1
    precision = tp_t / flagged
    recall = tp_t / pos
    gain = np.diff(np.r_[0.0, recall])
    return float(np.sum(gain * precision))


def rates_at(scores: Sequence[float], labels: Sequence[bool], threshold: float) -> tuple[Optional[float], Optional[float]]:
    """(tpr, fpr) when flagging ``score < threshold``; a rate is None when its class is empty."""
    s, y = _prepare(scores, labels)
    flagged = s < threshold
    pos = int(y.sum())
    neg = y.size - pos
    tpr = float((flagged & y).sum() / pos) if pos else None
    fpr = float((flagged & ~y).sum() / neg) if neg else None
    return tpr, fpr


@dataclass
class EvalResult:
    threshold: float
    tpr: Optional[float]
    fpr: Optional[float]
    auc: Optional[float] = None
    average_precision: Optional[float] = None
    curve: list[tuple[float, float, float]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "tpr": self.tpr,
            "fpr": self.fpr,
            "auc": self.auc,
            "average_precision": self.average_precision,
        }


def evaluate(scores: Sequence[float], labels: Sequence[bool], threshold: float) -> EvalResult:
    tpr, fpr = rates_at(scores, labels, threshold)
    res = EvalResult(threshold, tpr, fpr)
    if tpr is not None and fpr is not None:
        res.auc = compute_auc(scores, labels)
        res.average_precision = compute_avprc(scores, labels)
        res.curve = roc_points(scores, labels)
    return res


def window_labels(mask: Sequence[bool], k: int) -> list[bool]:
    """Per-transition labels for window scores.

    Transition ``t`` (from record ``t`` to ``t+1``) is an attack transition when
    either endpoint is an attack record; the score after ``t`` is labeled
    attack when its window of the last ``k`` transitions holds one.
    """
    if k <= 0:
        raise InvalidInput("window size must be positive")
    m = np.asarray(mask, dtype=bool)
    if m.size < 2:
        return []
    attack_t = m[:-1] | m[1:]
    c = np.r_[0, np.cumsum(attack_t)]
    idx = np.arange(attack_t.size)
    lo = np.maximum(idx + 1 - k, 0)
    return ((c[idx + 1] - c[lo]) > 0).tolist()
