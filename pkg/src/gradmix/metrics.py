"""Detection metrics, openness, and corruption accuracy-drop aggregates.

Scores follow *higher = positive*. For open-set evaluation the positives
are known-class (in-set) samples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.stats import rankdata


def _split(scores, is_positive):
    scores = np.asarray(scores, dtype=np.float64)
    is_positive = np.asarray(is_positive, dtype=bool)
    if scores.shape != is_positive.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be 1-D arrays of equal length")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    n_pos = int(is_positive.sum())
    if n_pos == 0 or n_pos == len(scores):
        raise ValueError("need at least one positive and one negative sample")
    return scores, is_positive, n_pos, len(scores) - n_pos


def in_out_arrays(in_scores, out_scores) -> tuple[np.ndarray, np.ndarray]:
    """Concatenate in-set / open-set scores into (scores, is_positive)."""
    in_scores, out_scores = np.ravel(in_scores), np.ravel(out_scores)
    scores = np.concatenate([in_scores, out_scores])
    labels = np.concatenate([np.ones(len(in_scores), bool), np.zeros(len(out_scores), bool)])
    return scores, labels


def auroc(scores, is_positive) -> float:
    """Mann-Whitney AUROC from midranks; ties count one half."""
    scores, pos, n_pos, n_neg = _split(scores, is_positive)
    ranks = rankdata(scores)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))


def _threshold_counts(scores, pos):
    """TP/FP when accepting scores >= t, for each unique t in descending order."""
    order = np.argsort(-scores, kind="mergesort")
    s, p = scores[order], pos[order]
    tp, fp = np.cumsum(p), np.cumsum(~p)
    last = np.r_[np.flatnonzero(np.diff(s)), len(s) - 1]
    return s[last], tp[last], fp[last]


def roc_curve(scores, is_positive):
    """(fpr, tpr) points from the all-reject corner to (1, 1)."""
    scores, pos, n_pos, n_neg = _split(scores, is_positive)
    _, tp, fp = _threshold_counts(scores, pos)
    return np.r_[0, fp / n_neg], np.r_[0, tp / n_pos]


def auroc_trapezoid(scores, is_positive) -> float:
    fpr, tpr = roc_curve(scores, is_positive)
    trapezoid = getattr(np, "trapezoid", None) or np.trapz
    return float(trapezoid(tpr, fpr))


def tnr_at_tpr(scores, is_positive, level: float = 0.95) -> float:
    """TNR at the largest threshold whose TPR = TP / (TP + FN) reaches ``level``.

    A sample is accepted as positive when its score is >= the threshold.
    """
    scores, pos, n_pos, n_neg = _split(scores, is_positive)
    thresholds, tp, fp = _threshold_counts(scores, pos)
    first = int(np.argmax(tp / n_pos >= level))
    return float((n_neg - fp[first]) / n_neg)


def dtacc(scores, is_positive) -> float:
    """Best (TP + TN) / n over every threshold, including accept-all and reject-all."""
    scores, pos, n_pos, n_neg = _split(scores, is_positive)
    _, tp, fp = _threshold_counts(scores, pos)
    correct = np.r_[n_neg, tp + (n_neg - fp)]
    return float(correct.max() / len(scores))


def aupr(scores, is_positive, positive_side: str = "in") -> float:
    """Average precision: sum over thresholds of (recall step) x precision.

    ``positive_side="out"`` treats negatives as the positive class with scores
    negated (AUOUT); ``"in"`` gives AUIN.
    """
    scores, pos, _, _ = _split(scores, is_positive)
    if positive_side == "out":
        scores, pos = -scores, ~pos
    elif positive_side != "in":
        raise ValueError(f"positive_side must be 'in' or 'out', got {positive_side!r}")
    n_pos = int(pos.sum())
    _, tp, fp = _threshold_counts(scores, pos)
    prev = np.r_[0, tp[:-1]]
    # exact rational sum, rounded once: perfect separation gives exactly 1.0
    area = sum((Fraction(int(t - p0) * int(t), int(t + f)) for t, p0, f in zip(tp, prev, fp) if t > p0),
               Fraction(0))
    return float(area / n_pos)


def detection_metrics(in_scores, out_scores) -> dict[str, float]:
    scores, labels = in_out_arrays(in_scores, out_scores)
    return {
        "auroc": auroc(scores, labels),
        "tnr_at_tpr95": tnr_at_tpr(scores, labels, 0.95),
        "dtacc": dtacc(scores, labels),
        "auin": aupr(scores, labels, "in"),
        "auout": aupr(scores, labels, "out"),
    }


def openness(known: int, unknown: int) -> float:
    """Openness in percent: 100 * (1 - sqrt(k / (k + u)))."""
    if known < 1 or unknown < 0:
        raise ValueError(f"need known >= 1 and unknown >= 0, got {known}, {unknown}")
    return 100.0 * (1.0 - math.sqrt(known / (known + unknown)))


def accuracy(predicted, truth) -> float:
    predicted, truth = np.asarray(predicted), np.asarray(truth)
    return float(np.mean(predicted == truth))


def topk_accuracy(logits, truth, k: int) -> float:
    logits = np.asarray(logits)
    top = np.argsort(-logits, axis=1, kind="stable")[:, :k]
    return float(np.mean((top == np.asarray(truth)[:, None]).any(axis=1)))


# -- corruption robustness --------------------------------------------------

SEVERITIES = (1, 2, 3, 4, 5)


@dataclass
class CorruptionGrid:
    clean: float
    cells: dict[str, dict[int, float]]  # type -> severity -> accuracy


@dataclass
class CorruptionAggregates:
    drop: dict[str, dict[int, float]]
    per_type: dict[str, float]
    per_severity: dict[int, float]
    overall: float

    def to_dict(self) -> dict:
        return {
            "drop": {c: {str(s): v for s, v in row.items()} for c, row in self.drop.items()},
            "per_type": self.per_type,
            "per_severity": {str(s): v for s, v in self.per_severity.items()},
            "overall": self.overall,
        }


def corruption_aggregates(grid: CorruptionGrid) -> CorruptionAggregates:
    """Accuracy drops D[c][s] = clean - A[c][s] and their means over severities / types."""
    missing = [f"{c}/{s}" for c, row in grid.cells.items() for s in SEVERITIES if s not in row]
    if missing or not grid.cells:
        raise ValueError(f"incomplete corruption grid, missing cells: {missing or 'all'}")
    drop = {c: {s: grid.clean - row[s] for s in SEVERITIES} for c, row in grid.cells.items()}
    # fsum makes every mean independent of summation order
    per_type = {c: math.fsum(row.values()) / len(SEVERITIES) for c, row in drop.items()}
    per_severity = {s: math.fsum(drop[c][s] for c in drop) / len(drop) for s in SEVERITIES}
    overall = math.fsum(per_type.values()) / len(per_type)
    return CorruptionAggregates(drop, per_type, per_severity, overall)
