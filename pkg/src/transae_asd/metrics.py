"""Threshold-free detection metrics: AUC, standardised partial AUC, minimum per-ID AUC."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Mapping

import numpy as np

PAIR_COUNT_LIMIT = 10**6


class MetricError(ValueError):
    pass


def _split(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    if scores.shape != labels.shape:
        raise MetricError(f"{scores.shape[0]} scores but {labels.shape[0]} labels")
    if not np.all(np.isfinite(scores)):
        raise MetricError("scores must be finite")
    pos, neg = scores[labels], scores[~labels]
    if pos.size == 0 or neg.size == 0:
        raise MetricError("AUC needs at least one normal and one anomalous score")
    return pos, neg


def auc_pairs(scores, labels) -> float:
    """Mann-Whitney statistic by direct pair counting; ties earn half credit."""
    pos, neg = _split(scores, labels)
    wins = 0.0
    # chunk over anomalies to bound the comparison matrix
    step = max(1, 2**22 // neg.size)
    for lo in range(0, pos.size, step):
        p = pos[lo : lo + step, None]
        wins += np.count_nonzero(p > neg) + 0.5 * np.count_nonzero(p == neg)
    return wins / (pos.size * neg.size)


def roc_curve(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    """ROC points, one per distinct score threshold (descending), from (0, 0) to (1, 1).

    Tied scores move TPR and FPR together, giving a diagonal segment.
    """
    pos, neg = _split(scores, labels)
    s = np.concatenate([pos, neg])
    y = np.concatenate([np.ones(pos.size), np.zeros(neg.size)])
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    last_of_run = np.r_[np.flatnonzero(np.diff(s)), s.size - 1]
    tps = np.cumsum(y)[last_of_run]
    fps = (last_of_run + 1) - tps
    tpr = np.r_[0.0, tps / pos.size]
    fpr = np.r_[0.0, fps / neg.size]
    return fpr, tpr


def auc_trapezoid(scores, labels) -> float:
    fpr, tpr = roc_curve(scores, labels)
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


def auc(scores, labels) -> float:
    """Probability that an anomaly outscores a normal clip (ties count half)."""
    pos, neg = _split(scores, labels)
    if pos.size * neg.size <= PAIR_COUNT_LIMIT:
        return auc_pairs(scores, labels)
    return auc_trapezoid(scores, labels)


def partial_area(scores, labels, p: float) -> float:
    """Raw area under the ROC curve for FPR in [0, p]."""
    fpr, tpr = roc_curve(scores, labels)
    stop = np.searchsorted(fpr, p, side="right")
    x, yv = fpr[:stop], tpr[:stop]
    if x[-1] < p:
        # fpr[stop] > p strictly, so this segment is not vertical
        x0, x1, y0, y1 = fpr[stop - 1], fpr[stop], tpr[stop - 1], tpr[stop]
        x = np.r_[x, p]
        yv = np.r_[yv, y0 + (y1 - y0) * (p - x0) / (x1 - x0)]
    return float(np.sum(np.diff(x) * (yv[1:] + yv[:-1]) / 2.0))


def pauc(scores, labels, p: float = 0.1) -> float:
    """Partial AUC over FPR in [0, p], McClish-standardised so chance = 0.5 and perfect = 1."""
    if not 0.0 < p <= 1.0:
        raise MetricError(f"p must lie in (0, 1], got {p}")
    area = partial_area(scores, labels, p)
    a_min, a_max = p * p / 2.0, p
    return 0.5 * (1.0 + (area - a_min) / (a_max - a_min))


def mauc(groups: Mapping[str, tuple]) -> float:
    """Minimum AUC over groups; ``groups`` maps a group name to ``(scores, labels)``."""
    if not groups:
        raise MetricError("mAUC needs at least one group")
    values = []
    for name, (s, y) in groups.items():
        try:
            values.append(auc(s, y))
        except MetricError as exc:
            raise MetricError(f"group {name}: {exc}") from exc
    return min(values)


def export_histogram(scores, labels, bins: int, path: str | Path | None = None) -> list[dict]:
    """Per-class counts of min-max normalised scores.

    Scores of both classes are normalised together to [0, 1]. When every
    score is equal, a single bin is produced and flagged in ``note``.
    """
    if bins < 2:
        raise MetricError(f"bins must be >= 2, got {bins}")
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    lo, hi = s.min(), s.max()
    if hi == lo:
        rows = [
            {"bin_lo": 0.0, "bin_hi": 1.0, "normal": int((~y).sum()), "anomaly": int(y.sum()),
             "note": "degenerate range: all scores equal"}
        ]
    else:
        z = (s - lo) / (hi - lo)
        edges = np.linspace(0.0, 1.0, bins + 1)
        n_counts, _ = np.histogram(z[~y], edges)
        a_counts, _ = np.histogram(z[y], edges)
        rows = [
            {"bin_lo": float(edges[i]), "bin_hi": float(edges[i + 1]), "normal": int(n_counts[i]),
             "anomaly": int(a_counts[i]), "note": ""}
            for i in range(bins)
        ]
    if path is not None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, ["bin_lo", "bin_hi", "normal", "anomaly", "note"])
            w.writeheader()
            w.writerows(rows)
    return rows
