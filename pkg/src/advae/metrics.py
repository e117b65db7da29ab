"""Ranking and single-threshold metrics. Anomalies (label 1) are the positive class."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata


def _prep(scores, labels):
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1).astype(int)
    if s.shape != y.shape:
        raise ValueError(f"{s.size} scores vs {y.size} labels")
    if not np.all(np.isin(y, (0, 1))):
        raise ValueError("labels must be 0 (normal) or 1 (anomaly)")
    return s, y


def average_precision(scores, labels):
    """Sum of precision times recall increase, stepping through distinct scores from the top."""
    s, y = _prep(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise ValueError("average precision needs at least one positive")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    # last index of every block of tied scores
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tp = np.cumsum(y)[ends]
    k = ends + 1
    prev = np.r_[0, tp[:-1]]
    terms = [((t - p) / n_pos) * (t / kk) for t, p, kk in zip(tp.tolist(), prev.tolist(), k.tolist()) if t != p]
    return math.fsum(terms)


def auc(scores, labels):
    """Mann-Whitney AUC with ties counted as one half."""
    s, y = _prep(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes")
    ranks = rankdata(s)
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass
class Confusion:
    tp: int
    fp: int
    tn: int
    fn: int
    recall: float
    precision: float
    f1: float


def confusion_at(scores, labels, threshold) -> Confusion:
    if not math.isfinite(threshold):
        raise ValueError("threshold must be finite")
    s, y = _prep(scores, labels)
    pred = s >= threshold
    tp = int(np.sum(pred & (y == 1)))
    fp = int(np.sum(pred & (y == 0)))
    fn = int(np.sum(~pred & (y == 1)))
    tn = int(np.sum(~pred & (y == 0)))
    recall = tp / (tp + fn) if tp + fn else 0.0
    precision = tp / (tp + fp) if tp + fp else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return Confusion(tp, fp, tn, fn, recall, precision, f1)


@dataclass
class EvalReport:
    dataset: str
    variant: str
    seed: int
    score_seed: int
    ap: float
    auc: float
    recall: float
    precision: float
    f1: float
    tp: int
    fp: int
    tn: int
    fn: int
    threshold: float
    alpha: float


def evaluate(scores, labels, threshold, *, dataset="", variant="", seed=0, score_seed=0, alpha=0.1) -> EvalReport:
    s, y = _prep(scores, labels)
    has_both = 0 < y.sum() < y.size
    c = confusion_at(s, y, threshold)
    return EvalReport(
        dataset, variant, seed, score_seed,
        average_precision(s, y) if has_both else float("nan"),
        auc(s, y) if has_both else float("nan"),
        c.recall, c.precision, c.f1, c.tp, c.fp, c.tn, c.fn, float(threshold), float(alpha),
    )


def pr_curve_points(scores, labels):
    """(threshold, precision, recall) at each distinct score, highest first."""
    s, y = _prep(scores, labels)
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tp = np.cumsum(y)[ends]
    return s[ends], tp / (ends + 1), tp / max(int(y.sum()), 1)
