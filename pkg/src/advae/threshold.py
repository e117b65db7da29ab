"""Automatic decision threshold from a Gaussian KDE of training scores."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

_SQRT_2PI = math.sqrt(2.0 * math.pi)


def silverman_bandwidth(m, d=1):
    """Silverman's factor (m (d + 2) / 4) ** (-1 / (d + 4))."""
    if m <= 0:
        raise ValueError("need at least one sample")
    if d < 1:
        raise ValueError("d must be >= 1")
    return (m * (d + 2) / 4.0) ** (-1.0 / (d + 4))


@dataclass(frozen=True)
class KdeModel:
    scores: np.ndarray
    h: float

    @property
    def m(self):
        return self.scores.shape[0]


def fit_kde(scores, bandwidth=None) -> KdeModel:
    """Fit a Gaussian KDE to 1-D scores.

    Without an explicit ``bandwidth`` the Silverman factor is multiplied by the
    sample standard deviation, so the smoothing follows the scale of the scores
    (a bare factor of ~0.2 would swamp scores that live around 1e-2). With a
    single score or zero spread the factor is used as is.
    """
    s = np.sort(np.asarray(scores, dtype=np.float64).reshape(-1))
    if s.size == 0:
        raise ValueError("cannot fit a KDE to an empty score vector")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    if bandwidth is None:
        factor = silverman_bandwidth(s.size, 1)
        spread = float(np.std(s, ddof=1)) if s.size > 1 else 0.0
        bandwidth = factor * spread if spread > 0 else factor
    if bandwidth <= 0:
        raise ValueError("bandwidth must be > 0")
    return KdeModel(s, float(bandwidth))


def pdf(kde: KdeModel, s, chunk=4096):
    s = np.atleast_1d(np.asarray(s, dtype=np.float64))
    out = np.empty_like(s)
    for i in range(0, s.size, chunk):
        u = (s[i:i + chunk, None] - kde.scores[None, :]) / kde.h
        out[i:i + chunk] = np.exp(-0.5 * u * u).sum(axis=1) / (kde.m * kde.h * _SQRT_2PI)
    return out


def cdf(kde: KdeModel, s):
    """F(s) = mean_i Phi((s - s_i) / h); scalar in, float out."""
    if np.ndim(s) == 0:
        return float(np.mean(ndtr((float(s) - kde.scores) / kde.h)))
    s = np.asarray(s, dtype=np.float64)
    return np.array([cdf(kde, v) for v in s.reshape(-1)]).reshape(s.shape)


@dataclass(frozen=True)
class ThresholdDecision:
    alpha: float
    threshold: float


def solve_threshold(kde: KdeModel, alpha, tol=1e-9, max_iter=500) -> ThresholdDecision:
    """Bisection for F(s_alpha) = 1 - alpha."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    target = 1.0 - alpha
    pad = 10.0 * kde.h
    lo, hi = kde.scores[0] - pad, kde.scores[-1] + pad
    while cdf(kde, lo) > target:
        lo -= pad
        pad *= 2
    pad = 10.0 * kde.h
    while cdf(kde, hi) < target:
        hi += pad
        pad *= 2
    mid = 0.5 * (lo + hi)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if not lo < mid < hi:
            break  # interval is down to adjacent floats, whatever the score scale
        f = cdf(kde, mid)
        if abs(f - target) <= tol:
            break
        if f < target:
            lo = mid
        else:
            hi = mid
    return ThresholdDecision(float(alpha), float(mid))


def classify(score, decision: ThresholdDecision) -> bool:
    """True means outlier; the boundary score itself counts as an outlier."""
    if not math.isfinite(score):
        raise ValueError(f"score must be finite, got {score}")
    return bool(score >= decision.threshold)


def flagged_fraction(scores, decision: ThresholdDecision):
    return float(np.mean(np.asarray(scores) >= decision.threshold))


def write_threshold_report(path, kde: KdeModel, decision: ThresholdDecision, train_scores):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["alpha", "h", "m", "s_alpha", "train_fraction_flagged"])
        w.writerow([repr(decision.alpha), repr(kde.h), kde.m, repr(decision.threshold),
                    repr(flagged_fraction(train_scores, decision))])
