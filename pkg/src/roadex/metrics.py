"""Precision/recall/F1/OA, threshold curves, and the break-even point.

Degenerate denominators follow fixed conventions so every result is defined:
P := 0 when TP+FP = 0, R := 0 when TP+FN = 0, F1 := 0 when P+R = 0.
Dataset metrics are micro-averaged (pooled counts) by default; per-image
averaging is available via mode="per-image".
"""
from dataclasses import dataclass

import numpy as np

from .errors import DataError, ParameterError, ShapeError


def default_thresholds(n=101):
    return np.linspace(0.0, 1.0, n)


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self):
        return self.tp + self.fp + self.tn + self.fn

    def __add__(self, other):
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp,
                               self.tn + other.tn, self.fn + other.fn)


def confusion(prob, target, threshold=0.5):
    """Counts with a pixel classified road iff prob >= threshold."""
    prob = np.asarray(prob)
    target = np.asarray(target)
    if prob.shape != target.shape:
        raise ShapeError(f"confusion: prob {prob.shape} vs target {target.shape}")
    if not 0.0 <= threshold <= 1.0:
        raise ParameterError(f"threshold must be in [0,1], got {threshold}")
    pred = prob >= threshold
    t = target.astype(bool)
    tp = int(np.count_nonzero(pred & t))
    fp = int(np.count_nonzero(pred & ~t))
    fn = int(np.count_nonzero(~pred & t))
    tn = int(np.count_nonzero(~pred & ~t))
    return ConfusionCounts(tp, fp, tn, fn)


def prf_oa(c):
    """Precision, recall, F1 (harmonic mean), overall accuracy from counts."""
    if c.total == 0:
        raise ParameterError("prf_oa: empty confusion counts")
    precision = c.tp / (c.tp + c.fp) if c.tp + c.fp else 0.0
    recall = c.tp / (c.tp + c.fn) if c.tp + c.fn else 0.0
    f1 = (2 * precision * recall / (precision + recall)
          if precision + recall else 0.0)
    oa = (c.tp + c.tn) / c.total
    return {"precision": precision, "recall": recall, "f1": f1, "oa": oa}


@dataclass
class PRCurve:
    thresholds: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    oa: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.thresholds, dtype=float)
        if t.size == 0:
            raise ParameterError("empty threshold list")
        if t.size > 1 and not (np.diff(t) > 0).all():
            raise ParameterError("thresholds must be strictly increasing")
        if t.min() < 0.0 or t.max() > 1.0:
            raise ParameterError("thresholds must lie in [0,1]")

    def points(self):
        return list(zip(self.thresholds, self.precision, self.recall, self.oa))


def _as_list(x):
    return x if isinstance(x, (list, tuple)) else [x]


def pr_curve(prob, target, thresholds=None):
    """One (P, R, OA) point per threshold; prob/target may be a single map
    or a list of maps (micro-pooled counts)."""
    if thresholds is None:
        thresholds = default_thresholds()
    thresholds = np.asarray(thresholds, dtype=float)
    if thresholds.size == 0:
        raise ParameterError("empty threshold list")
    probs, targets = _as_list(prob), _as_list(target)
    rows = []
    for t in thresholds:
        counts = sum((confusion(p, g, t) for p, g in zip(probs, targets)),
                     ConfusionCounts(0, 0, 0, 0))
        m = prf_oa(counts)
        rows.append((m["precision"], m["recall"], m["oa"]))
    p, r, oa = map(np.array, zip(*rows))
    return PRCurve(thresholds, p, r, oa)


@dataclass(frozen=True)
class BreakEven:
    value: float
    crossed: bool  # False when no P-R sign change exists on the curve


def break_even_point(curve):
    """Common P=R value at the curve's crossing: exact where a point has
    P == R, linearly interpolated between adjacent points where P-R changes
    sign, otherwise the value at min |P-R| with crossed=False."""
    p = np.asarray(curve.precision, dtype=float)
    r = np.asarray(curve.recall, dtype=float)
    if p.size < 2:
        raise ParameterError("break_even_point needs >= 2 curve points")
    if (p == 0).all() and (r == 0).all():
        raise DataError("degenerate curve: precision and recall vanish "
                        "at every threshold")
    d = p - r
    for i in range(d.size):
        if d[i] == 0.0:
            return BreakEven(float(p[i]), True)
        if i + 1 < d.size and d[i] * d[i + 1] < 0:
            lam = d[i] / (d[i] - d[i + 1])
            return BreakEven(float(p[i] + lam * (p[i + 1] - p[i])), True)
    i = int(np.argmin(np.abs(d)))
    return BreakEven(float((p[i] + r[i]) / 2), False)


def dataset_metrics(probs, targets, threshold=0.5, mode="micro"):
    """Metrics over a dataset: pooled counts (micro) or the mean of
    per-image metrics."""
    probs, targets = _as_list(probs), _as_list(targets)
    if mode == "micro":
        counts = sum((confusion(p, g, threshold)
                      for p, g in zip(probs, targets)),
                     ConfusionCounts(0, 0, 0, 0))
        return prf_oa(counts)
    if mode == "per-image":
        per = [prf_oa(confusion(p, g, threshold))
               for p, g in zip(probs, targets)]
        return {k: float(np.mean([m[k] for m in per])) for k in per[0]}
    raise ParameterError(f"unknown aggregation mode: {mode!r}")
