"""Challenge scoring: per-class ROC AUC, NAUC, NBAC and the time-weighted ALC."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import OrderingError, ScoringError, UndefinedAUCError


@dataclass(frozen=True)
class PredictionSnapshot:
    timestamp: float
    scores: np.ndarray

    def __post_init__(self):
        if not self.timestamp >= 0:
            raise ScoringError(f"negative snapshot timestamp {self.timestamp}")
        scores = np.asarray(self.scores, dtype=np.float64)
        if scores.ndim != 2 or not np.all(np.isfinite(scores)):
            raise ScoringError("snapshot scores must be a finite 2-D matrix")
        object.__setattr__(self, "scores", scores)


@dataclass(frozen=True)
class AlcConfig:
    budget: float = 1200.0
    t0: float = 60.0

    def __post_init__(self):
        if not (self.budget > 0 and self.t0 > 0):
            raise ScoringError("ALC needs budget > 0 and t0 > 0")


def midranks(x):
    """1-based ranks with ties sharing the mean of the ranks they span."""
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    # boundaries of runs of equal values
    starts = np.flatnonzero(np.r_[True, xs[1:] != xs[:-1]])
    ends = np.r_[starts[1:], n]
    avg = (starts + ends + 1) / 2.0
    ranks = np.empty(n, dtype=np.float64)
    ranks[order] = np.repeat(avg, ends - starts)
    return ranks


def auc(scores, labels):
    """Mann-Whitney AUC: P(score_pos > score_neg) + 0.5 P(tie)."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(bool)
    if s.shape != y.shape:
        raise ScoringError(f"score/label length mismatch {s.shape} vs {y.shape}")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedAUCError("AUC undefined without both positive and negative labels")
    r = midranks(s)
    return float((r[y].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def per_class_nauc(scores, labels):
    """``2*AUC - 1`` per column; NaN where the column's AUC is undefined."""
    scores = getattr(scores, "scores", scores)
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape:
        raise ScoringError(f"score matrix {s.shape} does not match labels {y.shape}")
    out = np.full(s.shape[1], np.nan)
    for k in range(s.shape[1]):
        try:
            out[k] = 2.0 * auc(s[:, k], y[:, k]) - 1.0
        except UndefinedAUCError:
            pass
    return out


def nauc_macro(scores, labels):
    """Unweighted mean NAUC over the classes whose AUC is defined."""
    per = per_class_nauc(scores, labels)
    defined = per[~np.isnan(per)]
    if defined.size == 0:
        raise ScoringError("no class has both positive and negative labels")
    return float(defined.mean())


def nbac(scores, labels, threshold=0.5):
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(bool)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedAUCError("NBAC undefined without both positive and negative labels")
    pred = s >= threshold
    tpr = np.count_nonzero(pred & y) / n_pos
    tnr = np.count_nonzero(~pred & ~y) / n_neg
    return 2.0 * ((tpr + tnr) / 2.0) - 1.0


@dataclass(frozen=True)
class LearningCurve:
    """Step function NAUC(t): value ``v_i`` holds on ``[t_i, t_{i+1})``."""

    points: tuple = ()

    def __post_init__(self):
        pts = tuple((float(t), float(v)) for t, v in self.points)
        for i, (t, v) in enumerate(pts):
            if t < 0:
                raise OrderingError(f"negative timestamp {t}")
            if not -1.0 <= v <= 1.0:
                raise ScoringError(f"NAUC {v} outside [-1, 1]")
            if i and t <= pts[i - 1][0]:
                raise OrderingError(f"timestamp {t} does not follow {pts[i - 1][0]}")
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return len(self.points)

    @property
    def timestamps(self):
        return [t for t, _ in self.points]

    @property
    def values(self):
        return [v for _, v in self.points]


def append_point(curve, timestamp, nauc):
    if curve.points and not timestamp > curve.points[-1][0]:
        raise OrderingError(
            f"timestamp {timestamp} must exceed last timestamp {curve.points[-1][0]}"
        )
    return LearningCurve(curve.points + ((timestamp, nauc),))


def alc(curve, cfg=AlcConfig()):
    """Closed-form area under the learning curve.

    NAUC is 0 before the first point and the last value is held to the
    budget; points past the budget are dropped.
    """
    pts = [(t, v) for t, v in curve.points if t <= cfg.budget]
    total = 0.0
    for i, (t, v) in enumerate(pts):
        t_next = pts[i + 1][0] if i + 1 < len(pts) else cfg.budget
        total += v * math.log1p((t_next - t) / (t + cfg.t0))
    return total / math.log1p(cfg.budget / cfg.t0)


def write_curve_csv(curve, path):
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp_s", "nauc"])
        for t, v in curve.points:
            w.writerow([repr(t), repr(v)])
    return path


def read_curve_csv(path):
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["timestamp_s", "nauc"]:
            raise ScoringError(f"{path}: unexpected curve header {header}")
        return LearningCurve(tuple((float(t), float(v)) for t, v in reader if t))
