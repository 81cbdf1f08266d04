"""Classification metrics, 7-point checklist inference and McNemar's test."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import product
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import binom

from .errors import InputError, MetricError

SEVEN_POINT_CRITERIA = ("PN", "BWV", "VS", "PIG", "STR", "DaG", "RS")
SEVEN_POINT_CLASSES = {
    "PN": ("absent", "typical", "atypical"),
    "BWV": ("absent", "present"),
    "VS": ("absent", "regular", "irregular"),
    "PIG": ("absent", "regular", "irregular"),
    "STR": ("absent", "regular", "irregular"),
    "DaG": ("absent", "regular", "irregular"),
    "RS": ("absent", "present"),
}


@dataclass
class PredictionSet:
    y_true: np.ndarray
    y_pred: np.ndarray
    scores: np.ndarray | None = None

    def __post_init__(self):
        self.y_true = np.asarray(self.y_true, dtype=np.int64)
        self.y_pred = np.asarray(self.y_pred, dtype=np.int64)
        if self.y_true.shape != self.y_pred.shape or self.y_true.ndim != 1:
            raise InputError(
                f"y_true and y_pred must be equal-length vectors: {self.y_true.shape} vs {self.y_pred.shape}")
        if self.scores is not None:
            self.scores = np.asarray(self.scores, dtype=np.float64)
            if self.scores.shape[0] != self.y_true.shape[0]:
                raise InputError("scores must have one row per sample")
            if not np.allclose(self.scores.sum(axis=1), 1.0, atol=1e-6):
                raise InputError("score rows must sum to 1")


def _as_set(p_or_true, y_pred=None) -> PredictionSet:
    return p_or_true if isinstance(p_or_true, PredictionSet) else PredictionSet(p_or_true, y_pred)


def confusion_matrix(y_true, y_pred, n_classes: int | None = None) -> np.ndarray:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    k = n_classes or int(max(y_true.max(initial=-1), y_pred.max(initial=-1)) + 1)
    cm = np.zeros((k, k), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def balanced_accuracy(p, y_pred=None, n_classes: int | None = None) -> float:
    """Mean per-class recall over the classes present in ``y_true``.

    With ``n_classes`` given, every class must be present.
    """
    p = _as_set(p, y_pred)
    classes = np.unique(p.y_true) if n_classes is None else np.arange(n_classes)
    if classes.size == 0:
        raise MetricError("balanced accuracy of an empty prediction set")
    recalls = []
    for c in classes:
        members = p.y_true == c
        if not members.any():
            raise MetricError(f"class {c} has no samples; balanced accuracy undefined")
        recalls.append(np.mean(p.y_pred[members] == c))
    return float(np.mean(recalls))


def micro_f1(p, y_pred=None) -> float:
    """Micro-averaged F1 from pooled TP/FP/FN counts.

    For single-label multiclass input every error is one FP and one FN,
    so this equals plain accuracy.
    """
    p = _as_set(p, y_pred)
    if p.y_true.size == 0:
        raise MetricError("micro F1 of an empty prediction set")
    tp = int(np.sum(p.y_true == p.y_pred))
    fp = fn = p.y_true.size - tp
    return 2 * tp / (2 * tp + fp + fn)


def accuracy(p, y_pred=None) -> float:
    p = _as_set(p, y_pred)
    return float(np.mean(p.y_true == p.y_pred))


def auroc(y_true, score) -> float:
    """Mann-Whitney AUC: P(score_pos > score_neg) + 0.5 P(tie)."""
    y = np.asarray(y_true)
    s = np.asarray(score, dtype=np.float64)
    if y.shape != s.shape:
        raise InputError(f"labels {y.shape} and scores {s.shape} differ in length")
    pos, neg = s[y == 1], s[y == 0]
    if pos.size == 0 or neg.size == 0:
        raise MetricError("AUROC needs both positive and negative samples")
    if pos.size + neg.size != y.size:
        raise InputError("AUROC labels must be binary 0/1")
    # rank formulation with midranks handles ties as 1/2
    order = np.concatenate([pos, neg])
    ranks = _midranks(order)
    u = ranks[: pos.size].sum() - pos.size * (pos.size + 1) / 2.0
    return float(u / (pos.size * neg.size))


def _midranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="mergesort")
    sorted_x = x[order]
    ranks = np.empty(x.size, dtype=np.float64)
    i = 0
    while i < x.size:
        j = i
        while j + 1 < x.size and sorted_x[j + 1] == sorted_x[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def mcnemar_counts(correct_a, correct_b) -> tuple[int, int, int, int]:
    """2x2 table ``(both, a_only, b_only, neither)`` of per-sample correctness."""
    a = np.asarray(correct_a, dtype=bool)
    b = np.asarray(correct_b, dtype=bool)
    if a.shape != b.shape:
        raise InputError(f"correctness vectors differ in length: {a.shape} vs {b.shape}")
    if a.size == 0:
        raise InputError("McNemar's test needs at least one paired sample")
    return (int(np.sum(a & b)), int(np.sum(a & ~b)), int(np.sum(~a & b)), int(np.sum(~a & ~b)))


def mcnemar_test(correct_a, correct_b) -> float:
    """Exact two-sided McNemar p-value on the discordant pairs."""
    _, b, c, _ = mcnemar_counts(correct_a, correct_b)
    if b + c == 0:
        return 1.0
    return float(min(1.0, 2.0 * binom.cdf(min(b, c), b + c, 0.5)))


def delta_percent(metric_new: float, metric_base: float) -> float:
    """Relative change in percent; see :func:`format_delta` for the table rendering."""
    if metric_base <= 0:
        raise MetricError(f"delta_percent needs a positive base metric, got {metric_base}")
    return 100.0 * (metric_new - metric_base) / metric_base


def truncate1(x: float) -> float:
    """Truncate toward zero at one decimal, tolerant of float representation noise."""
    scaled = x * 10.0
    nearest = round(scaled)
    if abs(scaled - nearest) < 1e-9:
        scaled = nearest
    return math.trunc(scaled) / 10.0


def format_delta(value: float) -> str:
    """Table style: ``+3.1`` for gains, ``(-5.6)`` for losses."""
    v = truncate1(value)
    if v < 0:
        return f"(-{abs(v):.1f})"
    return f"+{v:.1f}"


# ------------------------------------------------------------- 7-point


@dataclass
class CriteriaScoreTable:
    """Points contributed by each predicted criterion class, plus thresholds."""

    points: dict[str, dict[int, int]] = field(default_factory=dict)
    thresholds: tuple[int, ...] = (1, 3)

    def __post_init__(self):
        self.points = {c: {int(k): int(v) for k, v in m.items()} for c, m in self.points.items()}
        self.thresholds = tuple(self.thresholds)
        if any(v < 0 for m in self.points.values() for v in m.values()):
            raise InputError("criterion contributions must be non-negative")
        if any(b <= a for a, b in zip(self.thresholds, self.thresholds[1:])):
            raise InputError(f"thresholds must be strictly increasing, got {self.thresholds}")

    @classmethod
    def default(cls) -> "CriteriaScoreTable":
        """Major criteria score 2, minor criteria score 1."""
        return cls({
            "PN": {2: 2},   # atypical pigment network
            "BWV": {1: 2},  # blue-whitish veil present
            "VS": {2: 2},   # atypical vascular structures
            "PIG": {2: 1},  # irregular pigmentation
            "STR": {2: 1},  # irregular streaks
            "DaG": {2: 1},  # irregular dots and globules
            "RS": {1: 1},   # regression structures present
        })

    def score(self, criteria_preds: Mapping[str, int]) -> int:
        missing = [c for c in SEVEN_POINT_CRITERIA if c not in criteria_preds]
        if missing:
            raise InputError(f"missing criterion prediction(s): {missing}")
        return sum(self.points.get(c, {}).get(int(criteria_preds[c]), 0) for c in SEVEN_POINT_CRITERIA)


def seven_point_infer(criteria_preds: Mapping[str, int], table: CriteriaScoreTable | None = None,
                      t: int = 3) -> tuple[bool, int]:
    """Return ``(melanoma, score)`` with melanoma decided as ``score >= t``."""
    table = table or CriteriaScoreTable.default()
    s = table.score(criteria_preds)
    return s >= t, s


def seven_point_scores(criteria_preds: Mapping[str, Sequence[int]],
                       table: CriteriaScoreTable | None = None) -> np.ndarray:
    """Vectorised score over samples; ``criteria_preds[c]`` is a per-sample array."""
    table = table or CriteriaScoreTable.default()
    missing = [c for c in SEVEN_POINT_CRITERIA if c not in criteria_preds]
    if missing:
        raise InputError(f"missing criterion prediction(s): {missing}")
    total = None
    for c in SEVEN_POINT_CRITERIA:
        pred = np.asarray(criteria_preds[c], dtype=np.int64)
        pts = np.zeros(pred.shape, dtype=np.int64)
        for cls, v in table.points.get(c, {}).items():
            pts[pred == cls] = v
        total = pts if total is None else total + pts
    return total


def all_criteria_combinations():
    """Every joint assignment of criterion classes (972 with the default classes)."""
    names = SEVEN_POINT_CRITERIA
    for combo in product(*(range(len(SEVEN_POINT_CLASSES[c])) for c in names)):
        yield dict(zip(names, combo))
