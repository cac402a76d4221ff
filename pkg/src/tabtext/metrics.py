"""Classification metrics, logit differences and timing probes."""
from __future__ import annotations

import math
import statistics
import time
import warnings
from fractions import Fraction
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np


class MetricError(ValueError):
    pass


def _pair(y_true, y_pred):
    a = np.asarray(y_true)
    b = np.asarray(y_pred)
    if a.shape != b.shape:
        raise MetricError(f"length mismatch: {a.shape} vs {b.shape}")
    if a.size == 0:
        raise MetricError("empty input")
    return a, b


def confusion_matrix(y_true, y_pred, labels: Sequence | None = None) -> np.ndarray:
    """k x k counts with rows = true class, columns = predicted class."""
    a, b = _pair(y_true, y_pred)
    if labels is None:
        labels = np.unique(np.concatenate([a, b]))
    index = {lab: i for i, lab in enumerate(labels)}
    cm = np.zeros((len(labels), len(labels)), dtype=np.int64)
    for t, p in zip(a.tolist(), b.tolist()):
        cm[index[t], index[p]] += 1
    return cm


def accuracy(y_true, y_pred) -> float:
    a, b = _pair(y_true, y_pred)
    return float(np.mean(a == b))


def _safe_ratio(num, den, what: str) -> float:
    if den == 0:
        warnings.warn(f"{what} is 0/0, defined as 0", RuntimeWarning, stacklevel=3)
        return 0.0
    return num / den


@dataclass(frozen=True)
class ClassStats:
    label: object
    precision: float
    recall: float
    f1: float
    support: int
    undefined: bool = False


def per_class(y_true, y_pred, labels: Sequence | None = None) -> list[ClassStats]:
    a, b = _pair(y_true, y_pred)
    if labels is None:
        labels = np.unique(np.concatenate([a, b])).tolist()
    out = []
    for lab in labels:
        tp = int(np.sum((a == lab) & (b == lab)))
        fp = int(np.sum((a != lab) & (b == lab)))
        fn = int(np.sum((a == lab) & (b != lab)))
        undefined = tp + fp == 0 or tp + fn == 0
        p = _safe_ratio(tp, tp + fp, f"precision of class {lab}")
        r = _safe_ratio(tp, tp + fn, f"recall of class {lab}")
        # same value as 2pr/(p+r), but one rounding from the integer counts
        f = 2 * tp / (2 * tp + fp + fn) if tp > 0 else 0.0
        out.append(ClassStats(lab, p, r, f, tp + fn, undefined))
    return out


def _exact_class_ratio(a, b, lab, attr) -> Fraction:
    tp = int(np.sum((a == lab) & (b == lab)))
    fp = int(np.sum((a != lab) & (b == lab)))
    fn = int(np.sum((a == lab) & (b != lab)))
    num, den = {"precision": (tp, tp + fp), "recall": (tp, tp + fn), "f1": (2 * tp, 2 * tp + fp + fn)}[attr]
    return Fraction(num, den) if den else Fraction(0)


def _average(y_true, y_pred, averaging, labels, attr):
    if averaging == "binary":
        lab = labels if labels is not None else np.unique(np.concatenate([np.asarray(y_true), np.asarray(y_pred)])).tolist()
        if len(lab) > 2:
            raise MetricError("binary averaging needs two classes")
        pos = 1 if labels is None else labels[-1]
        return getattr(per_class(y_true, y_pred, [pos])[0], attr)
    if averaging == "macro":
        stats = per_class(y_true, y_pred, labels)  # raises the 0/0 warnings
        a, b = _pair(y_true, y_pred)
        # exact rational mean, so the result is the correctly rounded value
        total = sum(_exact_class_ratio(a, b, s.label, attr) for s in stats)
        return float(total / len(stats))
    raise MetricError(f"unknown averaging mode {averaging!r}")


def precision(y_true, y_pred, averaging: str = "binary", labels=None) -> float:
    return _average(y_true, y_pred, averaging, labels, "precision")


def recall(y_true, y_pred, averaging: str = "binary", labels=None) -> float:
    return _average(y_true, y_pred, averaging, labels, "recall")


def f1(y_true, y_pred, averaging: str = "binary", labels=None) -> float:
    """Binary F1 of the positive class (label 1), or the unweighted mean
    over ``labels`` for ``"macro"``; classes with 0/0 contribute 0."""
    return _average(y_true, y_pred, averaging, labels, "f1")


def _binary_auc(pos_mask: np.ndarray, scores: np.ndarray) -> float:
    n_pos = int(pos_mask.sum())
    n_neg = len(pos_mask) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUROC undefined: need at least one positive and one negative")
    # midranks give tied pairs half credit
    order = np.argsort(scores, kind="mergesort")
    s = scores[order]
    ranks = np.empty(len(s))
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and s[j + 1] == s[i]:
            j += 1
        ranks[i:j + 1] = (i + j) / 2 + 1
        i = j + 1
    r = np.empty(len(s))
    r[order] = ranks
    return float((r[pos_mask].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def auroc(y_true, scores, averaging: str = "binary", labels=None) -> float:
    """Area under the ROC curve as the fraction of concordant
    positive/negative pairs.  ``scores`` is a vector (binary) or an n x k
    matrix whose columns follow ``labels``."""
    y = np.asarray(y_true)
    sc = np.asarray(scores, dtype=float)
    if len(y) == 0:
        raise MetricError("empty input")
    if averaging == "binary":
        if sc.ndim == 2:
            sc = sc[:, -1]
        pos = 1 if labels is None else labels[-1]
        if len(sc) != len(y):
            raise MetricError("length mismatch")
        return _binary_auc(y == pos, sc)
    if averaging == "macro_ovr":
        if sc.ndim != 2:
            raise MetricError("macro_ovr needs a score matrix")
        labels = list(range(sc.shape[1])) if labels is None else list(labels)
        return float(np.mean([_binary_auc(y == lab, sc[:, c]) for c, lab in enumerate(labels)]))
    raise MetricError(f"unknown averaging mode {averaging!r}")


def auprc(y_true, scores, averaging: str = "binary", labels=None) -> float:
    """Average precision (step-wise area under the precision-recall curve)."""
    y = np.asarray(y_true)
    sc = np.asarray(scores, dtype=float)

    def ap(pos_mask, s):
        if pos_mask.sum() == 0:
            raise MetricError("AUPRC undefined without positives")
        order = np.argsort(-s, kind="mergesort")
        s_sorted, hits = s[order], pos_mask[order].astype(float)
        # treat tied scores as one threshold
        last = np.r_[np.flatnonzero(np.diff(s_sorted) != 0), len(s_sorted) - 1]
        tp = np.cumsum(hits)[last]
        prec = tp / (last + 1)
        rec = tp / pos_mask.sum()
        return float(np.sum(np.diff(np.r_[0.0, rec]) * prec))

    if averaging == "binary":
        if sc.ndim == 2:
            sc = sc[:, -1]
        pos = 1 if labels is None else labels[-1]
        return ap(y == pos, sc)
    labels = list(range(sc.shape[1])) if labels is None else list(labels)
    return float(np.mean([ap(y == lab, sc[:, c]) for c, lab in enumerate(labels)]))


def mcc(y_true, y_pred, labels=None) -> float:
    """Matthews correlation: the TP/TN/FP/FN formula for two classes, the
    confusion-matrix generalisation otherwise.  Zero denominators give 0."""
    # numerator and squared denominator are exact integers; one float step at the end
    cm = confusion_matrix(y_true, y_pred, labels).tolist()
    if len(cm) == 2:
        (tn, fp), (fn, tp) = cm
        num = tp * tn - fp * fn
        den = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    else:
        k = len(cm)
        t = [sum(row) for row in cm]
        p = [sum(cm[i][j] for i in range(k)) for j in range(k)]
        c = sum(cm[i][i] for i in range(k))
        s = sum(t)
        num = c * s - sum(ti * pi for ti, pi in zip(t, p))
        den = (s * s - sum(pi * pi for pi in p)) * (s * s - sum(ti * ti for ti in t))
    if den == 0:
        return 0.0
    return max(-1.0, min(1.0, num / math.sqrt(den)))


# ---------------------------------------------------------------- reports


@dataclass
class EvalReport:
    accuracy: float
    f1: float
    auroc: float | None
    mcc: float
    precision: float
    recall: float
    auprc: float | None
    n: int
    per_class: list = field(default_factory=list)
    loss: float | None = None
    runtime_seconds: float | None = None
    samples_per_second: float | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_class"] = [asdict(c) if not isinstance(c, dict) else c for c in self.per_class]
        for c in d["per_class"]:
            c["label"] = c["label"] if isinstance(c["label"], (int, str)) else str(c["label"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(**d)


def evaluate(y_true, proba, labels: Sequence | None = None, loss: float | None = None) -> EvalReport:
    """Full metric bundle from class-probability (or logit) scores.

    Binary problems use the positive class; multiclass uses macro averages
    and one-vs-rest AUROC.  AUROC/AUPRC are ``None`` when undefined.
    """
    proba = np.asarray(proba, dtype=float)
    y = np.asarray(y_true)
    k = proba.shape[1]
    labels = list(range(k)) if labels is None else list(labels)
    pred = np.asarray(labels)[proba.argmax(axis=1)]
    mode = "binary" if k == 2 else "macro"
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        pc = per_class(y, pred, labels)
        try:
            au = auroc(y, proba, "binary" if k == 2 else "macro_ovr", labels)
        except MetricError:
            au = None
        try:
            ap = auprc(y, proba, "binary" if k == 2 else "macro", labels)
        except MetricError:
            ap = None
        return EvalReport(
            accuracy=accuracy(y, pred),
            f1=f1(y, pred, mode, labels),
            auroc=au,
            mcc=mcc(y, pred, labels),
            precision=precision(y, pred, mode, labels),
            recall=recall(y, pred, mode, labels),
            auprc=ap,
            n=int(len(y)),
            per_class=pc,
            loss=loss,
        )


# ---------------------------------------------------------------- logits


@dataclass(frozen=True)
class LogitDelta:
    delta: np.ndarray
    flipped: np.ndarray
    class_order: tuple

    @property
    def mean_abs(self) -> float:
        return float(np.abs(self.delta).mean())

    @property
    def flipped_fraction(self) -> float:
        return float(self.flipped.mean())

    def scatter_rows(self, arm: str) -> list[tuple]:
        """(sample, d_logit_c0, d_logit_c1, arm) rows for plotting."""
        return [(i, float(d[0]), float(d[1]) if len(d) > 1 else 0.0, arm) for i, d in enumerate(self.delta)]

    def summary(self) -> dict:
        return {"mean_abs_delta": self.mean_abs, "flipped_fraction": self.flipped_fraction,
                "n": int(len(self.delta))}


def logit_delta(baseline, variant) -> LogitDelta:
    """``variant - baseline`` per sample and class, plus argmax flips.

    Accepts :class:`~tabtext.lm.LogitMatrix` objects or plain arrays.
    """
    b_vals = np.asarray(getattr(baseline, "values", baseline), dtype=float)
    v_vals = np.asarray(getattr(variant, "values", variant), dtype=float)
    b_order = tuple(getattr(baseline, "class_order", range(b_vals.shape[1])))
    v_order = tuple(getattr(variant, "class_order", range(v_vals.shape[1])))
    if b_vals.shape != v_vals.shape:
        raise MetricError(f"shape mismatch: {b_vals.shape} vs {v_vals.shape}")
    if b_order != v_order:
        raise MetricError(f"class order mismatch: {b_order} vs {v_order}")
    delta = v_vals - b_vals
    if not np.isfinite(delta).all():
        raise MetricError("non-finite logit difference")
    flipped = b_vals.argmax(axis=1) != v_vals.argmax(axis=1)
    return LogitDelta(delta, flipped, b_order)


# ---------------------------------------------------------------- timing


@dataclass(frozen=True)
class RuntimeProbe:
    wall_seconds: float
    samples_per_second: float
    repeats: int
    variance: float


def runtime_probe(fn: Callable, inputs: Sequence, repeats: int = 1) -> RuntimeProbe:
    """Time ``fn(inputs)`` with a monotonic clock; reports the mean over
    ``repeats`` runs and the variance between them."""
    n = len(inputs)
    if n == 0:
        raise MetricError("runtime probe needs at least one input")
    times = []
    for _ in range(max(1, repeats)):
        t0 = time.perf_counter()
        fn(inputs)
        times.append(time.perf_counter() - t0)
    wall = float(np.mean(times))
    var = statistics.pvariance(times) if len(times) > 1 else 0.0
    return RuntimeProbe(wall, n / wall if wall > 0 else math.inf, len(times), var)
