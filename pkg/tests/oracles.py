"""Brute-force reference implementations used to check tabtext.metrics.

Everything here loops over samples or pairs with exact rational arithmetic
and shares no code with the package.
"""
import math
from fractions import Fraction


def counts(y_true, y_pred, lab):
    tp = fp = fn = 0
    for t, p in zip(y_true, y_pred):
        if t == lab and p == lab:
            tp += 1
        elif t != lab and p == lab:
            fp += 1
        elif t == lab and p != lab:
            fn += 1
    return tp, fp, fn


def accuracy(y_true, y_pred):
    hits = sum(1 for t, p in zip(y_true, y_pred) if t == p)
    return float(Fraction(hits, len(y_true)))


def _f1_exact(y_true, y_pred, lab):
    tp, fp, fn = counts(y_true, y_pred, lab)
    if tp == 0:
        return Fraction(0)
    prec = Fraction(tp, tp + fp)
    rec = Fraction(tp, tp + fn)
    return 2 * prec * rec / (prec + rec)


def f1_binary(y_true, y_pred, positive=1):
    return float(_f1_exact(y_true, y_pred, positive))


def f1_macro(y_true, y_pred, labels):
    return float(sum(_f1_exact(y_true, y_pred, lab) for lab in labels) / len(labels))


def mcc(y_true, y_pred, labels):
    """Multiclass correlation written as explicit sums over the confusion matrix."""
    k = len(labels)
    pos = {lab: i for i, lab in enumerate(labels)}
    C = [[0] * k for _ in range(k)]
    for t, p in zip(y_true, y_pred):
        C[pos[t]][pos[p]] += 1
    num = 0
    for a in range(k):
        for b in range(k):
            for c in range(k):
                num += C[a][a] * C[b][c] - C[a][b] * C[c][a]
    d1 = d2 = 0
    for a in range(k):
        row_a = sum(C[a][b] for b in range(k))
        col_a = sum(C[b][a] for b in range(k))
        rows_other = sum(C[a2][b] for a2 in range(k) if a2 != a for b in range(k))
        cols_other = sum(C[b][a2] for a2 in range(k) if a2 != a for b in range(k))
        d1 += row_a * rows_other
        d2 += col_a * cols_other
    if d1 * d2 == 0:
        return 0.0
    return num / math.sqrt(d1 * d2)


def auroc_pairs(is_pos, scores):
    pos = [s for s, q in zip(scores, is_pos) if q]
    neg = [s for s, q in zip(scores, is_pos) if not q]
    wins = 0.0
    for sp in pos:
        for sn in neg:
            wins += 1.0 if sp > sn else 0.5 if sp == sn else 0.0
    return wins / (len(pos) * len(neg))


def auroc_macro_ovr(y_true, score_matrix, labels):
    vals = []
    for c, lab in enumerate(labels):
        vals.append(auroc_pairs([t == lab for t in y_true], [row[c] for row in score_matrix]))
    return sum(vals) / len(vals)
