"""Brute-force reference implementations used to check the metric code."""

from fractions import Fraction
from math import comb


def ba_bruteforce(y_true, y_pred):
    classes = sorted(set(y_true))
    recalls = []
    for c in classes:
        hit = sum(1 for t, p in zip(y_true, y_pred) if t == c and p == c)
        tot = sum(1 for t in y_true if t == c)
        recalls.append(Fraction(hit, tot))
    return float(sum(recalls) / len(recalls))


def micro_f1_bruteforce(y_true, y_pred):
    classes = sorted(set(y_true) | set(y_pred))
    tp = fp = fn = 0
    for c in classes:
        for t, p in zip(y_true, y_pred):
            tp += t == c and p == c
            fp += t != c and p == c
            fn += t == c and p != c
    return float(Fraction(2 * tp, 2 * tp + fp + fn))


def auroc_bruteforce(y_true, score):
    pos = [s for t, s in zip(y_true, score) if t == 1]
    neg = [s for t, s in zip(y_true, score) if t == 0]
    total = Fraction(0)
    for p in pos:
        for n in neg:
            total += 1 if p > n else Fraction(1, 2) if p == n else 0
    return float(total / (len(pos) * len(neg)))


def mcnemar_bruteforce(correct_a, correct_b):
    b = sum(1 for a, c in zip(correct_a, correct_b) if a and not c)
    c = sum(1 for a, cc in zip(correct_a, correct_b) if cc and not a)
    n = b + c
    if n == 0:
        return 1.0
    tail = sum(Fraction(comb(n, k), 2 ** n) for k in range(min(b, c) + 1))
    return float(min(Fraction(1), 2 * tail))
