"""Margin-based scoring of change-point estimates against ground truth.

An estimate is a true positive when it lies within ``margin`` samples of a
truth point; each truth and each estimate is used at most once, and when
several estimates compete for one truth the closest wins while the rest are
false positives.  The matching maximises the number of true positives and,
among those, minimises the summed distance.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence


@dataclass
class EvalReport:
    margin: int
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float
    matched: list[tuple[int, int, int]] = field(default_factory=list)

    def to_text(self) -> str:
        keys = ("margin", "tp", "fp", "fn", "precision", "recall", "f1")
        return "".join(f"{k}: {getattr(self, k)}\n" for k in keys)

    def csv_row(self) -> list:
        return [self.margin, self.tp, self.fp, self.fn,
                repr(self.precision), repr(self.recall), repr(self.f1)]


CSV_HEADER = ["margin", "tp", "fp", "fn", "precision", "recall", "f1"]


def _check_sorted(xs: Sequence[int], what: str) -> list[int]:
    xs = [int(x) for x in xs]
    for a, b in zip(xs, xs[1:]):
        if b <= a:
            raise ValueError(f"{what} must be sorted and free of duplicates (saw {a} then {b})")
    return xs


def match(truth: Sequence[int], estimates: Sequence[int], margin: int) -> list[tuple[int, int, int]]:
    """Maximum-cardinality, minimum-total-distance matching under a distance cap.

    Some optimal matching never crosses (i-th matched truth pairs with the
    i-th matched estimate), so an alignment DP over the two sorted lists
    finds it.  Returns (truth, estimate, distance) triples.
    """
    n, m = len(truth), len(estimates)
    # score = (matches, -total_distance), compared lexicographically
    dp = [[(0, 0)] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        row, prev = dp[i], dp[i - 1]
        ti = truth[i - 1]
        for j in range(1, m + 1):
            best = max(prev[j], row[j - 1])
            dist = abs(ti - estimates[j - 1])
            if dist <= margin:
                c, neg = prev[j - 1]
                cand = (c + 1, neg - dist)
                if cand > best:
                    best = cand
            row[j] = best
    pairs = []
    i, j = n, m
    while i > 0 and j > 0:
        dist = abs(truth[i - 1] - estimates[j - 1])
        if dist <= margin:
            c, neg = dp[i - 1][j - 1]
            if dp[i][j] == (c + 1, neg - dist):
                pairs.append((truth[i - 1], estimates[j - 1], dist))
                i -= 1
                j -= 1
                continue
        if dp[i][j] == dp[i][j - 1]:
            j -= 1
        else:
            i -= 1
    pairs.reverse()
    return pairs


def match_and_score(truth: Sequence[int], estimates: Sequence[int], margin: int) -> EvalReport:
    if margin < 0:
        raise ValueError("margin must be >= 0")
    truth = _check_sorted(truth, "truth")
    estimates = _check_sorted(estimates, "estimates")
    pairs = match(truth, estimates, margin)
    tp = len(pairs)
    fp = len(estimates) - tp
    fn = len(truth) - tp
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return EvalReport(margin, tp, fp, fn, precision, recall, f1, pairs)


def report_suite(truth, estimates, margins) -> list[EvalReport]:
    return [match_and_score(truth, estimates, m) for m in margins]


def write_reports_csv(reports: Sequence[EvalReport], path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for r in reports:
            w.writerow(r.csv_row())
