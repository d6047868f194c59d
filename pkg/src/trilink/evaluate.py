"""Quality metrics for best-match-per-query linkage.

Per threshold, a query "returns a match" when its best score is strictly
above the threshold.  FP counts returned matches that point at the wrong
row or whose query has no counterpart; FN counts queries with a counterpart
that return no match or the wrong row.  A wrong row above the threshold is
therefore both an FP and an FN, and the total is FP + FN.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.stats import rankdata

from .config import TAU_SCALE, tau_to_fixed

DEFAULT_THRESHOLDS = (0.60, 0.65, 0.70, 0.75, 0.80, 0.85)


@dataclass(frozen=True)
class QueryOutcome:
    """Best match of one query: row index and score fraction."""

    index: int
    n: int
    d: int


@dataclass
class EvalReport:
    thresholds: list
    fp: list
    fn: list
    total: list
    best_threshold: float
    best_total: int
    auc: float
    queries: int
    positives: int

    def rows(self) -> list:
        return [
            {"threshold": t, "fp": fp, "fn": fn, "total": tot, "error_rate": tot / self.queries}
            for t, fp, fn, tot in zip(self.thresholds, self.fp, self.fn, self.total)
        ]

    def write(self, path, delimiter: str = ",") -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=["threshold", "fp", "fn", "total", "error_rate"], delimiter=delimiter)
            w.writeheader()
            w.writerows(self.rows())

    def summary(self) -> str:
        lines = [f"queries {self.queries}, with counterpart {self.positives}", "threshold  FP  FN  total"]
        for r in self.rows():
            lines.append(f"{r['threshold']:.2f}  {r['fp']}  {r['fn']}  {r['total']}")
        lines.append(f"best threshold {self.best_threshold:.2f} (total errors {self.best_total})")
        lines.append(f"ROC AUC {self.auc:.4f}")
        return "\n".join(lines)

    @property
    def fp_monotone(self) -> bool:
        return all(a >= b for a, b in zip(self.fp, self.fp[1:]))

    @property
    def fn_monotone(self) -> bool:
        return all(a <= b for a, b in zip(self.fn, self.fn[1:]))


def rank_auc(scores, labels) -> float:
    """Mann-Whitney estimate of ROC AUC; ties count one half."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=bool)
    pos, neg = int(labels.sum()), int((~labels).sum())
    if pos == 0 or neg == 0:
        raise ValueError("AUC needs both positive and negative queries")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - pos * (pos + 1) / 2) / (pos * neg))


def evaluate(results, truth, thresholds=DEFAULT_THRESHOLDS) -> EvalReport:
    """Per-threshold FP/FN plus AUC over (best score, has counterpart)."""
    results, truth = list(results), list(truth)
    if len(results) != len(truth):
        raise ValueError(f"{len(results)} results for {len(truth)} truth rows")
    if not thresholds:
        raise ValueError("at least one threshold is required")
    thresholds = sorted(float(t) for t in thresholds)
    n = np.array([r.n for r in results], dtype=object)
    d = np.array([r.d for r in results], dtype=object)
    has = np.array([t is not None for t in truth])
    right = np.array([t is not None and r.index == t for r, t in zip(results, truth)])

    fps, fns, totals = [], [], []
    for tau in thresholds:
        tf = tau_to_fixed(tau)
        matched = np.array([ni * TAU_SCALE > tf * di for ni, di in zip(n, d)], dtype=bool)
        fp = int(np.sum(matched & ~right))
        fn = int(np.sum(has & ~(matched & right)))
        fps.append(fp)
        fns.append(fn)
        totals.append(fp + fn)
    best = int(np.argmin(totals))
    scores = [float(Fraction(int(ni), int(di))) for ni, di in zip(n, d)]
    auc = rank_auc(scores, has) if 0 < has.sum() < len(has) else float("nan")
    return EvalReport(thresholds, fps, fns, totals, thresholds[best], totals[best], auc, len(results), int(has.sum()))


def parse_thresholds(text: str) -> list:
    """'0.6,0.65' or 'start:stop:step' (inclusive stop)."""
    text = text.strip()
    if ":" in text:
        start, stop, step = (Fraction(p) for p in text.split(":"))
        if step <= 0:
            raise ValueError("threshold step must be positive")
        out, t = [], start
        while t <= stop:
            out.append(float(t))
            t += step
        return out
    return [float(p) for p in text.split(",") if p.strip()]
