"""Spearman rank correlation with tie-averaged ranks, and the consistency-vs-multiplicity table."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .multiplicity import PER_POINT_FIELDS, MultiplicityReport

METRIC_TITLES = {
    "arbitrariness": "Arbitrariness",
    "pairwise_disagreement": "Pairwise Disagreement",
    "prediction_variance": "Prediction Variance",
    "prediction_range": "Prediction Range",
}
MEASURES = {"consistency": "Consistency", "predicted_probability": "Pred. Prob."}


class UndefinedCorrelationError(DataError):
    """Correlation with a constant sequence."""


def average_ranks(values) -> np.ndarray:
    """Ranks 1..n; tied values share the mean of the positions they occupy."""
    v = np.asarray(values, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise DataError("average_ranks needs a non-empty 1-d sequence")
    if not np.all(np.isfinite(v)):
        raise DataError("average_ranks: input contains NaN or infinite values")
    order = np.argsort(v, kind="mergesort")
    sorted_v = v[order]
    ranks = np.empty(v.size)
    # boundaries of runs of equal values in sorted order
    starts = np.flatnonzero(np.r_[True, sorted_v[1:] != sorted_v[:-1]])
    ends = np.r_[starts[1:], v.size]
    for s, e in zip(starts, ends):
        ranks[order[s:e]] = (s + 1 + e) / 2.0
    return ranks


def _paired(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise DataError(f"spearman: length mismatch ({x.shape} vs {y.shape})")
    if x.size < 2:
        raise DataError("spearman needs at least two observations")
    return x, y


def spearman(x, y) -> float:
    """Pearson correlation of average ranks (valid with ties)."""
    x, y = _paired(x, y)
    rx, ry = average_ranks(x), average_ranks(y)
    cx, cy = rx - rx.mean(), ry - ry.mean()
    sxx, syy = float(np.dot(cx, cx)), float(np.dot(cy, cy))
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedCorrelationError("spearman: a constant sequence has no rank correlation")
    rho = float(np.dot(cx, cy)) / math.sqrt(sxx * syy)
    return min(1.0, max(-1.0, rho))


def spearman_squared_rank_diff(x, y) -> float:
    """``1 - 6 sum d_i^2 / (n (n^2 - 1))``; only equals :func:`spearman` for tie-free data."""
    x, y = _paired(x, y)
    d = average_ranks(x) - average_ranks(y)
    n = x.size
    return 1.0 - 6.0 * float(np.dot(d, d)) / (n * (n * n - 1))


@dataclass
class CorrelationReport:
    """Absolute Spearman correlations; ``None`` marks an undefined (constant-column) cell."""

    cells: dict
    n_points: int
    meta: dict = field(default_factory=dict)

    def value(self, measure: str, metric: str):
        return self.cells[measure][metric]

    def wins(self) -> int:
        """Metrics on which consistency correlates strictly more strongly than f(x)."""
        n = 0
        for metric in METRIC_TITLES:
            c, p = self.cells["consistency"][metric], self.cells["predicted_probability"][metric]
            if c is not None and p is not None and c > p:
                n += 1
        return n

    @property
    def all_undefined(self) -> bool:
        return all(v is None for row in self.cells.values() for v in row.values())

    def to_dict(self) -> dict:
        return {"meta": self.meta, "n_points": self.n_points, "abs_spearman": self.cells}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_text(self) -> str:
        head = ["Measure"] + [METRIC_TITLES[m] for m in METRIC_TITLES]
        rows = []
        for key, title in MEASURES.items():
            cells = self.cells[key]
            rows.append([title] + ["undefined" if cells[m] is None else f"{cells[m]:.2f}"
                                   for m in METRIC_TITLES])
        widths = [max(len(r[i]) for r in [head] + rows) for i in range(len(head))]
        fmt = lambda r: " | ".join(c.ljust(w) if i == 0 else c.rjust(w)
                                   for i, (c, w) in enumerate(zip(r, widths)))
        lines = [fmt(head), "-+-".join("-" * w for w in widths)] + [fmt(r) for r in rows]
        return "\n".join(lines) + "\n"


def correlate_report(consistency, pred_prob, multiplicity: MultiplicityReport) -> CorrelationReport:
    """|Spearman| of consistency and of f(x) against each per-point multiplicity metric."""
    s = np.asarray(consistency, dtype=float)
    p = np.asarray(pred_prob, dtype=float)
    n = len(multiplicity.point_ids)
    if s.shape != (n,) or p.shape != (n,):
        raise DataError(f"misaligned inputs: {s.shape[0]} consistency values, {p.shape[0]} "
                        f"probabilities, {n} multiplicity points")
    cells = {}
    for key, measure in (("consistency", s), ("predicted_probability", p)):
        row = {}
        for metric in PER_POINT_FIELDS:
            try:
                row[metric] = abs(spearman(measure, multiplicity.per_point(metric)))
            except UndefinedCorrelationError:
                row[metric] = None
        cells[key] = row
    return CorrelationReport(cells, n)
