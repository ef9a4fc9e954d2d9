"""Multiplicity metrics over an m-models x n-points matrix of predicted probabilities.

Label-based metrics (arbitrariness, discrepancy, pairwise disagreement) are computed
from integer counts of positive labels, with label = 1 iff probability >= 0.5.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import DataError
from .model_zoo import CompetingSet, labels_from_probs
from .tabular_data import EmbeddedDataset

PER_POINT_FIELDS = ("arbitrariness", "pairwise_disagreement", "prediction_variance", "prediction_range")


@dataclass
class PredictionMatrix:
    probs: np.ndarray
    ref_index: int = 0
    point_ids: list = field(default=None)

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=float)
        if self.probs.ndim != 2 or min(self.probs.shape) < 1:
            raise DataError(f"prediction matrix must be m x n with m, n >= 1, got {self.probs.shape}")
        if np.any(~np.isfinite(self.probs)) or np.any(self.probs < 0) or np.any(self.probs > 1):
            raise DataError("prediction matrix entries must lie in [0, 1]")
        if not 0 <= self.ref_index < self.probs.shape[0]:
            raise DataError(f"ref_index {self.ref_index} out of range")
        if self.point_ids is None:
            self.point_ids = list(range(self.probs.shape[1]))
        elif len(self.point_ids) != self.probs.shape[1]:
            raise DataError("point_ids length does not match number of columns")

    @property
    def n_models(self) -> int:
        return self.probs.shape[0]

    @property
    def n_points(self) -> int:
        return self.probs.shape[1]

    @property
    def labels(self) -> np.ndarray:
        return labels_from_probs(self.probs)


def prediction_matrix(cset: CompetingSet, points: EmbeddedDataset) -> PredictionMatrix:
    probs = np.vstack([m.predict_proba(points.points) for m in cset.members])
    return PredictionMatrix(probs, cset.ref_index, list(points.point_ids))


def positive_counts(matrix: PredictionMatrix) -> np.ndarray:
    return matrix.labels.sum(axis=0)


def arbitrariness(matrix: PredictionMatrix):
    """Per-point conflict flags and their mean (the arbitrariness rate)."""
    a = positive_counts(matrix)
    flags = ((a > 0) & (a < matrix.n_models)).astype(int)
    return flags, int(flags.sum()) / matrix.n_points


def discrepancy(matrix: PredictionMatrix) -> float:
    """Largest fraction of points on which one competitor's labels differ from the reference's."""
    labels = matrix.labels
    flips = (labels != labels[matrix.ref_index]).sum(axis=1)
    flips[matrix.ref_index] = 0
    return int(flips.max()) / matrix.n_points


def pairwise_disagreement(matrix: PredictionMatrix) -> np.ndarray:
    """Fraction of ordered model pairs that disagree at each point: ``2a(m-a) / (m(m-1))``."""
    m = matrix.n_models
    if m < 2:
        raise DataError("pairwise disagreement needs at least two models")
    a = positive_counts(matrix)
    return (2 * a * (m - a)) / (m * (m - 1))


def prediction_variance(matrix: PredictionMatrix) -> np.ndarray:
    """Population variance (1/m normalization) of the probabilities at each point.

    Evaluated in exact rational arithmetic and rounded once, so the result does not
    depend on summation order and constant columns give exactly 0.
    """
    m = matrix.n_models
    out = np.empty(matrix.n_points)
    for j, col in enumerate(matrix.probs.T.tolist()):
        fr = [Fraction(v) for v in col]
        s1 = sum(fr)
        s2 = sum(f * f for f in fr)
        out[j] = float((m * s2 - s1 * s1) / (m * m))
    return out


def prediction_range(matrix: PredictionMatrix) -> np.ndarray:
    return matrix.probs.max(axis=0) - matrix.probs.min(axis=0)


@dataclass
class MultiplicityReport:
    point_ids: list
    arbitrariness: np.ndarray
    pairwise_disagreement: np.ndarray
    prediction_variance: np.ndarray
    prediction_range: np.ndarray
    aggregate: dict
    accuracies: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def per_point(self, name: str) -> np.ndarray:
        if name not in PER_POINT_FIELDS:
            raise KeyError(name)
        return getattr(self, name)

    def to_dict(self) -> dict:
        points = [
            {"point_id": pid, **{f: _num(getattr(self, f)[j]) for f in PER_POINT_FIELDS}}
            for j, pid in enumerate(self.point_ids)
        ]
        return {"meta": self.meta, "aggregate": self.aggregate,
                "model_accuracies": [float(a) for a in self.accuracies], "points": points}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("point_id",) + PER_POINT_FIELDS)
        for j, pid in enumerate(self.point_ids):
            w.writerow([pid] + [repr(_num(getattr(self, f)[j])) for f in PER_POINT_FIELDS])
        return buf.getvalue()

    @classmethod
    def from_dict(cls, d) -> "MultiplicityReport":
        pts = d["points"]
        cols = {f: np.array([p[f] for p in pts], dtype=float) for f in PER_POINT_FIELDS}
        cols["arbitrariness"] = cols["arbitrariness"].astype(int)
        return cls([p["point_id"] for p in pts], aggregate=d["aggregate"],
                   accuracies=d.get("model_accuracies", []), meta=d.get("meta", {}), **cols)


def _num(v):
    return int(v) if isinstance(v, (np.integer, int)) else float(v)


def multiplicity_report(matrix: PredictionMatrix, accuracies) -> MultiplicityReport:
    accuracies = [float(a) for a in accuracies]
    if len(accuracies) != matrix.n_models:
        raise DataError(f"{len(accuracies)} accuracies for {matrix.n_models} models")
    flags, rate = arbitrariness(matrix)
    if matrix.n_models >= 2:
        pd = pairwise_disagreement(matrix)
    else:
        pd = np.zeros(matrix.n_points)
    pv = prediction_variance(matrix)
    pr = prediction_range(matrix)
    n = matrix.n_points
    aggregate = {
        "n_models": matrix.n_models,
        "n_points": n,
        "arbitrariness_rate": rate,
        "discrepancy": discrepancy(matrix),
        "avg_pairwise_disagreement": math.fsum(pd.tolist()) / n,
        "avg_prediction_variance": math.fsum(pv.tolist()) / n,
        "avg_prediction_range": math.fsum(pr.tolist()) / n,
        "mean_model_accuracy": math.fsum(accuracies) / len(accuracies),
    }
    return MultiplicityReport(list(matrix.point_ids), flags, pd, pv, pr, aggregate, accuracies)


TABLE_COLUMNS = (
    ("Arbitrariness", "arbitrariness_rate", "pct"),
    ("Discrepancy", "discrepancy", "pct"),
    ("Avg. Pairwise Disagreement", "avg_pairwise_disagreement", "pct"),
    ("Avg. Pred. Variance", "avg_prediction_variance", "num"),
    ("Avg. Pred. Range", "avg_prediction_range", "num"),
    ("Avg. Model Accuracy", "mean_model_accuracy", "pct"),
)


def format_table(report: MultiplicityReport) -> str:
    head, vals = [], []
    for title, key, kind in TABLE_COLUMNS:
        v = report.aggregate[key]
        head.append(title)
        vals.append(f"{100 * v:.0f}%" if kind == "pct" else f"{v:.2f}")
    widths = [max(len(h), len(v)) for h, v in zip(head, vals)]
    line = lambda cells: " | ".join(c.rjust(w) for c, w in zip(cells, widths))
    return "\n".join([line(head), "-+-".join("-" * w for w in widths), line(vals)]) + "\n"
