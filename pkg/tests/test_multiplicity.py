import csv
import io
import json
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from helpers import constant_model
from prediction_consistency.errors import DataError
from prediction_consistency.model_zoo import build_competing_set
from prediction_consistency.multiplicity import (
    PER_POINT_FIELDS,
    MultiplicityReport,
    PredictionMatrix,
    arbitrariness,
    discrepancy,
    format_table,
    multiplicity_report,
    pairwise_disagreement,
    prediction_matrix,
    prediction_range,
    prediction_variance,
)
from prediction_consistency.tabular_data import EmbeddedDataset


# -- brute-force oracles written straight from the definitions ---------------------

def bf_label(p):
    return 1 if p >= 0.5 else 0


def bf_arbitrariness(P):
    m, n = len(P), len(P[0])
    flags = []
    for j in range(n):
        flags.append(int(any(bf_label(P[a][j]) != bf_label(P[b][j])
                             for a in range(m) for b in range(m) if a != b)))
    return flags


def bf_discrepancy(P, ref):
    m, n = len(P), len(P[0])
    best = Fraction(0)
    for i in range(m):
        if i != ref:
            best = max(best, Fraction(sum(bf_label(P[i][j]) != bf_label(P[ref][j]) for j in range(n)), n))
    return best


def bf_pd(P):
    m, n = len(P), len(P[0])
    out = []
    for j in range(n):
        c = sum(bf_label(P[a][j]) != bf_label(P[b][j]) for a in range(m) for b in range(m) if a != b)
        out.append(Fraction(c, m * (m - 1)))
    return out


def bf_pv(P):
    """Centered definition in exact rationals, rounded once."""
    m, n = len(P), len(P[0])
    out = []
    for j in range(n):
        col = [Fraction(P[i][j]) for i in range(m)]
        mu = sum(col) / m
        out.append(float(sum((v - mu) ** 2 for v in col) / m))
    return out


def bf_pr(P):
    cols = [[Fraction(v) for v in c] for c in zip(*P)]
    return [float(max(c) - min(c)) for c in cols]


matrices = st.integers(2, 5).flatmap(lambda m: st.integers(1, 20).flatmap(
    lambda n: arrays(float, (m, n), elements=st.sampled_from(
        [0.0, 0.1, 0.25, 0.4999, 0.5, 0.5001, 0.75, 0.9, 1.0]) | st.floats(0, 1))))


@settings(max_examples=200, deadline=None)
@given(matrices, st.data())
def test_against_brute_force(P, data):
    ref = data.draw(st.integers(0, P.shape[0] - 1))
    M = PredictionMatrix(P, ref)
    flags, rate = arbitrariness(M)
    L = P.tolist()
    assert flags.tolist() == bf_arbitrariness(L)
    assert rate == sum(bf_arbitrariness(L)) / P.shape[1]
    assert discrepancy(M) == float(bf_discrepancy(L, ref))
    assert pairwise_disagreement(M).tolist() == [float(v) for v in bf_pd(L)]
    assert prediction_variance(M).tolist() == bf_pv(L)
    assert prediction_range(M).tolist() == bf_pr(L)


def test_arbitrariness_examples():
    assert arbitrariness(PredictionMatrix([[0.6], [0.7], [0.9]]))[0].tolist() == [0]
    assert arbitrariness(PredictionMatrix([[0.45], [0.55]]))[0].tolist() == [1]
    assert arbitrariness(PredictionMatrix([[0.5], [0.4999]]))[0].tolist() == [1]
    assert arbitrariness(PredictionMatrix([[0.2, 0.9]]))[1] == 0.0


def test_discrepancy_examples():
    assert discrepancy(PredictionMatrix([[0.7, 0.2], [0.7, 0.2]])) == 0.0
    ref = [0.9, 0.9, 0.9, 0.9]
    a = [0.1, 0.9, 0.9, 0.9]
    b = [0.1, 0.1, 0.1, 0.9]
    assert discrepancy(PredictionMatrix([ref, a, b])) == 0.75
    assert discrepancy(PredictionMatrix([a, ref, b], ref_index=1)) == 0.75
    assert discrepancy(PredictionMatrix([[0.3, 0.8]])) == 0.0


def test_pd_examples():
    assert pairwise_disagreement(PredictionMatrix([[0.9], [0.9], [0.1], [0.1]]))[0] == 2 / 3
    assert pairwise_disagreement(PredictionMatrix([[0.9], [0.8]]))[0] == 0.0
    assert pairwise_disagreement(PredictionMatrix([[0.9], [0.1]]))[0] == 1.0
    with pytest.raises(DataError):
        pairwise_disagreement(PredictionMatrix([[0.9]]))


def test_pd_closed_form_exhaustive():
    for m in range(2, 11):
        for a in range(m + 1):
            P = [[0.9]] * a + [[0.1]] * (m - a)
            assert Fraction(pairwise_disagreement(PredictionMatrix(P))[0]).limit_denominator(10**6) == \
                Fraction(2 * a * (m - a), m * (m - 1))


def test_pv_and_pr_examples():
    assert prediction_variance(PredictionMatrix([[0.3], [0.7]]))[0] == pytest.approx(0.04, abs=1e-16)
    assert prediction_variance(PredictionMatrix([[0.4], [0.4], [0.4]]))[0] == 0.0
    assert prediction_variance(PredictionMatrix([[0.0], [1.0]]))[0] == 0.25
    assert prediction_range(PredictionMatrix([[0.3], [0.7]]))[0] == pytest.approx(0.4, abs=1e-15)
    assert prediction_range(PredictionMatrix([[0.4], [0.4]]))[0] == 0.0
    assert prediction_range(PredictionMatrix([[0.1], [0.5], [0.95]]))[0] == pytest.approx(0.85, abs=1e-15)


@settings(max_examples=200, deadline=None)
@given(matrices, st.data())
def test_properties(P, data):
    ref = data.draw(st.integers(0, P.shape[0] - 1))
    M = PredictionMatrix(P, ref)
    pv, pr = prediction_variance(M), prediction_range(M)
    assert np.all(pv <= pr ** 2 / 4 + 1e-15)
    flags, rate = arbitrariness(M)
    assert np.array_equal(flags, (pairwise_disagreement(M) > 0).astype(int))
    assert rate >= discrepancy(M)
    perm = data.draw(st.permutations(range(P.shape[0])))
    Q = PredictionMatrix(P[list(perm)], list(perm).index(ref))
    assert np.array_equal(arbitrariness(Q)[0], flags)
    assert np.array_equal(pairwise_disagreement(Q), pairwise_disagreement(M))
    assert np.array_equal(prediction_variance(Q), pv)
    assert np.array_equal(prediction_range(Q), pr)
    assert discrepancy(Q) == discrepancy(M)


def test_matrix_validation():
    for bad in ([[1.2]], [[-0.1]], [[np.nan]], np.zeros((0, 3)), [0.5, 0.5]):
        with pytest.raises(DataError):
            PredictionMatrix(bad)
    with pytest.raises(DataError):
        PredictionMatrix([[0.5]], ref_index=1)
    with pytest.raises(DataError):
        PredictionMatrix([[0.5, 0.5]], point_ids=["a"])


def test_prediction_matrix_from_competing_set():
    pts = EmbeddedDataset(np.random.default_rng(0).normal(size=(200, 2)), np.zeros(200))
    models = [constant_model(0.3, 2) for _ in range(40)]
    cs = build_competing_set(models, models[0], pts, 0.02)
    M = prediction_matrix(cs, pts)
    assert M.probs.shape == (40, 200)
    assert np.all(M.probs == M.probs[0])
    single = build_competing_set(models[:1], models[0], pts.subset([0]), 0.02)
    assert prediction_matrix(single, pts.subset([0])).probs.shape == (1, 1)


def test_report_examples():
    one = multiplicity_report(PredictionMatrix([[0.2, 0.7, 0.5]]), [0.8])
    agg = one.aggregate
    assert (agg["arbitrariness_rate"], agg["discrepancy"], agg["avg_pairwise_disagreement"],
            agg["avg_prediction_variance"], agg["avg_prediction_range"]) == (0, 0, 0, 0, 0)
    assert agg["mean_model_accuracy"] == 0.8
    two = multiplicity_report(PredictionMatrix([[0.2, 0.7], [0.2, 0.7]]), [0.8, 0.8]).aggregate
    assert all(two[k] == 0 for k in ("arbitrariness_rate", "discrepancy", "avg_pairwise_disagreement",
                                     "avg_prediction_variance", "avg_prediction_range"))
    hand = multiplicity_report(PredictionMatrix([[0.6, 0.4], [0.7, 0.6], [0.2, 0.9]]), [0.5, 0.6, 0.7])
    assert hand.aggregate["arbitrariness_rate"] == 1.0
    # reference row 0: labels [1, 0]; row 1 [1, 1]; row 2 [0, 1]
    assert hand.aggregate["discrepancy"] == 1.0
    assert hand.pairwise_disagreement.tolist() == [2 / 3, 2 / 3]
    assert hand.prediction_range == pytest.approx([0.5, 0.5], abs=1e-15)
    with pytest.raises(DataError):
        multiplicity_report(PredictionMatrix([[0.2], [0.3]]), [0.9])


def test_aggregates_recomputed_from_csv():
    rng = np.random.default_rng(3)
    M = PredictionMatrix(rng.uniform(size=(6, 50)), 2, [f"p{j}" for j in range(50)])
    rep = multiplicity_report(M, rng.uniform(0.7, 0.9, size=6))
    rows = list(csv.DictReader(io.StringIO(rep.to_csv())))
    assert [r["point_id"] for r in rows] == M.point_ids
    col = lambda f: [float(r[f]) for r in rows]
    assert rep.aggregate["arbitrariness_rate"] == sum(col("arbitrariness")) / 50
    assert rep.aggregate["avg_pairwise_disagreement"] == math.fsum(col("pairwise_disagreement")) / 50
    assert rep.aggregate["avg_prediction_variance"] == math.fsum(col("prediction_variance")) / 50
    assert rep.aggregate["avg_prediction_range"] == math.fsum(col("prediction_range")) / 50
    assert rep.aggregate["discrepancy"] == discrepancy(M)
    back = MultiplicityReport.from_dict(json.loads(rep.to_json()))
    for f in PER_POINT_FIELDS:
        assert np.array_equal(back.per_point(f), rep.per_point(f))
    assert back.aggregate == rep.aggregate and back.point_ids == rep.point_ids


def test_table_layout():
    rep = multiplicity_report(PredictionMatrix([[0.6, 0.4], [0.7, 0.6], [0.2, 0.9]]), [0.5, 0.6, 0.7])
    text = format_table(rep)
    for title in ("Arbitrariness", "Discrepancy", "Avg. Pairwise Disagreement", "Avg. Pred. Variance",
                  "Avg. Pred. Range", "Avg. Model Accuracy"):
        assert title in text
    assert "100%" in text and "60%" in text
