import csv
import io
import json
import math

import numpy as np
import pytest

from prediction_consistency.bound_verifier import (
    BoundReport,
    RadialModel,
    SyntheticClassConfig,
    base_parameters,
    beta_hat,
    default_centers,
    draw_model,
    run_trials,
    verify_divergence_bound,
    verify_theorem,
)
from prediction_consistency.consistency import SamplerConfig
from prediction_consistency.errors import ConfigError

FUNCTIONS = ("linear", "radial", "mixture")


def test_config_validation():
    for bad in (dict(base_logit_fn="cubic"), dict(model_noise_std=-1), dict(d_e=0), dict(gain=0)):
        with pytest.raises(ConfigError):
            SyntheticClassConfig(**bad)


@pytest.mark.parametrize("fn", FUNCTIONS)
def test_draws(fn):
    probe = np.random.default_rng(0).normal(size=(50, 5))
    exact = SyntheticClassConfig(fn, model_noise_std=0.0)
    a, b = draw_model(exact, 1), draw_model(exact, 2)
    assert np.array_equal(a.predict_proba(probe), b.predict_proba(probe))
    noisy = SyntheticClassConfig(fn, model_noise_std=0.1)
    a, b = draw_model(noisy, 1), draw_model(noisy, 2)
    pa, pb = a.predict_proba(probe), b.predict_proba(probe)
    assert np.all(pa != pb)
    assert np.all((pa >= 0) & (pa <= 1))
    assert np.array_equal(draw_model(noisy, 1).predict_proba(probe), pa)
    assert all(not p.flags.writeable for p in base_parameters(noisy))


def test_radial_model_formula():
    m = RadialModel(np.array([1.0, 0.0]), 0.5, 2.0)
    x = np.array([[1.0, 0.0], [2.0, 1.0]])
    expected = 1 / (1 + np.exp(-2.0 * np.array([0.5, 0.5 - 2.0])))
    assert m.predict_proba(x) == pytest.approx(expected, abs=1e-15)


def test_trials_thread_independent():
    cfg = SyntheticClassConfig("mixture", 0.2)
    smp = SamplerConfig(seed=3)
    c = default_centers(cfg, 1)[0]
    one = run_trials(cfg, smp, c, 500)
    many = run_trials(cfg, smp, c, 500, threads=8)
    for f in ("z", "s", "f_center"):
        assert np.array_equal(getattr(one, f), getattr(many, f))


def test_zero_noise_never_fails():
    cfg = SyntheticClassConfig("radial", 0.0)
    c = default_centers(cfg, 1)[0]
    rep = verify_divergence_bound(cfg, SamplerConfig(), c, [0.01, 0.1], 300)
    assert all(cell["empirical_violation_rate"] == 0 for cell in rep.cells)
    assert rep.cells[0]["beta_hat"] == 0.0
    th = verify_theorem(cfg, SamplerConfig(), [c], [0.01, 0.1], 300)
    assert all(cell["empirical_violation_rate"] == 0 for cell in th.cells)
    assert rep.passed and th.passed


def test_large_eps_never_fails():
    cfg = SyntheticClassConfig("linear", 0.5, gain=20.0)
    c = default_centers(cfg, 1)[0]
    for verify in (verify_divergence_bound, verify_theorem):
        centers = c if verify is verify_divergence_bound else [c]
        rep = verify(cfg, SamplerConfig(), centers, [2.0, 2.5], 500)
        assert all(cell["violations"] == 0 for cell in rep.cells)


@pytest.mark.parametrize("fn", FUNCTIONS)
def test_moderate_noise_passes(fn):
    cfg = SyntheticClassConfig(fn, 0.1)
    c = default_centers(cfg, 1)[0]
    rep = verify_divergence_bound(cfg, SamplerConfig(), c, [0.05, 0.1, 0.2], 3000)
    assert rep.passed
    assert rep.implication_violations == 0


def test_failure_rate_nonincreasing_in_k():
    cfg = SyntheticClassConfig("linear", 0.3, gain=5.0)
    centers = default_centers(cfg, 1)
    rep = verify_theorem(cfg, SamplerConfig(), centers, [0.05, 0.1], 3000, k_grid=[10, 30, 100])
    assert rep.implication_violations == 0
    for eps in (0.05, 0.1):
        cells = sorted((c for c in rep.cells if c["epsilon"] == eps), key=lambda c: c["k"])
        for a, b in zip(cells, cells[1:]):
            slack = 3 * math.hypot(a["mc_std_error"], b["mc_std_error"])
            assert b["empirical_violation_rate"] <= a["empirical_violation_rate"] + slack


def test_z_symmetric_about_zero():
    cfg = SyntheticClassConfig("mixture", 0.3)
    log = run_trials(cfg, SamplerConfig(seed=5), default_centers(cfg, 1)[0], 4000)
    assert abs(log.z.mean()) <= 3 * log.z.std() / math.sqrt(len(log.z))
    pos, neg = np.sum(log.z > 0), np.sum(log.z < 0)
    assert abs(pos - neg) <= 3 * math.sqrt(pos + neg)


def test_cell_fields_and_serialization():
    cfg = SyntheticClassConfig("linear", 0.2, gain=5.0)
    c = default_centers(cfg, 2)
    rep = verify_theorem(cfg, SamplerConfig(), c, [0.05, 0.1], 400, k_grid=[10, 30])
    assert len(rep.cells) == 2 * 2 * 2
    for cell in rep.cells:
        p = cell["empirical_violation_rate"]
        assert 0 <= p <= 1
        assert cell["mc_std_error"] == math.sqrt(p * (1 - p) / 400)
        assert cell["violations"] == round(p * 400)
        assert cell["verdict"] == ("pass" if p <= cell["theoretical_bound"] + 3 * cell["mc_std_error"]
                                   else "fail")
    rows = list(csv.DictReader(io.StringIO(rep.to_csv())))
    assert len(rows) == 8 and tuple(rows[0]) == BoundReport.CSV_FIELDS
    doc = json.loads(rep.to_json())
    assert doc["kind"] == "theorem" and len(doc["cells"]) == 8


def test_beta_scale_inversion():
    # steep linear class: failure rates sit well above the bound once beta_hat is cut 100x
    cfg = SyntheticClassConfig("linear", 0.2, gain=20.0)
    c = default_centers(cfg, 1)
    kw = dict(k_grid=[100])
    honest = verify_theorem(cfg, SamplerConfig(), c, [0.1, 0.2], 2000, **kw)
    assert honest.passed
    shrunk = verify_theorem(cfg, SamplerConfig(), c, [0.1, 0.2], 2000, beta_scale=0.01, **kw)
    assert not shrunk.passed and len(shrunk.failing_cells()) == 2


def test_beta_hat_positive():
    cfg = SyntheticClassConfig("mixture", 0.1)
    beta, eps_prime = beta_hat(cfg, SamplerConfig(), default_centers(cfg, 1)[0], 20, 2)
    assert 0 < beta < 4 and eps_prime >= 0


def test_invalid_grids():
    cfg = SyntheticClassConfig()
    c = np.zeros(5)
    for args, kw in (([[], 10], {}), ([[0.1, -0.1], 10], {}), ([[0.1], 0], {}),
                     ([[0.1], 10], {"k_grid": []}), ([[0.1], 10], {"k_grid": [0]})):
        with pytest.raises(ConfigError):
            verify_divergence_bound(cfg, SamplerConfig(), c, *args, **kw)
    with pytest.raises(ConfigError):
        verify_theorem(cfg, SamplerConfig(), [], [0.1], 10)
