"""Monte Carlo checks of the neighborhood-divergence tail bound and the consistency guarantee.

Models are drawn i.i.d. from a synthetic stochastic class: a fixed smooth base score
function whose parameters receive independent Gaussian perturbations per draw. For each
trial two models ``F, F'`` are drawn and one neighborhood of the center is sampled; the
trial records ``Z``, ``S(x, F')`` and ``F(x)``. Per ``(k, eps)`` cell the empirical
frequency of the failure event is compared against the closed-form bound evaluated at the
plug-in variance estimate ``beta_hat``.
"""
from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

from .consistency import (
    SamplerConfig,
    divergence_terms,
    pair_statistics,
    sample_offsets,
    score_from_predictions,
    theorem_bound,
)
from .errors import ConfigError
from .model_zoo import ScoreModel, TrainConfig, sigmoid
from .seeding import derive_seed, rng_for

BASE_FUNCTIONS = ("linear", "radial", "mixture")
MIXTURE_UNITS = 3

# seed-path tags
_BASE, _DRAW, _TRIAL, _BETA, _CENTERS = 0, 1, 2, 3, 4


@dataclass(frozen=True)
class SyntheticClassConfig:
    base_logit_fn: str = "linear"
    model_noise_std: float = 0.1
    d_e: int = 5
    seed: int = 0
    gain: float = 1.0

    def __post_init__(self):
        if self.base_logit_fn not in BASE_FUNCTIONS:
            raise ConfigError(f"base_logit_fn must be one of {BASE_FUNCTIONS}")
        if self.model_noise_std < 0:
            raise ConfigError("model_noise_std must be >= 0")
        if self.d_e < 1:
            raise ConfigError("d_e must be positive")
        if not self.gain > 0:
            raise ConfigError("gain must be > 0")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class RadialModel:
    """``sigmoid(gain * (level - ||x - center||^2))``."""

    center: np.ndarray
    level: float
    gain: float

    @property
    def d_e(self) -> int:
        return self.center.shape[0]

    def predict_proba(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        diff = X - self.center
        return sigmoid(self.gain * (self.level - np.sum(diff * diff, axis=1)))


@lru_cache(maxsize=64)
def base_parameters(config: SyntheticClassConfig) -> tuple:
    rng = rng_for(config.seed, _BASE)
    d = config.d_e
    if config.base_logit_fn == "linear":
        w = rng.normal(size=d)
        params = (w / np.linalg.norm(w), np.zeros(1))
    elif config.base_logit_fn == "radial":
        params = (0.5 * rng.normal(size=d) / math.sqrt(d), np.ones(1))
    else:
        params = (rng.normal(size=(d, MIXTURE_UNITS)) / math.sqrt(d),
                  0.5 * rng.normal(size=MIXTURE_UNITS), rng.normal(size=(MIXTURE_UNITS, 1)),
                  np.zeros(1))
    for p in params:
        p.flags.writeable = False
    return params


def draw_model(config: SyntheticClassConfig, sub_seed: int):
    """One member of the class. ``model_noise_std = 0`` returns the base function exactly."""
    rng = rng_for(config.seed, _DRAW, sub_seed)
    params = [p + config.model_noise_std * rng.normal(size=p.shape) for p in base_parameters(config)]
    g = config.gain
    if config.base_logit_fn == "linear":
        w, b = params
        return ScoreModel("logistic", (g * w.reshape(-1, 1),), (g * b,), int(sub_seed),
                          TrainConfig("logistic"))
    if config.base_logit_fn == "radial":
        c, level = params
        return RadialModel(c, float(level[0]), g)
    U, c, a, b = params
    return ScoreModel("mlp", (U, g * a), (c, g * b), int(sub_seed),
                      TrainConfig("mlp", hidden_widths=(MIXTURE_UNITS,)))


def default_centers(config: SyntheticClassConfig, n: int) -> np.ndarray:
    return 0.5 * rng_for(config.seed, _CENTERS).normal(size=(n, config.d_e))


@dataclass
class TrialLog:
    """Per-trial records for one (center, k)."""

    z: np.ndarray
    s: np.ndarray
    f_center: np.ndarray


def run_trials(config: SyntheticClassConfig, sampler: SamplerConfig, center, trials: int,
               threads: int = 1, stream: int = 0) -> TrialLog:
    """Trial ``t`` draws ``F``, ``F'`` and a neighborhood from seeds derived from ``t``."""
    center = np.asarray(center, dtype=float)
    d = center.shape[0]

    def one(t):
        f = draw_model(config, derive_seed(sampler.seed, _TRIAL, stream, t, 0))
        g = draw_model(config, derive_seed(sampler.seed, _TRIAL, stream, t, 1))
        offsets = sample_offsets(d, sampler, rng_for(sampler.seed, _TRIAL, stream, t, 2))
        pts = np.vstack([center[None, :], center + offsets])
        pf, pg = f.predict_proba(pts), g.predict_proba(pts)
        z = float(np.mean(divergence_terms(pf[0], pf[1:], pg[0], pg[1:])))
        return z, score_from_predictions(pg[0], pg[1:]).value, float(pf[0])

    if threads <= 1:
        out = [one(t) for t in range(trials)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            out = list(pool.map(one, range(trials), chunksize=256))
    arr = np.array(out, dtype=float).reshape(trials, 3)
    return TrialLog(arr[:, 0], arr[:, 1], arr[:, 2])


def beta_hat(config: SyntheticClassConfig, sampler: SamplerConfig, center,
             n_pairs: int = 200, n_rounds: int = 5) -> tuple[float, float]:
    """``(beta_hat, eps_prime_hat)`` from ``n_pairs`` i.i.d. pairs drawn apart from the trials."""
    pairs = [(draw_model(config, derive_seed(sampler.seed, _BETA, p, 0)),
              draw_model(config, derive_seed(sampler.seed, _BETA, p, 1))) for p in range(n_pairs)]
    return pair_statistics(pairs, center, sampler.with_seed(derive_seed(sampler.seed, _BETA)), n_rounds)


@dataclass
class BoundReport:
    kind: str
    cells: list
    meta: dict = field(default_factory=dict)
    logs: dict = field(default_factory=dict, repr=False)

    @property
    def passed(self) -> bool:
        return all(c["verdict"] == "pass" for c in self.cells)

    @property
    def implication_violations(self) -> int:
        return sum(c["implication_violations"] for c in self.cells)

    def failing_cells(self) -> list:
        return [c for c in self.cells if c["verdict"] != "pass"]

    def to_dict(self) -> dict:
        return {"kind": self.kind, "meta": self.meta, "passed": self.passed,
                "implication_violations": self.implication_violations, "cells": self.cells}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    CSV_FIELDS = ("center", "k", "epsilon", "theoretical_bound", "empirical_violation_rate",
                  "violations", "mc_trials", "mc_std_error", "beta_hat", "eps_prime_hat", "premise_holds",
                  "implication_violations", "verdict")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.CSV_FIELDS)
        for c in self.cells:
            w.writerow([repr(c[f]) if isinstance(c[f], float) else c[f] for f in self.CSV_FIELDS])
        return buf.getvalue()


def _validate(eps_grid, trials, k_grid):
    if not eps_grid or any(not e > 0 for e in eps_grid):
        raise ConfigError("eps_grid must be a non-empty list of positive values")
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    if not k_grid or any(int(k) != k or k < 1 for k in k_grid):
        raise ConfigError("k_grid must be a non-empty list of positive integers")


def _cell(center_idx, k, eps, events, implication_bad, beta, eps_prime, beta_scale, trials) -> dict:
    count = int(events.sum())
    rate = count / trials
    se = math.sqrt(rate * (1.0 - rate) / trials)
    bound = theorem_bound(k, beta * beta_scale, eps)
    return {
        "center": center_idx, "k": int(k), "epsilon": float(eps),
        "theoretical_bound": bound, "empirical_violation_rate": rate, "violations": count,
        "mc_trials": trials, "mc_std_error": se, "beta_hat": beta * beta_scale,
        "implication_violations": int(implication_bad),
        "eps_prime_hat": eps_prime, "premise_holds": bool(eps > 2.0 * eps_prime),
        "verdict": "pass" if rate <= bound + 3.0 * se else "fail",
    }


def _verify(kind, config, sampler, centers, eps_grid, trials, k_grid, beta_scale,
            beta_pairs, beta_rounds, threads) -> BoundReport:
    k_grid = [sampler.k] if k_grid is None else list(k_grid)
    _validate(eps_grid, trials, k_grid)
    cells, logs = [], {}
    for ci, center in enumerate(centers):
        for k in k_grid:
            smp = SamplerConfig(int(k), sampler.gaussian_std, sampler.radius_sigma, sampler.seed)
            beta, eps_prime = beta_hat(config, smp, center, beta_pairs, beta_rounds)
            log = run_trials(config, smp, center, trials, threads, stream=ci)
            logs[(ci, int(k))] = log
            for eps in eps_grid:
                failed = log.f_center < log.s - eps
                implication_bad = np.sum((log.z < eps) & failed)
                events = log.z >= eps if kind == "divergence" else failed
                cells.append(_cell(ci, k, eps, events, implication_bad, beta, eps_prime,
                                   beta_scale, trials))
    meta = {"synthetic_class": config.to_dict(), "sampler": sampler.to_dict(),
            "eps_grid": [float(e) for e in eps_grid], "k_grid": [int(k) for k in k_grid],
            "trials": trials, "beta_scale": beta_scale, "beta_pairs": beta_pairs,
            "beta_rounds": beta_rounds, "centers": [np.asarray(c, float).tolist() for c in centers]}
    return BoundReport(kind, cells, meta, logs)


def verify_divergence_bound(config: SyntheticClassConfig, sampler: SamplerConfig, center,
                            eps_grid: Sequence[float], trials: int, *, k_grid=None,
                            beta_scale: float = 1.0, beta_pairs: int = 200, beta_rounds: int = 5,
                            threads: int = 1) -> BoundReport:
    """Empirical ``Pr(Z >= eps)`` against the bound, one cell per (k, eps)."""
    return _verify("divergence", config, sampler, [np.asarray(center, float)], eps_grid, trials,
                   k_grid, beta_scale, beta_pairs, beta_rounds, threads)


def verify_theorem(config: SyntheticClassConfig, sampler: SamplerConfig, centers,
                   eps_grid: Sequence[float], trials: int, *, k_grid=None,
                   beta_scale: float = 1.0, beta_pairs: int = 200, beta_rounds: int = 5,
                   threads: int = 1) -> BoundReport:
    """Empirical ``Pr(F(x) < S(x, F') - eps)`` against the bound, one cell per (center, k, eps)."""
    centers = [np.asarray(c, float) for c in centers]
    if not centers:
        raise ConfigError("need at least one center")
    return _verify("theorem", config, sampler, centers, eps_grid, trials, k_grid, beta_scale,
                   beta_pairs, beta_rounds, threads)
