"""Neighborhood sampling, the consistency score, the neighborhood divergence statistic and
the probabilistic bound it feeds.

For a model ``f`` and input ``x`` with ``k`` neighbors ``x_1..x_k`` drawn from the open
ball of radius ``radius_sigma`` around ``x``::

    S(x, f) = mean_i [ f(x_i) - |f(x) - f(x_i)| ]

and for a pair of models ``(f, f')`` sharing one neighborhood::

    Z_i = f'(x_i) - f(x_i) - |f'(x_i) - f'(x)| + |f(x_i) - f(x)|,   Z = mean_i Z_i

so that ``Z = S(x, f') - S(x, f)``. Since ``S(x, f) <= f(x)`` always, ``Z < eps``
forces ``f(x) > S(x, f') - eps``; that implication is what turns a tail bound on ``Z``
into a guarantee on ``f(x)``. (With the two variation terms attached the other way
round the implication fails; see :func:`divergence_terms_swapped`.)

If ``Var(Z_i | f, f') <= beta`` then ``Pr(F(x) < S(x, F') - eps)`` is at most
``exp(-k eps^2 / (8 beta + 16 eps / 3))``.
"""
from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError, SamplingError
from .seeding import derive_seed, rng_for
from .tabular_data import EmbeddedDataset

MAX_DRAWS_PER_POINT = 1000


@dataclass(frozen=True)
class SamplerConfig:
    k: int = 30
    gaussian_std: float = 0.1
    radius_sigma: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 1:
            raise ConfigError(f"k must be a positive integer, got {self.k}")
        if not self.gaussian_std > 0:
            raise ConfigError("gaussian_std must be > 0")
        if not self.radius_sigma > 0:
            raise ConfigError("radius_sigma must be > 0")

    def with_seed(self, seed: int) -> "SamplerConfig":
        return SamplerConfig(self.k, self.gaussian_std, self.radius_sigma, int(seed))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Neighborhood:
    center: np.ndarray
    offsets: np.ndarray
    config: SamplerConfig

    @property
    def points(self) -> np.ndarray:
        return self.center + self.offsets

    @property
    def k(self) -> int:
        return self.offsets.shape[0]


@dataclass(frozen=True)
class ConsistencyScore:
    value: float
    mean_neighbor_pred: float
    mean_abs_variation: float
    center_pred: float


@dataclass
class DivergenceSample:
    z_terms: np.ndarray
    z: float


def sample_offsets(d: int, config: SamplerConfig, rng: np.random.Generator) -> np.ndarray:
    """``k`` isotropic Gaussian offsets truncated to ``||offset|| < radius_sigma`` by rejection."""
    k = config.k
    budget = MAX_DRAWS_PER_POINT * k
    batch = max(2 * k, 64)
    kept, n_kept, drawn = [], 0, 0
    while n_kept < k:
        if drawn >= budget:
            raise SamplingError(
                f"only {n_kept}/{k} samples accepted after {drawn} draws; radius_sigma="
                f"{config.radius_sigma} is too small for gaussian_std={config.gaussian_std} "
                f"in dimension {d} (typical norm {config.gaussian_std * math.sqrt(d):.3g})")
        draws = rng.normal(0.0, config.gaussian_std, size=(batch, d))
        drawn += batch
        ok = draws[np.sqrt(np.sum(draws * draws, axis=1)) < config.radius_sigma]
        kept.append(ok)
        n_kept += ok.shape[0]
    return np.concatenate(kept)[:k]


def sample_neighborhood(center, config: SamplerConfig) -> Neighborhood:
    center = np.asarray(center, dtype=float)
    if center.ndim != 1:
        raise DataError("center must be a single point")
    offsets = sample_offsets(center.shape[0], config, rng_for(config.seed))
    return Neighborhood(center, offsets, config)


def _check(model, center, nbhd: Neighborhood | None = None) -> np.ndarray:
    center = np.asarray(center, dtype=float)
    if center.ndim != 1 or center.shape[0] != model.d_e:
        raise DataError(f"point of shape {center.shape} does not match model dimension {model.d_e}")
    if nbhd is not None and not np.array_equal(nbhd.center, center):
        raise DataError("neighborhood was sampled around a different center")
    return center


def score_from_predictions(fx: float, fn: np.ndarray) -> ConsistencyScore:
    """``S`` from the center prediction and the ``k`` neighbor predictions.

    Evaluated as ``f(x) - mean(|f(x) - f(x_i)| - (f(x_i) - f(x)))``, which equals the
    definition algebraically. Each subtracted term is exactly non-negative in floating
    point, so ``S <= f(x)`` holds without rounding slack.
    """
    fn = np.asarray(fn, dtype=float)
    fx = float(fx)
    diff = fn - fx
    variation = np.abs(diff)
    return ConsistencyScore(
        value=fx - float(np.mean(variation - diff)),
        mean_neighbor_pred=float(np.mean(fn)),
        mean_abs_variation=float(np.mean(variation)),
        center_pred=fx,
    )


def consistency(model, center, nbhd: Neighborhood) -> ConsistencyScore:
    center = _check(model, center, nbhd)
    preds = model.predict_proba(np.vstack([center[None, :], nbhd.points]))
    return score_from_predictions(preds[0], preds[1:])


def divergence_terms(f_center, f_nbrs, g_center, g_nbrs) -> np.ndarray:
    """Z_i from precomputed predictions of ``f`` (= F) and ``g`` (= F')."""
    return ((g_nbrs - f_nbrs) - np.abs(g_nbrs - g_center)) + np.abs(f_nbrs - f_center)


def divergence_terms_swapped(f_center, f_nbrs, g_center, g_nbrs) -> np.ndarray:
    """Variant with the variation terms exchanged between the two models.

    Not used by the verifier: ``mean < eps`` under this variant does not imply
    ``f(x) >= S(x, g) - eps``.
    """
    return ((g_nbrs - f_nbrs) - np.abs(f_nbrs - f_center)) + np.abs(g_nbrs - g_center)


def neighborhood_divergence(f, f_prime, center, nbhd: Neighborhood) -> DivergenceSample:
    center = _check(f, center, nbhd)
    _check(f_prime, center)
    pts = np.vstack([center[None, :], nbhd.points])
    pf, pg = f.predict_proba(pts), f_prime.predict_proba(pts)
    z = divergence_terms(pf[0], pf[1:], pg[0], pg[1:])
    return DivergenceSample(z, float(np.mean(z)))


def term_variance(z_terms) -> float:
    z = np.asarray(z_terms, dtype=float)
    if z.size < 2:
        return 0.0
    # shift by the first term so identical terms give exactly 0
    return float(np.var(z - z[0], ddof=1))


def pair_statistics(model_pairs: Sequence, center, config: SamplerConfig,
                    n_rounds: int) -> tuple[float, float]:
    """``(beta_hat, eps_prime_hat)`` over a list of model pairs.

    Each pair gets ``n_rounds`` fresh neighborhoods (seeded by pair and round). Per pair,
    the unbiased variance of the ``k`` divergence terms is averaged over rounds, and so
    is ``Z``. ``beta_hat`` is the largest per-pair mean variance and ``eps_prime_hat``
    the largest per-pair ``|mean Z|``.
    """
    if not model_pairs:
        raise ConfigError("need at least one model pair")
    if n_rounds < 1:
        raise ConfigError("n_rounds must be positive")
    center = np.asarray(center, dtype=float)
    beta, bias = 0.0, 0.0
    for p, (f, g) in enumerate(model_pairs):
        var_total, z_total = 0.0, 0.0
        for r in range(n_rounds):
            nbhd = sample_neighborhood(center, config.with_seed(derive_seed(config.seed, p, r)))
            sample = neighborhood_divergence(f, g, center, nbhd)
            var_total += term_variance(sample.z_terms)
            z_total += sample.z
        beta = max(beta, var_total / n_rounds)
        bias = max(bias, abs(z_total / n_rounds))
    return beta, bias


def estimate_beta(model_pairs: Sequence, center, config: SamplerConfig, n_rounds: int) -> float:
    """Plug-in estimate of the per-term variance bound (see :func:`pair_statistics`)."""
    return pair_statistics(model_pairs, center, config, n_rounds)[0]


def theorem_bound(k: int, beta: float, epsilon: float) -> float:
    """Failure-probability bound ``exp(-k eps^2 / (8 beta + 16 eps / 3))`` clamped to [0, 1]."""
    if not epsilon > 0:
        raise ConfigError(f"epsilon must be > 0, got {epsilon}")
    if k < 1 or beta < 0:
        raise ConfigError("k must be >= 1 and beta >= 0")
    p = math.exp(-k * epsilon ** 2 / (8.0 * beta + 16.0 * epsilon / 3.0))
    return min(1.0, max(0.0, p))


def point_config(config: SamplerConfig, index: int) -> SamplerConfig:
    return config.with_seed(derive_seed(config.seed, index))


def consistency_profile(model, points: EmbeddedDataset, config: SamplerConfig,
                        threads: int = 1) -> list[ConsistencyScore]:
    """One score per point; point ``j`` samples with a seed derived from ``(config.seed, j)``."""
    X = points.points

    def one(j):
        return consistency(model, X[j], sample_neighborhood(X[j], point_config(config, j)))

    if threads <= 1:
        return [one(j) for j in range(len(points))]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, range(len(points))))


PROFILE_FIELDS = ("S", "mean_neighbor_pred", "mean_abs_variation", "f(x)")


@dataclass
class ConsistencyProfile:
    point_ids: list
    scores: list
    meta: dict = field(default_factory=dict)

    @property
    def values(self) -> np.ndarray:
        return np.array([s.value for s in self.scores])

    @property
    def center_preds(self) -> np.ndarray:
        return np.array([s.center_pred for s in self.scores])

    def rows(self):
        for pid, s in zip(self.point_ids, self.scores):
            yield pid, (s.value, s.mean_neighbor_pred, s.mean_abs_variation, s.center_pred)

    def to_json(self) -> str:
        pts = [{"point_id": pid, **dict(zip(PROFILE_FIELDS, vals))} for pid, vals in self.rows()]
        return json.dumps({"meta": self.meta, "points": pts}, indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("point_id",) + PROFILE_FIELDS)
        for pid, vals in self.rows():
            w.writerow([pid] + [repr(v) for v in vals])
        return buf.getvalue()

    @classmethod
    def from_dict(cls, d) -> "ConsistencyProfile":
        scores = [ConsistencyScore(p["S"], p["mean_neighbor_pred"], p["mean_abs_variation"], p["f(x)"])
                  for p in d["points"]]
        return cls([p["point_id"] for p in d["points"]], scores, d.get("meta", {}))
