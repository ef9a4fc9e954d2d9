"""Seeded surrogate classifiers (logistic regression, small tanh MLPs) and the competing set."""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError, TrainingDivergedError
from .seeding import rng_for
from .tabular_data import EmbeddedDataset

MODEL_FORMAT = "prediction-consistency/score-model"
MODEL_FORMAT_VERSION = 1
FAMILIES = ("logistic", "mlp")


def sigmoid(z):
    return np.exp(-np.logaddexp(0.0, -np.asarray(z, dtype=float)))


@dataclass(frozen=True)
class TrainConfig:
    family: str = "logistic"
    hidden_widths: tuple[int, ...] = (16,)
    learning_rate: float = 0.05
    epochs: int = 20
    batch_size: int = 8
    l2: float = 1e-3

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(h) for h in self.hidden_widths))
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown model family {self.family!r}; expected one of {FAMILIES}")
        if self.family == "mlp" and not 1 <= len(self.hidden_widths) <= 2:
            raise ConfigError("mlp needs one or two hidden layers")
        if any(h < 1 for h in self.hidden_widths):
            raise ConfigError("hidden widths must be positive")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if self.l2 < 0:
            raise ConfigError("l2 must be >= 0")

    def layer_sizes(self, d_e: int) -> list[int]:
        hidden = list(self.hidden_widths) if self.family == "mlp" else []
        return [d_e, *hidden, 1]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden_widths"] = list(self.hidden_widths)
        return d

    @classmethod
    def from_dict(cls, d) -> "TrainConfig":
        d = dict(d)
        if "hidden_widths" in d:
            d["hidden_widths"] = tuple(d["hidden_widths"])
        return cls(**d)


@dataclass(frozen=True, eq=False)
class ScoreModel:
    """A probabilistic binary classifier ``x -> [0, 1]``.

    ``weights[l]`` has shape ``(fan_in, fan_out)``; hidden layers use tanh and the
    single output unit a sigmoid.
    """

    family: str
    weights: tuple
    biases: tuple
    seed: int = 0
    train_config: TrainConfig = field(default_factory=TrainConfig)

    @property
    def d_e(self) -> int:
        return self.weights[0].shape[0]

    def logits(self, X) -> np.ndarray:
        h = np.asarray(X, dtype=float)
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ W + b
            if i < last:
                h = np.tanh(h)
        return h[:, 0]

    def predict_proba(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.d_e:
            raise DataError(f"expected points of dimension {self.d_e}, got shape {X.shape}")
        return sigmoid(self.logits(X))

    def flat_parameters(self) -> np.ndarray:
        return np.concatenate([a.ravel() for pair in zip(self.weights, self.biases) for a in pair])

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_FORMAT_VERSION,
            "family": self.family,
            "d_e": self.d_e,
            "layer_sizes": [self.d_e] + [W.shape[1] for W in self.weights],
            "seed": self.seed,
            "train_config": self.train_config.to_dict(),
            "weights": [W.ravel().tolist() for W in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, d) -> "ScoreModel":
        if d.get("format") != MODEL_FORMAT or d.get("version") != MODEL_FORMAT_VERSION:
            raise DataError("not a version-1 score-model document")
        sizes = d["layer_sizes"]
        weights = tuple(np.asarray(w, dtype=float).reshape(sizes[i], sizes[i + 1])
                        for i, w in enumerate(d["weights"]))
        biases = tuple(np.asarray(b, dtype=float) for b in d["biases"])
        return cls(d["family"], weights, biases, int(d["seed"]), TrainConfig.from_dict(d["train_config"]))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "ScoreModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def logistic_model(w, b=0.0) -> ScoreModel:
    """Hand-built logistic model ``sigmoid(w . x + b)``."""
    w = np.asarray(w, dtype=float).reshape(-1, 1)
    return ScoreModel("logistic", (w,), (np.array([float(b)]),))


def predict(model, x) -> float:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise DataError("predict takes a single point; use predict_proba for batches")
    return float(model.predict_proba(x[None, :])[0])


def predict_label(model, x) -> int:
    return int(predict(model, x) >= 0.5)


def labels_from_probs(p) -> np.ndarray:
    return (np.asarray(p) >= 0.5).astype(int)


def error_count(model, data: EmbeddedDataset) -> int:
    if len(data) == 0:
        raise DataError("cannot compute error on an empty dataset")
    return int(np.sum(labels_from_probs(model.predict_proba(data.points)) != data.labels))


def empirical_error(model, data: EmbeddedDataset) -> float:
    return error_count(model, data) / len(data)


# -- training ---------------------------------------------------------------

def init_parameters(sizes: Sequence[int], rng: np.random.Generator):
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return weights, biases


def loss_and_grad(weights, biases, X, y, l2=0.0):
    """Mean log-loss plus ``l2/2 * sum ||W||^2`` and its gradient by backpropagation."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = X.shape[0]
    acts = [X]
    h = X
    last = len(weights) - 1
    for i, (W, b) in enumerate(zip(weights, biases)):
        h = h @ W + b
        if i < last:
            h = np.tanh(h)
        acts.append(h)
    z = acts[-1][:, 0]
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z))
    loss += 0.5 * l2 * sum(float(np.sum(W * W)) for W in weights)

    delta = ((sigmoid(z) - y) / n)[:, None]
    gW = [None] * len(weights)
    gb = [None] * len(weights)
    for i in range(last, -1, -1):
        gW[i] = acts[i].T @ delta + l2 * weights[i]
        gb[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ weights[i].T) * (1.0 - acts[i] ** 2)
    return loss, gW, gb


def train_model(train: EmbeddedDataset, config: TrainConfig, seed: int) -> ScoreModel:
    """Mini-batch SGD on log-loss. Bit-deterministic in ``(train, config, seed)``."""
    if len(train) == 0:
        raise DataError("empty training set")
    if len(set(train.labels.tolist())) < 2:
        raise DataError("training set must contain both classes")
    rng = rng_for(seed)
    weights, biases = init_parameters(config.layer_sizes(train.dim), rng)
    X, y = train.points, train.labels.astype(float)
    n = len(train)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        # overflow is detected explicitly below, so numpy's warnings are noise here
        with np.errstate(over="ignore", invalid="ignore"):
            for start in range(0, n, config.batch_size):
                idx = order[start:start + config.batch_size]
                _, gW, gb = loss_and_grad(weights, biases, X[idx], y[idx], config.l2)
                for i in range(len(weights)):
                    weights[i] = weights[i] - config.learning_rate * gW[i]
                    biases[i] = biases[i] - config.learning_rate * gb[i]
            loss, _, _ = loss_and_grad(weights, biases, X, y, config.l2)
        if not np.isfinite(loss) or not all(np.all(np.isfinite(W)) for W in weights):
            raise TrainingDivergedError(epoch, seed)
    return ScoreModel(config.family, tuple(weights), tuple(biases), int(seed), config)


def train_ensemble(train: EmbeddedDataset, config: TrainConfig, seeds: Sequence[int],
                   threads: int = 1) -> list[ScoreModel]:
    """Train one model per seed; output order follows ``seeds`` regardless of ``threads``."""
    if threads <= 1:
        return [train_model(train, config, s) for s in seeds]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda s: train_model(train, config, s), seeds))


# -- competing set ----------------------------------------------------------

@dataclass
class CompetingSet:
    members: list
    reference: ScoreModel
    delta: float
    reference_error: float
    member_errors: list = field(default_factory=list)
    member_indices: list = field(default_factory=list)

    @property
    def ref_index(self) -> int:
        return next(i for i, m in enumerate(self.members) if m is self.reference)


def build_competing_set(models: Sequence, reference, eval_data: EmbeddedDataset,
                        delta: float) -> CompetingSet:
    """Keep every model with ``err <= err(reference) + delta`` on ``eval_data``.

    ``member_indices`` records positions in ``models``; order is preserved.
    """
    if not models:
        raise ConfigError("no models given")
    if not 0 <= delta < 1:
        raise ConfigError(f"delta must lie in [0, 1), got {delta}")
    if not any(m is reference for m in models):
        raise ConfigError("reference model must be one of the models")
    n = len(eval_data)
    counts = [error_count(m, eval_data) for m in models]
    ref_count = counts[next(i for i, m in enumerate(models) if m is reference)]
    # exact rational comparison; delta is read as the decimal it was written as
    limit = Fraction(ref_count, n) + Fraction(repr(float(delta)))
    keep = [i for i, c in enumerate(counts) if Fraction(c, n) <= limit]
    return CompetingSet([models[i] for i in keep], reference, float(delta), ref_count / n,
                        [counts[i] / n for i in keep], keep)
