"""Experiment configuration: one YAML (or JSON) document, environment overrides, defaults.

Precedence is command-line flag > environment > file > default. Environment variables
use the ``PCONS_`` prefix with ``__`` separating nested keys, e.g. ``PCONS_N_SHOTS=64``
or ``PCONS_TRAIN__EPOCHS=50``; values are parsed as YAML scalars.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Mapping

import yaml

from .bound_verifier import BASE_FUNCTIONS
from .consistency import SamplerConfig
from .errors import ConfigError, DataError
from .model_zoo import TrainConfig
from .tabular_data import Schema, adult_csv_path, adult_schema

ENV_PREFIX = "PCONS_"
BUILTIN_ADULT = "builtin:adult"


@dataclass(frozen=True)
class DatasetConfig:
    path: str = BUILTIN_ADULT
    schema: Schema | None = None

    def resolved(self) -> tuple[Path, Schema]:
        if self.path == BUILTIN_ADULT:
            return adult_csv_path(), self.schema or adult_schema()
        if self.schema is None:
            raise ConfigError(f"dataset {self.path!r} needs a schema")
        return Path(self.path), self.schema

    def to_dict(self) -> dict:
        return {"path": self.path, "schema": None if self.schema is None else self.schema.to_dict()}

    @classmethod
    def from_dict(cls, d) -> "DatasetConfig":
        d = dict(d or {})
        schema = d.get("schema")
        try:
            schema = None if schema is None else Schema.from_dict(schema)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid dataset schema: {exc}") from None
        return cls(str(d.get("path", BUILTIN_ADULT)), schema)


@dataclass(frozen=True)
class VerifyConfig:
    base_logit_fns: tuple[str, ...] = BASE_FUNCTIONS
    model_noise_std: float = 0.1
    gain: float = 1.0
    d_e: int = 5
    k_grid: tuple[int, ...] = (10, 30, 100)
    eps_grid: tuple[float, ...] = (0.05, 0.1, 0.2, 0.4)
    trials: int = 10_000
    n_centers: int = 1
    beta_pairs: int = 200
    beta_rounds: int = 5
    beta_scale: float = 1.0

    def __post_init__(self):
        for name in ("base_logit_fns", "k_grid", "eps_grid"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if not self.base_logit_fns or any(b not in BASE_FUNCTIONS for b in self.base_logit_fns):
            raise ConfigError(f"verify.base_logit_fns must be drawn from {BASE_FUNCTIONS}")
        if self.trials < 1:
            raise ConfigError("verify.trials must be >= 1")
        if not self.k_grid or any(int(k) != k or k < 1 for k in self.k_grid):
            raise ConfigError("verify.k_grid must hold positive integers")
        if not self.eps_grid or any(not e > 0 for e in self.eps_grid):
            raise ConfigError("verify.eps_grid must hold positive values")
        if self.n_centers < 1 or self.beta_pairs < 1 or self.beta_rounds < 1:
            raise ConfigError("verify.n_centers, beta_pairs and beta_rounds must be positive")
        if not self.beta_scale > 0:
            raise ConfigError("verify.beta_scale must be > 0")

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        for name in ("base_logit_fns", "k_grid", "eps_grid"):
            d[name] = list(d[name])
        return d


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    n_shots: int = 128
    n_models: int = 40
    delta: float = 0.02
    reference_model: int = 0
    competing_split: str = "test"
    n_eval_points: int = 1000
    train: TrainConfig = field(default_factory=TrainConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    verify: VerifyConfig = field(default_factory=VerifyConfig)
    seed: int = 0
    output_dir: str = "runs"

    def __post_init__(self):
        if self.n_shots < 2:
            raise ConfigError("n_shots must be >= 2")
        if self.n_models < 1:
            raise ConfigError("n_models must be >= 1")
        if not 0 <= self.delta < 1:
            raise ConfigError("delta must lie in [0, 1)")
        if not 0 <= self.reference_model < self.n_models:
            raise ConfigError("reference_model must index one of the n_models models")
        if self.competing_split not in ("train", "test"):
            raise ConfigError("competing_split must be 'train' or 'test'")
        if self.n_eval_points < 0:
            raise ConfigError("n_eval_points must be >= 0 (0 means the whole test split)")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset.to_dict(),
            "n_shots": self.n_shots,
            "n_models": self.n_models,
            "delta": self.delta,
            "reference_model": self.reference_model,
            "competing_split": self.competing_split,
            "n_eval_points": self.n_eval_points,
            "train": self.train.to_dict(),
            "sampler": {k: v for k, v in self.sampler.to_dict().items() if k != "seed"},
            "verify": self.verify.to_dict(),
            "seed": self.seed,
            "output_dir": self.output_dir,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ExperimentConfig":
        d = dict(d or {})
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            kw = {k: v for k, v in d.items() if k not in ("dataset", "train", "sampler", "verify")}
            for k in ("n_shots", "n_models", "reference_model", "n_eval_points", "seed"):
                if k in kw:
                    kw[k] = int(kw[k])
            if "delta" in kw:
                kw["delta"] = float(kw["delta"])
            sampler = dict(d.get("sampler") or {})
            sampler.pop("seed", None)
            return cls(
                dataset=DatasetConfig.from_dict(d.get("dataset")),
                train=TrainConfig.from_dict(d.get("train") or {}),
                sampler=SamplerConfig(**sampler),
                verify=VerifyConfig(**(d.get("verify") or {})),
                **kw,
            )
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        except DataError as exc:
            raise ConfigError(str(exc)) from None

    def sampler_config(self) -> SamplerConfig:
        return self.sampler.with_seed(self.seed)

    def model_seeds(self) -> list[int]:
        return [self.seed + i for i in range(self.n_models)]

    def config_hash(self) -> str:
        """SHA-256 of the canonical config, ignoring where outputs are written."""
        d = self.to_dict()
        d.pop("output_dir")
        return _digest(d)

    def run_hash(self) -> str:
        """Hash of the fields that determine the split and the trained ensemble.

        Per-command knobs (delta, reference model, sampler, verification grid) are left out
        so that a report rerun with a different ``--delta`` or ``--k`` reuses the ensemble;
        each report records the full :meth:`config_hash` in its metadata.
        """
        d = self.to_dict()
        keep = ("dataset", "n_shots", "n_models", "competing_split", "n_eval_points", "train", "seed")
        return _digest({k: d[k] for k in keep})

    def verify_hash(self) -> str:
        d = self.to_dict()
        return _digest({k: d[k] for k in ("verify", "sampler", "seed")})

    def run_dir(self) -> Path:
        return Path(self.output_dir) / f"run-{self.run_hash()[:12]}"

    def verify_dir(self) -> Path:
        return Path(self.output_dir) / f"verify-{self.verify_hash()[:12]}"


def _digest(d: dict) -> str:
    blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def render(config: ExperimentConfig) -> str:
    return yaml.safe_dump(config.to_dict(), sort_keys=False)


def parse(text: str) -> ExperimentConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config: {exc}") from None
    if data is not None and not isinstance(data, Mapping):
        raise ConfigError("config document must be a mapping")
    return ExperimentConfig.from_dict(data or {})


def _set_path(d: dict, path: list[str], value) -> None:
    for key in path[:-1]:
        sub = d.get(key)
        if not isinstance(sub, dict):
            sub = {}
            d[key] = sub
        d = sub
    d[path[-1]] = value


def env_overrides(environ: Mapping[str, str]) -> dict:
    out: dict = {}
    for name, raw in sorted(environ.items()):
        if not name.startswith(ENV_PREFIX):
            continue
        path = [p.lower() for p in name[len(ENV_PREFIX):].split("__") if p]
        if path:
            _set_path(out, path, yaml.safe_load(raw))
    return out


def merge(base: dict, override: Mapping) -> dict:
    out = dict(base)
    for k, v in override.items():
        if isinstance(v, Mapping) and isinstance(out.get(k), Mapping):
            out[k] = merge(dict(out[k]), v)
        else:
            out[k] = v
    return out


def load_config(path=None, environ: Mapping[str, str] | None = None,
                flags: Mapping | None = None) -> ExperimentConfig:
    """Build the effective config: defaults, then file, then environment, then flags."""
    data = ExperimentConfig().to_dict()
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        file_data = yaml.safe_load(p.read_text())
        if file_data is not None and not isinstance(file_data, Mapping):
            raise ConfigError("config document must be a mapping")
        data = merge(data, file_data or {})
    data = merge(data, env_overrides(os.environ if environ is None else environ))
    data = merge(data, {k: v for k, v in (flags or {}).items() if v is not None})
    return ExperimentConfig.from_dict(data)
