"""Command-line pipeline: ingest, train-ensemble, multiplicity, consistency, correlate, verify-bound.

Artifacts of one experiment live under ``<output_dir>/run-<hash>/``; the hash covers the
fields that fix the split and the ensemble. ``manifest.json`` in that directory lists the
artifacts each command wrote along with wall-clock timestamps; every other file is a pure
function of the config and is byte-identical across reruns and thread counts.
"""
from __future__ import annotations

import argparse
import datetime as dt
import hashlib
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .bound_verifier import (
    BoundReport,
    SyntheticClassConfig,
    default_centers,
    verify_divergence_bound,
    verify_theorem,
)
from .config import ExperimentConfig, load_config
from .consistency import ConsistencyProfile, consistency_profile
from .errors import ConfigError, DataError, SamplingError, TrainingDivergedError
from .model_zoo import ScoreModel, build_competing_set, empirical_error, train_ensemble
from .multiplicity import MultiplicityReport, format_table, multiplicity_report, prediction_matrix
from .seeding import rng_for
from .stats import correlate_report
from .tabular_data import (
    EmbeddedDataset,
    SerializationTemplate,
    encode,
    fit_encoder,
    load_csv,
    serialize_row,
    split_indices,
)

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_VERIFY = 0, 1, 2, 3
_EVAL_TAG = 7  # seed-path tag for the evaluation subsample


class VerificationFailed(Exception):
    pass


# -- data preparation ---------------------------------------------------------

@dataclass
class Prepared:
    train: EmbeddedDataset
    test: EmbeddedDataset
    eval: EmbeddedDataset
    encoder: object
    raw_train: list
    schema: object


def prepare(cfg: ExperimentConfig) -> Prepared:
    """Load, split and encode. Point ids are row indices into the source CSV."""
    path, schema = cfg.dataset.resolved()
    data = load_csv(path, schema)
    train_idx, test_idx = split_indices(data, cfg.n_shots, cfg.seed)
    raw_train = data.subset(train_idx.tolist())
    encoder = fit_encoder(raw_train)
    train = encode(raw_train, encoder)
    train.point_ids = train_idx.tolist()
    test = encode(data.subset(test_idx.tolist()), encoder)
    test.point_ids = test_idx.tolist()
    n_eval = cfg.n_eval_points
    if n_eval == 0 or n_eval >= len(test):
        ev = test
    else:
        sel = np.sort(rng_for(cfg.seed, _EVAL_TAG).choice(len(test), size=n_eval, replace=False))
        ev = test.subset(sel)
    return Prepared(train, test, ev, encoder, raw_train.rows, schema)


# -- artifact plumbing ----------------------------------------------------------

def _now() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return path


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _record(root: Path, command: str, started: str, paths, cfg: ExperimentConfig) -> Path:
    """Merge this command's artifacts into ``root/manifest.json``."""
    mpath = root / "manifest.json"
    manifest = json.loads(mpath.read_text()) if mpath.exists() else {}
    manifest["tool_version"] = __version__
    manifest["run_hash"] = root.name.split("-", 1)[1]
    commands = manifest.setdefault("commands", {})
    rel = sorted(str(Path(p).relative_to(root)) for p in paths)
    missing = [r for r in rel if not (root / r).exists()]
    if missing:
        raise DataError(f"artifacts missing after {command}: {missing}")
    commands[command] = {"config_hash": cfg.config_hash(), "artifacts": rel,
                         "timestamps": {"started": started, "finished": _now()}}
    _write(mpath, _dump(manifest))
    return mpath


def _report_meta(cfg: ExperimentConfig, **extra) -> dict:
    return {"config_hash": cfg.config_hash(), "run_hash": cfg.run_hash(), "seed": cfg.seed, **extra}


def load_ensemble(root: Path) -> tuple[dict, list[ScoreModel]]:
    epath = root / "ensemble.json"
    if not epath.exists():
        raise DataError(f"no trained ensemble under {root}; run train-ensemble first")
    ensemble = json.loads(epath.read_text())
    models = []
    for entry in ensemble["models"]:
        mpath = root / entry["file"]
        if not mpath.exists():
            raise DataError(f"model file missing: {mpath}")
        if _sha256(mpath) != entry["sha256"]:
            raise DataError(f"model file {mpath} does not match ensemble.json")
        models.append(ScoreModel.load(mpath))
    return ensemble, models


# -- commands ----------------------------------------------------------------

def cmd_ingest(cfg: ExperimentConfig, args) -> int:
    started = _now()
    prep = prepare(cfg)
    root = cfg.run_dir()
    template = SerializationTemplate(args.template)
    names = prep.schema.names
    summary = {
        "meta": _report_meta(cfg),
        "dataset": cfg.dataset.to_dict(),
        "n_train": len(prep.train), "n_test": len(prep.test), "n_eval": len(prep.eval),
        "train_positive": int(prep.train.labels.sum()),
        "test_positive": int(prep.test.labels.sum()),
        "embedding_dim": prep.train.dim,
        "train_ids": prep.train.point_ids,
        "eval_ids": prep.eval.point_ids,
    }
    text = "\n\n".join(serialize_row(r, template, names) for r in prep.raw_train)
    paths = [
        _write(root / "data" / "split.json", _dump(summary)),
        _write(root / "data" / "encoder.json", _dump(prep.encoder.to_dict())),
        _write(root / "data" / f"train_{template.value}.txt", text + "\n"),
    ]
    _record(root, "ingest", started, paths, cfg)
    print(f"{len(prep.train)} train / {len(prep.test)} test rows, embedding dim {prep.train.dim}")
    print(f"artifacts: {root}")
    return EXIT_OK


def cmd_train_ensemble(cfg: ExperimentConfig, args) -> int:
    started = _now()
    prep = prepare(cfg)
    root = cfg.run_dir()
    seeds = cfg.model_seeds()
    try:
        models = train_ensemble(prep.train, cfg.train, seeds, args.threads)
    except TrainingDivergedError as exc:
        idx = seeds.index(exc.seed) if exc.seed in seeds else None
        raise TrainingDivergedError(exc.epoch, exc.seed, model_index=idx) from None
    paths, entries = [], []
    for i, model in enumerate(models):
        mpath = root / "models" / f"model_{i:03d}.json"
        mpath.parent.mkdir(parents=True, exist_ok=True)
        model.save(mpath)
        paths.append(mpath)
        entries.append({"id": i, "seed": seeds[i], "file": str(mpath.relative_to(root)),
                        "sha256": _sha256(mpath),
                        "test_accuracy": 1.0 - empirical_error(model, prep.test)})
    ensemble = {"meta": _report_meta(cfg), "train_config": cfg.train.to_dict(),
                "n_train": len(prep.train), "n_test": len(prep.test), "models": entries}
    paths.append(_write(root / "ensemble.json", _dump(ensemble)))
    _record(root, "train-ensemble", started, paths, cfg)
    acc = [e["test_accuracy"] for e in entries]
    print(f"trained {len(models)} models; test accuracy min {min(acc):.4f} "
          f"mean {sum(acc) / len(acc):.4f} max {max(acc):.4f}")
    print(f"artifacts: {root}")
    return EXIT_OK


def cmd_multiplicity(cfg: ExperimentConfig, args) -> int:
    started = _now()
    root = cfg.run_dir()
    _, models = load_ensemble(root)
    prep = prepare(cfg)
    split = prep.test if cfg.competing_split == "test" else prep.train
    cset = build_competing_set(models, models[cfg.reference_model], split, cfg.delta)
    matrix = prediction_matrix(cset, prep.eval)
    report = multiplicity_report(matrix, [1.0 - e for e in cset.member_errors])
    report.meta = _report_meta(cfg, delta=cfg.delta, reference_model=cfg.reference_model,
                               competing_split=cfg.competing_split,
                               competing_members=cset.member_indices,
                               reference_error=cset.reference_error)
    paths = [
        _write(root / "multiplicity.json", report.to_json()),
        _write(root / "multiplicity.csv", report.to_csv()),
        _write(root / "multiplicity.txt", format_table(report)),
    ]
    _record(root, "multiplicity", started, paths, cfg)
    print(f"competing set: {len(cset.members)}/{len(models)} models within delta={cfg.delta}")
    print(format_table(report), end="")
    return EXIT_OK


def _model_id(cfg: ExperimentConfig, args) -> int:
    return cfg.reference_model if args.model_id is None else args.model_id


def cmd_consistency(cfg: ExperimentConfig, args) -> int:
    started = _now()
    root = cfg.run_dir()
    ensemble, models = load_ensemble(root)
    mid = _model_id(cfg, args)
    if not 0 <= mid < len(models):
        raise ConfigError(f"unknown model id {mid}; ensemble has {len(models)} models")
    prep = prepare(cfg)
    sampler = cfg.sampler_config()
    scores = consistency_profile(models[mid], prep.eval, sampler, args.threads)
    profile = ConsistencyProfile(list(prep.eval.point_ids), scores,
                                 _report_meta(cfg, model_id=mid, sampler=sampler.to_dict()))
    stem = f"consistency-m{mid:03d}"
    paths = [_write(root / f"{stem}.json", profile.to_json()),
             _write(root / f"{stem}.csv", profile.to_csv())]
    _record(root, f"consistency-m{mid:03d}", started, paths, cfg)
    vals = profile.values
    print(f"model {mid}: {len(vals)} points, mean S {vals.mean():.4f}, "
          f"mean f(x) {profile.center_preds.mean():.4f}")
    return EXIT_OK


def cmd_correlate(cfg: ExperimentConfig, args) -> int:
    started = _now()
    root = cfg.run_dir()
    mid = _model_id(cfg, args)
    mpath, cpath = root / "multiplicity.json", root / f"consistency-m{mid:03d}.json"
    for p in (mpath, cpath):
        if not p.exists():
            raise DataError(f"missing artifact {p}")
    mult = MultiplicityReport.from_dict(json.loads(mpath.read_text()))
    profile = ConsistencyProfile.from_dict(json.loads(cpath.read_text()))
    if profile.point_ids != mult.point_ids:
        raise DataError("consistency profile and multiplicity report cover different points")
    report = correlate_report(profile.values, profile.center_preds, mult)
    report.meta = _report_meta(cfg, model_id=mid,
                               multiplicity_config_hash=mult.meta.get("config_hash"),
                               consistency_config_hash=profile.meta.get("config_hash"))
    paths = [_write(root / "correlation.json", report.to_json()),
             _write(root / "correlation.txt", report.to_text())]
    _record(root, "correlate", started, paths, cfg)
    print(report.to_text(), end="")
    if report.all_undefined:
        print("warning: every correlation is undefined (constant multiplicity columns); "
              "a single-model competing set shows no multiplicity", file=sys.stderr)
    elif report.wins() < 2:
        print(f"warning: consistency beats predicted probability on only {report.wins()} "
              "of 4 metrics", file=sys.stderr)
    return EXIT_OK


def cmd_verify_bound(cfg: ExperimentConfig, args) -> int:
    started = _now()
    v = cfg.verify
    root = cfg.verify_dir()
    sampler = cfg.sampler_config()
    paths, failures, implication = [], [], 0
    summary = {"meta": {"verify_hash": cfg.verify_hash(), "seed": cfg.seed,
                        "verify": v.to_dict(), "sampler": sampler.to_dict()}, "reports": []}
    kw = dict(k_grid=v.k_grid, beta_scale=v.beta_scale, beta_pairs=v.beta_pairs,
              beta_rounds=v.beta_rounds, threads=args.threads)
    for fn in v.base_logit_fns:
        scfg = SyntheticClassConfig(fn, v.model_noise_std, v.d_e, cfg.seed, v.gain)
        centers = default_centers(scfg, v.n_centers)
        reports = [verify_divergence_bound(scfg, sampler, c, v.eps_grid, v.trials, **kw)
                   for c in centers]
        lemma = BoundReport("divergence", [], reports[0].meta)
        for ci, rep in enumerate(reports):
            lemma.cells.extend({**cell, "center": ci} for cell in rep.cells)
        lemma.meta = {**lemma.meta, "centers": centers.tolist()}
        theorem = verify_theorem(scfg, sampler, centers, v.eps_grid, v.trials, **kw)
        for rep in (lemma, theorem):
            stem = f"{rep.kind}-{fn}"
            paths += [_write(root / f"{stem}.json", rep.to_json()),
                      _write(root / f"{stem}.csv", rep.to_csv())]
            failures += [(stem, c) for c in rep.failing_cells()]
            implication += rep.implication_violations
            summary["reports"].append({"name": stem, "passed": rep.passed,
                                       "cells": len(rep.cells),
                                       "failing_cells": len(rep.failing_cells()),
                                       "implication_violations": rep.implication_violations})
            print(f"{stem}: {len(rep.cells) - len(rep.failing_cells())}/{len(rep.cells)} cells pass")
    summary["passed"] = not failures and implication == 0
    paths.append(_write(root / "summary.json", _dump(summary)))
    _record(root, "verify-bound", started, paths, cfg)
    for stem, c in failures:
        print(f"FAIL {stem} center={c['center']} k={c['k']} eps={c['epsilon']}: "
              f"rate {c['empirical_violation_rate']:.4f} > bound {c['theoretical_bound']:.4f}",
              file=sys.stderr)
    if implication:
        print(f"FAIL: {implication} logged trials violate Z < eps => F(x) >= S - eps",
              file=sys.stderr)
    print(f"artifacts: {root}")
    if not summary["passed"]:
        raise VerificationFailed(f"{len(failures)} failing cells")
    return EXIT_OK


COMMANDS = {
    "ingest": cmd_ingest,
    "train-ensemble": cmd_train_ensemble,
    "multiplicity": cmd_multiplicity,
    "consistency": cmd_consistency,
    "correlate": cmd_correlate,
    "verify-bound": cmd_verify_bound,
}


# -- argument parsing ------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def _global_flags(parser, suppress: bool):
    default = argparse.SUPPRESS if suppress else None
    g = parser.add_argument_group("global options")
    g.add_argument("--config", default=default, help="YAML or JSON experiment config")
    g.add_argument("--seed", type=int, default=default, help="base seed")
    g.add_argument("--threads", type=int, default=argparse.SUPPRESS if suppress else 1,
                   help="worker threads (results do not depend on this)")
    g.add_argument("--output-dir", default=default, help="root directory for run artifacts")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pconsist", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", help="load, split and encode the dataset")
    p.add_argument("--template", default=SerializationTemplate.TEXT.value,
                   choices=[t.value for t in SerializationTemplate])
    sub.add_parser("train-ensemble", help="train n_models seeded surrogates")
    p = sub.add_parser("multiplicity", help="competing set and multiplicity report")
    p.add_argument("--delta", type=float)
    p = sub.add_parser("consistency", help="consistency profile of one model")
    p.add_argument("--model-id", type=int)
    p.add_argument("--k", type=int)
    p = sub.add_parser("correlate", help="Spearman table: consistency vs f(x) against multiplicity")
    p.add_argument("--model-id", type=int)
    p = sub.add_parser("verify-bound", help="Monte Carlo check of the tail bound")
    p.add_argument("--trials", type=int)
    p.add_argument("--beta-scale", type=float,
                   help="multiply beta_hat before evaluating the bound (sanity inversion)")
    for name, sp in sub.choices.items():
        _global_flags(sp, suppress=True)
    return parser


def _flag_overrides(args) -> dict:
    flags: dict = {"seed": args.seed, "output_dir": args.output_dir,
                   "delta": getattr(args, "delta", None)}
    if getattr(args, "k", None) is not None:
        flags["sampler"] = {"k": args.k}
    verify = {"trials": getattr(args, "trials", None), "beta_scale": getattr(args, "beta_scale", None)}
    verify = {k: v for k, v in verify.items() if v is not None}
    if verify:
        flags["verify"] = verify
    return flags


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        cfg = load_config(args.config, flags=_flag_overrides(args))
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, SamplingError, TrainingDivergedError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except VerificationFailed as exc:
        print(f"verification failed: {exc}", file=sys.stderr)
        return EXIT_VERIFY


if __name__ == "__main__":
    sys.exit(main())
