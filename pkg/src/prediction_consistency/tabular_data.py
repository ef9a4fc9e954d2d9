"""Tabular ingestion, standardized embedding space, few-shot splits and row serialization."""
from __future__ import annotations

import csv
import enum
import gzip
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import DataError
from .seeding import rng_for

NUMERIC = "numeric"
CATEGORICAL = "categorical"
STD_FLOOR = 1e-12


@dataclass(frozen=True)
class Column:
    name: str
    kind: str

    def __post_init__(self):
        if self.kind not in (NUMERIC, CATEGORICAL):
            raise DataError(f"column {self.name!r}: unknown kind {self.kind!r}")


@dataclass(frozen=True)
class Schema:
    columns: tuple[Column, ...]
    label_column: str
    positive_label: str

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple(self.columns))
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise DataError(f"duplicate column names in schema: {names}")
        if not names:
            raise DataError("schema needs at least one feature column")
        if self.label_column in names:
            raise DataError(f"label column {self.label_column!r} listed as a feature")

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    @classmethod
    def from_dict(cls, d: Mapping) -> "Schema":
        cols = []
        for c in d["columns"]:
            if isinstance(c, Mapping):
                cols.append(Column(str(c["name"]), str(c["kind"])))
            else:
                name, kind = c
                cols.append(Column(str(name), str(kind)))
        return cls(tuple(cols), str(d["label_column"]), str(d["positive_label"]))

    def to_dict(self) -> dict:
        return {
            "columns": [{"name": c.name, "kind": c.kind} for c in self.columns],
            "label_column": self.label_column,
            "positive_label": self.positive_label,
        }


@dataclass
class Dataset:
    """Parsed rows (numeric cells as floats, categorical cells as strings) with binary labels."""

    schema: Schema
    rows: list[dict]
    labels: list[int]

    def __post_init__(self):
        if len(self.rows) != len(self.labels):
            raise DataError(f"{len(self.rows)} rows but {len(self.labels)} labels")

    def __len__(self):
        return len(self.rows)

    def subset(self, indices: Sequence[int]) -> "Dataset":
        return Dataset(self.schema, [self.rows[i] for i in indices], [self.labels[i] for i in indices])


@dataclass(frozen=True)
class EncoderSpec:
    schema: Schema
    means: dict
    stds: dict
    vocab: dict

    @property
    def dim(self) -> int:
        return sum(1 if c.kind == NUMERIC else len(self.vocab[c.name]) for c in self.schema.columns)

    def feature_names(self) -> list[str]:
        out = []
        for c in self.schema.columns:
            if c.kind == NUMERIC:
                out.append(c.name)
            else:
                out.extend(f"{c.name}={v}" for v in self.vocab[c.name])
        return out

    def to_dict(self) -> dict:
        return {
            "schema": self.schema.to_dict(),
            "means": self.means,
            "stds": self.stds,
            "vocab": self.vocab,
        }


@dataclass
class EmbeddedDataset:
    points: np.ndarray
    labels: np.ndarray
    encoder: EncoderSpec | None = None
    point_ids: list = field(default=None)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        if self.points.ndim != 2:
            raise DataError("points must be a 2-d array")
        self.labels = np.asarray(self.labels, dtype=int)
        if self.labels.shape != (self.points.shape[0],):
            raise DataError("labels must have one entry per point")
        if self.point_ids is None:
            self.point_ids = list(range(len(self.labels)))
        elif len(self.point_ids) != len(self.labels):
            raise DataError("point_ids must have one entry per point")

    def __len__(self):
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def subset(self, indices: Sequence[int]) -> "EmbeddedDataset":
        idx = np.asarray(indices, dtype=int)
        return EmbeddedDataset(self.points[idx], self.labels[idx], self.encoder,
                               [self.point_ids[i] for i in idx])


class SerializationTemplate(str, enum.Enum):
    TEXT = "text_template"
    LIST = "list_template"


def _open_text(path: Path):
    if path.suffix == ".gz":
        return gzip.open(path, "rt", encoding="utf-8", newline="")
    return open(path, encoding="utf-8", newline="")


def load_csv(path, schema: Schema) -> Dataset:
    """Read a headered CSV (optionally gzip-compressed) into a Dataset.

    Header order is irrelevant; columns not named in the schema are ignored.
    Labels become 1 where the cell equals ``schema.positive_label``.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    with _open_text(path) as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [n for n in schema.names + [schema.label_column] if n not in header]
        if missing:
            raise DataError(f"{path}: missing column(s) {missing}")
        rows, raw_labels = [], []
        for lineno, rec in enumerate(reader, start=2):
            row = {}
            for col in schema.columns:
                cell = rec[col.name]
                if cell is None:
                    raise DataError(f"{path}:{lineno}: short row")
                cell = cell.strip()
                if col.kind == NUMERIC:
                    try:
                        v = float(cell)
                    except ValueError:
                        raise DataError(f"{path}:{lineno}: column {col.name!r}: "
                                        f"cannot parse {cell!r} as a number") from None
                    if not math.isfinite(v):
                        raise DataError(f"{path}:{lineno}: column {col.name!r}: non-finite value")
                    row[col.name] = v
                else:
                    row[col.name] = cell
            rows.append(row)
            raw_labels.append((rec[schema.label_column] or "").strip())
    distinct = sorted(set(raw_labels))
    if len(distinct) > 2:
        raise DataError(f"{path}: label column {schema.label_column!r} is not binary: {distinct}")
    if len(distinct) == 2 and schema.positive_label not in distinct:
        raise DataError(f"{path}: positive label {schema.positive_label!r} not among {distinct}")
    labels = [int(v == schema.positive_label) for v in raw_labels]
    return Dataset(schema, rows, labels)


def fit_encoder(dataset: Dataset) -> EncoderSpec:
    """Per-column population mean/std for numerics, sorted vocabulary for categoricals."""
    if len(dataset) == 0:
        raise DataError("cannot fit an encoder on an empty dataset")
    means, stds, vocab = {}, {}, {}
    for col in dataset.schema.columns:
        if col.kind == NUMERIC:
            x = np.array([r[col.name] for r in dataset.rows], dtype=float)
            mu = float(x.mean())
            sd = float(np.sqrt(np.mean((x - mu) ** 2)))
            means[col.name] = mu
            stds[col.name] = sd if sd > STD_FLOOR else 1.0
        else:
            vocab[col.name] = sorted({r[col.name] for r in dataset.rows})
    return EncoderSpec(dataset.schema, means, stds, vocab)


def encode(dataset: Dataset, encoder: EncoderSpec) -> EmbeddedDataset:
    """Z-score numerics and one-hot categoricals; unseen categories map to an all-zero block."""
    if dataset.schema.names != encoder.schema.names:
        raise DataError("dataset schema does not match encoder schema")
    n = len(dataset)
    blocks = []
    for col in encoder.schema.columns:
        if col.kind == NUMERIC:
            x = np.array([r[col.name] for r in dataset.rows], dtype=float).reshape(n, 1)
            blocks.append((x - encoder.means[col.name]) / encoder.stds[col.name])
        else:
            cats = encoder.vocab[col.name]
            lookup = {c: j for j, c in enumerate(cats)}
            block = np.zeros((n, len(cats)))
            for i, r in enumerate(dataset.rows):
                j = lookup.get(r[col.name])
                if j is not None:
                    block[i, j] = 1.0
            blocks.append(block)
    points = np.hstack(blocks) if blocks else np.zeros((n, 0))
    return EmbeddedDataset(points, np.asarray(dataset.labels, dtype=int), encoder)


def shot_counts(labels: Sequence[int], n_shots: int) -> dict[int, int]:
    """Class-proportional allocation of ``n_shots``; every class gets at least one row and the
    rounding remainder goes to the majority class."""
    labels = np.asarray(labels)
    counts = {c: int(np.sum(labels == c)) for c in (0, 1)}
    if min(counts.values()) == 0:
        absent = [c for c, v in counts.items() if v == 0]
        raise DataError(f"class {absent[0]} absent from dataset")
    total = len(labels)
    majority = max(counts, key=lambda c: (counts[c], -c))
    minority = 1 - majority
    alloc = {minority: max(1, math.floor(n_shots * counts[minority] / total))}
    alloc[minority] = min(alloc[minority], counts[minority], n_shots - 1)
    alloc[majority] = n_shots - alloc[minority]
    return alloc


def split_indices(dataset: Dataset, n_shots: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Row indices of the stratified n-shot train split and of its complement."""
    if n_shots < 2:
        raise DataError("n_shots must be at least 2 so both classes are represented")
    if n_shots >= len(dataset):
        raise DataError(f"n_shots={n_shots} must be smaller than the dataset ({len(dataset)} rows)")
    labels = np.asarray(dataset.labels)
    alloc = shot_counts(labels, n_shots)
    rng = rng_for(seed)
    chosen = []
    for c in (0, 1):
        pool = np.flatnonzero(labels == c)
        chosen.append(rng.choice(pool, size=alloc[c], replace=False))
    train_idx = np.sort(np.concatenate(chosen))
    mask = np.ones(len(dataset), dtype=bool)
    mask[train_idx] = False
    return train_idx, np.flatnonzero(mask)


def split_shots(dataset: Dataset, n_shots: int, seed: int) -> tuple[Dataset, Dataset]:
    """Stratified n-shot train split (sampled without replacement) and its complement as test."""
    train_idx, test_idx = split_indices(dataset, n_shots, seed)
    return dataset.subset(train_idx.tolist()), dataset.subset(test_idx.tolist())


def format_value(v) -> str:
    if isinstance(v, bool):
        return str(v)
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if v.is_integer():
            return str(int(v))
        return repr(v)
    return str(v)


def serialize_row(row: Mapping, template=SerializationTemplate.TEXT,
                  columns: Sequence[str] | None = None) -> str:
    """Render a row as natural-language text.

    ``text_template`` gives ``"The age is 39. The sex is Male."``; ``list_template``
    gives one ``"age: 39"`` line per column. ``columns`` fixes the order (schema order).
    """
    template = SerializationTemplate(template)
    names = list(row) if columns is None else list(columns)
    if template is SerializationTemplate.TEXT:
        return " ".join(f"The {name} is {format_value(row[name])}." for name in names)
    return "\n".join(f"{name}: {format_value(row[name])}" for name in names)


ADULT_COLUMNS = [
    ("age", NUMERIC), ("workclass", CATEGORICAL), ("fnlwgt", NUMERIC),
    ("education", CATEGORICAL), ("education-num", NUMERIC),
    ("marital-status", CATEGORICAL), ("occupation", CATEGORICAL),
    ("relationship", CATEGORICAL), ("race", CATEGORICAL), ("sex", CATEGORICAL),
    ("capital-gain", NUMERIC), ("capital-loss", NUMERIC),
    ("hours-per-week", NUMERIC), ("native-country", CATEGORICAL),
]


def adult_schema() -> Schema:
    return Schema(tuple(Column(n, k) for n, k in ADULT_COLUMNS), "income", ">50K")


def adult_csv_path() -> Path:
    """Bundled UCI Adult (census income) data: train and test files concatenated, 48,842 rows."""
    return Path(__file__).parent / "data" / "adult.csv.gz"
