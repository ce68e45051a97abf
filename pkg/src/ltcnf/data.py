"""CSV ingestion, preprocessing chain, deterministic splits, synthetic data.

Missing cells are represented as NaN throughout.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, DataError, ParseError
from .util import atomic_write_text, named_rng

MISSING_TOKENS = {"", "na", "nan"}
DEFAULT_LABEL_COLUMN = "CANCER_TYPE"
POSITIVE_TOKEN = "NF1"
NEGATIVE_TOKEN = "OTHER"
CLASS_NAMES = ("not_NF1", "NF1")


@dataclass
class RawTable:
    columns: list  # feature column names
    values: np.ndarray  # (rows, features), NaN = missing
    labels: Optional[list]  # label strings, or None when the file has no label column
    label_column: str = DEFAULT_LABEL_COLUMN

    def __len__(self):
        return self.values.shape[0]


@dataclass
class PreprocessStats:
    mean: np.ndarray
    std: np.ndarray

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d) -> "PreprocessStats":
        return cls(np.array(d["mean"], dtype=np.float64), np.array(d["std"], dtype=np.float64))


@dataclass
class SequenceDataset:
    features: np.ndarray  # (S, T, F)
    labels_onehot: np.ndarray  # (S, C)
    class_names: tuple = CLASS_NAMES

    def __len__(self):
        return self.features.shape[0]

    @property
    def labels(self) -> np.ndarray:
        return self.labels_onehot.argmax(axis=1)


@dataclass
class SplitIndices:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    seed: int
    fractions: tuple


@dataclass(frozen=True)
class SynthConfig:
    num_samples: int = 2000
    num_features: int = 32
    class_separation: float = 2.0
    class_balance: float = 0.5
    missing_fraction: float = 0.01
    seed: int = 42

    def __post_init__(self):
        if self.num_samples < 2:
            raise ConfigError(f"num_samples must be >= 2, got {self.num_samples}")
        if self.num_features < 1:
            raise ConfigError(f"num_features must be >= 1, got {self.num_features}")
        if not self.class_separation >= 0:
            raise ConfigError(f"class_separation must be >= 0, got {self.class_separation}")
        if not 0.0 < self.class_balance < 1.0:
            raise ConfigError(f"class_balance must be in (0, 1), got {self.class_balance}")
        if not 0.0 <= self.missing_fraction < 1.0:
            raise ConfigError(f"missing_fraction must be in [0, 1), got {self.missing_fraction}")


# ---------------------------------------------------------------- CSV


def _parse_cell(text: str, line: int, column: str) -> float:
    token = text.strip()
    if token.lower() in MISSING_TOKENS:
        return math.nan
    try:
        return float(token)
    except ValueError:
        raise ParseError(f"line {line}, column {column!r}: not a number: {text!r}") from None


def load_csv(path, label_column: str = DEFAULT_LABEL_COLUMN, require_label: bool = True) -> RawTable:
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror}") from None
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise ParseError(f"{path}: missing header row")
        header = [h.strip() for h in header]
        if label_column in header:
            label_idx = header.index(label_column)
        elif require_label:
            raise ConfigError(f"{path}: label column {label_column!r} not found in header")
        else:
            label_idx = None
        feature_cols = [h for i, h in enumerate(header) if i != label_idx]
        rows, labels = [], []
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"{path}: line {line} has {len(row)} fields, expected {len(header)}")
            values = []
            for i, cell in enumerate(row):
                if i == label_idx:
                    labels.append(cell.strip())
                else:
                    values.append(_parse_cell(cell, line, header[i]))
            rows.append(values)
    values = np.array(rows, dtype=np.float64).reshape(len(rows), len(feature_cols))
    return RawTable(feature_cols, values, labels if label_idx is not None else None, label_column)


def table_to_csv(table: RawTable) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    has_labels = table.labels is not None
    writer.writerow(table.columns + ([table.label_column] if has_labels else []))
    for i, row in enumerate(table.values):
        cells = ["" if math.isnan(v) else repr(float(v)) for v in row]
        if has_labels:
            cells.append(table.labels[i])
        writer.writerow(cells)
    return buf.getvalue()


def write_csv(table: RawTable, path) -> None:
    atomic_write_text(path, table_to_csv(table))


# ---------------------------------------------------------------- preprocessing


def impute_nan_zero(table: RawTable) -> RawTable:
    values = np.where(np.isnan(table.values), 0.0, table.values)
    return RawTable(list(table.columns), values, table.labels, table.label_column)


def zscore_fit(train_rows) -> PreprocessStats:
    x = np.asarray(train_rows, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise DataError("zscore_fit needs at least one row of a 2-D matrix")
    return PreprocessStats(x.mean(axis=0), x.std(axis=0))


def zscore_apply(rows, stats: PreprocessStats) -> np.ndarray:
    x = np.asarray(rows, dtype=np.float64)
    if x.shape[-1] != stats.mean.shape[0]:
        raise DataError(f"rows have {x.shape[-1]} features, stats have {stats.mean.shape[0]}")
    safe = np.where(stats.std > 0, stats.std, 1.0)
    return np.where(stats.std > 0, (x - stats.mean) / safe, 0.0)


def binarize_labels(labels: Sequence[str], positive_token: str = POSITIVE_TOKEN) -> np.ndarray:
    return np.array([1 if label == positive_token else 0 for label in labels], dtype=np.int64)


def one_hot(labels, num_classes: int) -> np.ndarray:
    y = np.asarray(labels, dtype=np.int64)
    if y.size and (y.min() < 0 or y.max() >= num_classes):
        raise DataError(f"labels must lie in [0, {num_classes - 1}]")
    out = np.zeros((y.shape[0], num_classes))
    out[np.arange(y.shape[0]), y] = 1.0
    return out


def reshape_sequences(matrix, timesteps: int = 1) -> np.ndarray:
    x = np.asarray(matrix, dtype=np.float64)
    features = x.shape[1]
    if timesteps < 1 or features % timesteps:
        raise ConfigError(f"cannot split {features} features into {timesteps} timesteps")
    return x.reshape(x.shape[0], timesteps, features // timesteps)


def split_dataset(n: int, fractions=(0.64, 0.16, 0.20), seed: int = 0) -> SplitIndices:
    """Seeded shuffle of ``range(n)`` cut into train / val / test.

    The test block is ``n - floor(n * (train + val))`` rows (so 71,572 at
    0.8/0.2 gives 57,257 / 14,315), validation ``round(n * val)`` rows, and
    train takes the remainder. A zero fraction yields an empty split on
    purpose; a positive fraction that rounds to nothing is an error.
    """
    if len(fractions) != 3 or any(f < 0 for f in fractions) or fractions[0] <= 0:
        raise ConfigError(f"fractions must be (train>0, val>=0, test>=0), got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"fractions must sum to 1, got {sum(fractions)}")
    f_train, f_val, f_test = fractions
    n_test = n - math.floor(n * (f_train + f_val) + 1e-9) if f_test > 0 else 0
    n_val = round(n * f_val) if f_val > 0 else 0
    n_train = n - n_test - n_val
    for name, frac, size in (("train", f_train, n_train), ("val", f_val, n_val), ("test", f_test, n_test)):
        if frac > 0 and size < 1:
            raise ConfigError(f"{name} split is empty for n={n} and fraction {frac}")
    order = named_rng(seed, "split").permutation(n)
    return SplitIndices(
        train=np.sort(order[:n_train]),
        val=np.sort(order[n_train:n_train + n_val]),
        test=np.sort(order[n_train + n_val:]),
        seed=seed,
        fractions=tuple(fractions),
    )


@dataclass(frozen=True)
class PreprocessConfig:
    timesteps: int = 1
    positive_token: str = POSITIVE_TOKEN
    fractions: tuple = (0.64, 0.16, 0.20)
    fit_on: str = "train"  # "train" or "all"
    seed: int = 0

    def __post_init__(self):
        if self.fit_on not in ("train", "all"):
            raise ConfigError(f"fit_on must be 'train' or 'all', got {self.fit_on!r}")


@dataclass
class PreparedData:
    train: SequenceDataset
    val: SequenceDataset
    test: SequenceDataset
    stats: PreprocessStats
    split: SplitIndices
    columns: list


def prepare(table: RawTable, config: PreprocessConfig = PreprocessConfig()) -> PreparedData:
    """impute -> binarize -> split -> zscore fit/apply -> one-hot -> reshape."""
    if table.labels is None:
        raise DataError("labelled data required")
    clean = impute_nan_zero(table)
    y = binarize_labels(clean.labels, config.positive_token)
    split = split_dataset(len(clean), config.fractions, config.seed)
    fit_rows = clean.values[split.train] if config.fit_on == "train" else clean.values
    stats = zscore_fit(fit_rows)
    x = zscore_apply(clean.values, stats)
    onehot = one_hot(y, 2)
    seq = reshape_sequences(x, config.timesteps)

    def subset(idx):
        return SequenceDataset(seq[idx], onehot[idx])

    return PreparedData(subset(split.train), subset(split.val), subset(split.test), stats, split, clean.columns)


def transform(table: RawTable, stats: PreprocessStats, timesteps: int) -> np.ndarray:
    """Apply stored normalization to new rows (used at predict/evaluate time)."""
    return reshape_sequences(zscore_apply(impute_nan_zero(table).values, stats), timesteps)


# ---------------------------------------------------------------- synthetic


def synth_generate(config: SynthConfig = SynthConfig()) -> RawTable:
    """Two unit-variance Gaussian classes whose means sit at ±separation/2 along the diagonal."""
    rng = named_rng(config.seed, "synth")
    n, f = config.num_samples, config.num_features
    n_pos = int(round(n * config.class_balance))
    y = np.zeros(n, dtype=np.int64)
    y[:n_pos] = 1
    y = rng.permutation(y)
    direction = np.ones(f) / math.sqrt(f)
    sign = np.where(y == 1, 1.0, -1.0)[:, None]
    x = rng.standard_normal((n, f)) + sign * (config.class_separation / 2.0) * direction
    if config.missing_fraction > 0:
        x[rng.random((n, f)) < config.missing_fraction] = math.nan
    labels = [POSITIVE_TOKEN if v else NEGATIVE_TOKEN for v in y]
    return RawTable([f"g{i}" for i in range(f)], x, labels)
