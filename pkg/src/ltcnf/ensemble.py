"""Stacked combiner over base classifiers, plus a glass-box logistic regression."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import data as data_mod
from . import metrics, network, training
from .errors import ConfigError, ContractError, ShapeError, TrainingError
from .ltc_core import sigmoid
from .util import named_rng

BASE_KINDS = ("ltc", "lstm", "logreg")


@dataclass(frozen=True)
class LogRegConfig:
    learning_rate: float = 0.1
    epochs: int = 500
    l2: float = 1e-4


@dataclass
class LogisticRegressionParams:
    weights: np.ndarray
    bias: float
    config: LogRegConfig = LogRegConfig()


def train_logistic_regression(x, y, config: LogRegConfig = LogRegConfig()) -> LogisticRegressionParams:
    """Full-batch gradient descent on mean log loss + (l2/2)·|w|², from zeros."""
    X = np.asarray(x, dtype=np.float64)
    t = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ShapeError(f"X must be a non-empty 2-D matrix, got shape {X.shape}")
    if t.shape != (X.shape[0],) or not np.all((t == 0) | (t == 1)):
        raise ShapeError("y must be a 0/1 vector with one entry per row of X")
    w = np.zeros(X.shape[1])
    b = 0.0
    n = X.shape[0]
    for _ in range(config.epochs):
        p = sigmoid(X @ w + b)
        err = p - t
        w = w - config.learning_rate * (X.T @ err / n + config.l2 * w)
        b = b - config.learning_rate * float(err.mean())
        if not (np.all(np.isfinite(w)) and np.isfinite(b)):
            raise TrainingError("logistic regression diverged")
    return LogisticRegressionParams(w, b, config)


def predict_logistic_regression(params: LogisticRegressionParams, x) -> np.ndarray:
    """Class probabilities ``(1 - p, p)`` per row."""
    X = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if X.shape[1] != params.weights.shape[0]:
        raise ShapeError(f"X has {X.shape[1]} features, model expects {params.weights.shape[0]}")
    z = X @ params.weights + params.bias
    # each column from its own logistic so neither rounds to exactly 0 or 1
    return np.column_stack([sigmoid(-z), sigmoid(z)])


def coefficients_report(params: LogisticRegressionParams, feature_names):
    """``[(name, weight), ...]`` by descending |weight|, ties by original index."""
    names = list(feature_names)
    w = params.weights
    if len(names) != w.shape[0]:
        raise ShapeError(f"{len(names)} names for {w.shape[0]} weights")
    order = sorted(range(len(names)), key=lambda i: (-abs(w[i]), i))
    return [(names[i], float(w[i])) for i in order]


def coefficients_to_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["feature", "weight"])
    for name, weight in rows:
        writer.writerow([name, repr(weight)])
    return buf.getvalue()


# ---------------------------------------------------------------- base models


@dataclass
class NetworkBase:
    kind: str
    model: Optional[network.ModelParams] = None
    report: Optional[training.TrainReport] = None

    def fit(self, train_set, val_set, net_config, train_config):
        spec = network.NetworkSpec.default(
            train_set.features.shape[2], units=net_config.units, cell_kind=self.kind,
            dropout_rate=net_config.dropout_rate, num_layers=net_config.num_layers,
            step_size=net_config.step_size, unfold_steps=net_config.unfold_steps,
        )
        init = network.init_model(spec, named_rng(train_config.seed, f"init.{self.kind}"))
        self.model, self.report = training.train(init, train_set, val_set, train_config)
        return self

    def predict_proba(self, features) -> np.ndarray:
        if self.model is None:
            raise ContractError(f"base model {self.kind!r} is not trained")
        return network.predict_proba(self.model, features)


@dataclass
class LogRegBase:
    config: LogRegConfig = LogRegConfig()
    params: Optional[LogisticRegressionParams] = None
    kind: str = "logreg"

    def fit(self, train_set, val_set=None, net_config=None, train_config=None):
        x = train_set.features.reshape(len(train_set), -1)
        self.params = train_logistic_regression(x, train_set.labels, self.config)
        return self

    def predict_proba(self, features) -> np.ndarray:
        if self.params is None:
            raise ContractError("base model 'logreg' is not trained")
        x = np.asarray(features)
        return predict_logistic_regression(self.params, x.reshape(x.shape[0], -1))


@dataclass
class StackedDataset:
    meta_features: np.ndarray  # (S, num_bases * C)
    labels: np.ndarray
    block_width: int = 2


def build_stacked_dataset(base_models, x_meta, y_meta) -> StackedDataset:
    if not base_models:
        raise ContractError("need at least one base model")
    blocks = [m.predict_proba(x_meta) for m in base_models]
    return StackedDataset(np.hstack(blocks), np.asarray(y_meta), blocks[0].shape[1])


@dataclass
class CombinerModel:
    bases: list
    meta: LogisticRegressionParams

    def predict_proba(self, features) -> np.ndarray:
        meta_x = build_stacked_dataset(self.bases, features, np.zeros(len(features))).meta_features
        return predict_logistic_regression(self.meta, meta_x)


@dataclass(frozen=True)
class NetConfig:
    units: int = 128
    num_layers: int = 2
    dropout_rate: float = 0.2
    step_size: float = 1.0
    unfold_steps: int = 6


@dataclass(frozen=True)
class CombinerConfig:
    bases: tuple = ("ltc", "logreg")
    preprocess: data_mod.PreprocessConfig = data_mod.PreprocessConfig()
    net: NetConfig = NetConfig()
    train: training.TrainConfig = training.TrainConfig()
    logreg: LogRegConfig = LogRegConfig()
    meta: LogRegConfig = LogRegConfig()
    meta_rows: str = "val"  # "val" (held out) or "train" (literal pseudocode order)

    def __post_init__(self):
        if not self.bases:
            raise ConfigError("need at least one base model kind")
        for kind in self.bases:
            if kind not in BASE_KINDS:
                raise ConfigError(f"unknown base kind {kind!r}; expected one of {BASE_KINDS}")
        if self.meta_rows not in ("val", "train"):
            raise ConfigError(f"meta_rows must be 'val' or 'train', got {self.meta_rows!r}")


@dataclass
class CombinerResult:
    model: CombinerModel
    metrics: metrics.MetricsReport
    base_metrics: dict = field(default_factory=dict)
    meta_feature_width: int = 0
    meta_coefficients: list = field(default_factory=list)
    feature_coefficients: list = field(default_factory=list)  # from the first logreg base, if any

    def to_dict(self) -> dict:
        return {
            "combiner": self.metrics.to_dict(),
            "bases": {name: m.to_dict() for name, m in self.base_metrics.items()},
            "meta_feature_width": self.meta_feature_width,
            "meta_coefficients": [{"feature": n, "weight": w} for n, w in self.meta_coefficients],
        }


def _make_base(kind: str, config: CombinerConfig):
    return LogRegBase(config.logreg) if kind == "logreg" else NetworkBase(kind)


def run_combiner_pipeline(table: data_mod.RawTable, config: CombinerConfig = CombinerConfig()) -> CombinerResult:
    """Split, fit bases on train, fit the meta-model on base outputs, score on test."""
    prepared = data_mod.prepare(table, config.preprocess)
    if len(prepared.val) == 0 and config.meta_rows == "val":
        raise ConfigError("held-out meta rows need a non-empty validation split")
    bases = []
    for i, kind in enumerate(config.bases):
        # per-base seed so two identical kinds still get independent init streams
        train_cfg = replace(config.train, seed=config.train.seed + 1000 * i)
        bases.append(_make_base(kind, config).fit(prepared.train, prepared.val, config.net, train_cfg))

    meta_split = prepared.val if config.meta_rows == "val" else prepared.train
    stacked = build_stacked_dataset(bases, meta_split.features, meta_split.labels)
    meta = train_logistic_regression(stacked.meta_features, stacked.labels, config.meta)
    combiner = CombinerModel(bases, meta)

    test = prepared.test
    report = metrics.evaluate_predictions(test.labels, combiner.predict_proba(test.features))
    base_metrics = {}
    for i, base in enumerate(bases):
        base_metrics[f"{i}:{base.kind}"] = metrics.evaluate_predictions(test.labels, base.predict_proba(test.features))
    names = [f"{i}:{b.kind}:p_{c}" for i, b in enumerate(bases) for c in data_mod.CLASS_NAMES]
    feature_coefs = []
    glass_box = next((b for b in bases if b.kind == "logreg"), None)
    if glass_box is not None:
        feature_coefs = coefficients_report(glass_box.params, prepared.columns)
    return CombinerResult(combiner, report, base_metrics, stacked.meta_features.shape[1],
                          coefficients_report(meta, names), feature_coefs)
