"""Minibatch training: cross-entropy, Adam, plateau LR schedule, early stopping."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import network
from .errors import ConfigError, NumericError, ShapeError, TrainingError
from .network import ModelParams
from .util import named_rng

log = logging.getLogger(__name__)

PROB_CLIP = network.PROB_CLIP
IMPROVEMENT_EPS = 1e-12
TAU_FLOOR = 1e-3


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 64
    learning_rate: float = 1e-3
    early_stop_patience: int = 10
    scheduler_factor: float = 0.5
    scheduler_patience: int = 5
    min_learning_rate: float = 1e-5
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0.0 < self.scheduler_factor < 1.0:
            raise ConfigError(f"scheduler_factor must be in (0, 1), got {self.scheduler_factor}")
        if not self.learning_rate > self.min_learning_rate > 0.0:
            raise ConfigError("need learning_rate > min_learning_rate > 0")
        if self.early_stop_patience < 1 or self.scheduler_patience < 1:
            raise ConfigError("patience values must be >= 1")


def categorical_cross_entropy(probs, onehot) -> float:
    """Mean over rows of ``-ln(clip(p_true, 1e-7, 1 - 1e-7))``."""
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(onehot, dtype=np.float64)
    if p.shape != y.shape or p.ndim != 2:
        raise ShapeError(f"probs {p.shape} and labels {y.shape} must be equal 2-D shapes")
    p_true = np.clip((p * y).sum(axis=1), PROB_CLIP, 1.0 - PROB_CLIP)
    return float(-np.log(p_true).mean())


# ---------------------------------------------------------------- Adam


@dataclass
class AdamState:
    first_moment: dict
    second_moment: dict
    timestep: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros_like(cls, params: dict) -> "AdamState":
        return cls({k: np.zeros_like(v) for k, v in params.items()},
                   {k: np.zeros_like(v) for k, v in params.items()})


def adam_update(state: AdamState, params: dict, grads: dict, lr: float):
    """One bias-corrected Adam step. Returns ``(new_params, new_state)``; inputs are untouched."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in {name}")
    t = state.timestep + 1
    b1, b2, eps = state.beta1, state.beta2, state.epsilon
    new_params, m_out, v_out = {}, {}, {}
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != np.shape(p):
            raise ShapeError(f"{name}: gradient shape {g.shape} != parameter shape {np.shape(p)}")
        m = b1 * state.first_moment[name] + (1.0 - b1) * g
        v = b2 * state.second_moment[name] + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        new_params[name] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
        m_out[name], v_out[name] = m, v
    return new_params, AdamState(m_out, v_out, t, b1, b2, eps)


# ---------------------------------------------------------------- schedules


def _epochs_since_best(history) -> int:
    best = math.inf
    best_at = 0
    for i, value in enumerate(history):
        if value < best - IMPROVEMENT_EPS:
            best, best_at = value, i
    return len(history) - 1 - best_at


def reduce_on_plateau(history, lr: float, factor: float = 0.5, patience: int = 5,
                      min_lr: float = 1e-5) -> float:
    """Learning rate for the next epoch given the validation-loss history so far.

    Multiplies by ``factor`` each time ``patience`` consecutive epochs pass
    without strict improvement; the counter restarts after every reduction.
    """
    if patience < 1:
        raise ConfigError("patience must be >= 1")
    if not history:
        return lr
    wait = _epochs_since_best(history)
    if wait > 0 and wait % patience == 0:
        return max(lr * factor, min_lr)
    return lr


def should_early_stop(history, patience: int = 10) -> bool:
    """True once the best validation loss lies more than ``patience`` epochs back.

    Epochs are history indices, so with a constant history the first
    epoch (index 0) stays best and stopping fires at index ``patience + 1``.
    """
    if patience < 1:
        raise ConfigError("patience must be >= 1")
    return bool(history) and _epochs_since_best(history) > patience


# ---------------------------------------------------------------- loop


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_accuracy: float
    val_loss: float
    val_accuracy: float
    learning_rate: float


@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)
    best_epoch: int = 0
    stopped_epoch: int = 0
    optimizer_steps: int = 0
    best_val_loss: float = math.inf
    best_val_accuracy: float = 0.0

    def to_dict(self) -> dict:
        return {
            "epochs": [asdict(e) for e in self.epochs],
            "summary": {
                "best_epoch": self.best_epoch,
                "stopped_epoch": self.stopped_epoch,
                "optimizer_steps": self.optimizer_steps,
                "best_val_loss": self.best_val_loss,
                "best_val_accuracy": self.best_val_accuracy,
            },
        }


def evaluate_loss(model: ModelParams, features, onehot, batch_size: int = 1024):
    """Eval-mode ``(loss, accuracy)`` over a whole split."""
    probs = network.predict_proba(model, features, batch_size)
    y = np.asarray(onehot)
    acc = float(np.mean(probs.argmax(axis=1) == y.argmax(axis=1)))
    return categorical_cross_entropy(probs, y), acc


def _project(tensors: dict) -> dict:
    # keep LTC time constants strictly positive after each update
    for name in tensors:
        if name.endswith(".time_constants"):
            tensors[name] = np.maximum(tensors[name], TAU_FLOOR)
    return tensors


def train(model: ModelParams, train_set, val_set, config: TrainConfig = TrainConfig()):
    """Fit ``model`` and return ``(best_model, report)``.

    ``train_set`` and ``val_set`` are ``SequenceDataset``-like objects with
    ``features`` (S, T, F) and ``labels_onehot`` (S, C).
    """
    x_tr, y_tr = np.asarray(train_set.features), np.asarray(train_set.labels_onehot)
    x_va, y_va = np.asarray(val_set.features), np.asarray(val_set.labels_onehot)
    if len(x_tr) == 0 or len(x_va) == 0:
        raise ConfigError("training and validation splits must be non-empty")
    if x_tr.shape[1:] != x_va.shape[1:]:
        raise ShapeError(f"train features {x_tr.shape[1:]} != validation features {x_va.shape[1:]}")

    shuffle_rng = named_rng(config.seed, "shuffle")
    dropout_rng = named_rng(config.seed, "dropout")
    params = model.tensors()
    adam = AdamState.zeros_like(params)
    lr = config.learning_rate
    report = TrainReport()
    history = []
    best_params = params
    n = len(x_tr)

    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(n)
        seen = 0
        loss_sum = 0.0
        correct = 0
        for b, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start:start + config.batch_size]
            current = model.with_tensors(params)
            probs, trace = network.forward(current, x_tr[idx], "train", dropout_rng)
            loss = categorical_cross_entropy(probs, y_tr[idx])
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}")
            grads = network.backward(current, trace, y_tr[idx])
            try:
                params, adam = adam_update(adam, params, grads, lr)
            except NumericError as exc:
                raise TrainingError(f"epoch {epoch}, batch {b}: {exc}") from None
            params = _project(params)
            report.optimizer_steps += 1
            seen += len(idx)
            loss_sum += loss * len(idx)
            correct += int(np.sum(probs.argmax(axis=1) == y_tr[idx].argmax(axis=1)))

        current = model.with_tensors(params)
        val_loss, val_acc = evaluate_loss(current, x_va, y_va)
        if not math.isfinite(val_loss):
            raise TrainingError(f"non-finite validation loss at epoch {epoch}")
        history.append(val_loss)
        report.epochs.append(EpochRecord(epoch, loss_sum / seen, correct / seen, val_loss, val_acc, lr))
        if val_loss < report.best_val_loss - IMPROVEMENT_EPS:
            report.best_val_loss, report.best_val_accuracy = val_loss, val_acc
            report.best_epoch = epoch
            best_params = params
        log.info("epoch %d: train_loss=%.5f val_loss=%.5f val_acc=%.4f lr=%.2e",
                 epoch, loss_sum / seen, val_loss, val_acc, lr)
        report.stopped_epoch = epoch
        if should_early_stop(history, config.early_stop_patience):
            break
        lr = reduce_on_plateau(history, lr, config.scheduler_factor,
                               config.scheduler_patience, config.min_learning_rate)

    return model.with_tensors(best_params), report
