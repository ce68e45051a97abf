"""Stacked recurrent classifier: forward pass with trace, BPTT, persistence."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import ltc_core
from .errors import ConfigError, ContractError, NumericError, PersistenceError, ShapeError
from .ltc_core import LstmCellParams, LtcCellParams, OpCounter
from .util import atomic_write_text

FORMAT_VERSION = 1
CELL_KINDS = ("ltc", "lstm")


@dataclass(frozen=True)
class LayerSpec:
    cell_kind: str = "ltc"
    units: int = 128
    return_sequences: bool = False
    dropout_rate: float = 0.2
    step_size: float = 1.0
    unfold_steps: int = 6

    def __post_init__(self):
        if self.cell_kind not in CELL_KINDS:
            raise ConfigError(f"cell_kind must be one of {CELL_KINDS}, got {self.cell_kind!r}")
        if int(self.units) != self.units or self.units < 1:
            raise ConfigError(f"units must be >= 1, got {self.units}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if not self.step_size > 0:
            raise ConfigError(f"step_size must be > 0, got {self.step_size}")
        if int(self.unfold_steps) != self.unfold_steps or self.unfold_steps < 1:
            raise ConfigError(f"unfold_steps must be >= 1, got {self.unfold_steps}")


@dataclass(frozen=True)
class NetworkSpec:
    layers: tuple
    num_classes: int = 2
    input_features: int = 973

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.layers:
            raise ConfigError("network needs at least one recurrent layer")
        for i, layer in enumerate(self.layers):
            last = i == len(self.layers) - 1
            if layer.return_sequences == last:
                want = "False" if last else "True"
                raise ConfigError(f"layer {i}: return_sequences must be {want}")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.input_features < 1:
            raise ConfigError(f"input_features must be >= 1, got {self.input_features}")

    @classmethod
    def default(cls, input_features: int, units: int = 128, cell_kind: str = "ltc",
                dropout_rate: float = 0.2, num_layers: int = 2, step_size: float = 1.0,
                unfold_steps: int = 6, num_classes: int = 2) -> "NetworkSpec":
        layers = [
            LayerSpec(cell_kind, units, i < num_layers - 1, dropout_rate, step_size, unfold_steps)
            for i in range(num_layers)
        ]
        return cls(tuple(layers), num_classes, input_features)

    def to_dict(self) -> dict:
        return {
            "layers": [vars(layer).copy() for layer in self.layers],
            "num_classes": self.num_classes,
            "input_features": self.input_features,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(tuple(LayerSpec(**layer) for layer in d["layers"]), d["num_classes"], d["input_features"])


@dataclass(frozen=True)
class ModelParams:
    spec: NetworkSpec
    layers: tuple
    output_weights: np.ndarray  # (C, N_last)
    output_bias: np.ndarray  # (C,)
    preprocessing: Optional[dict] = None
    format_version: int = FORMAT_VERSION

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if len(self.layers) != len(self.spec.layers):
            raise ShapeError(f"expected {len(self.spec.layers)} layers, got {len(self.layers)}")
        fan_in = self.spec.input_features
        for i, (cell, ls) in enumerate(zip(self.layers, self.spec.layers)):
            if cell.kind != ls.cell_kind:
                raise ShapeError(f"layer {i}: spec says {ls.cell_kind}, params are {cell.kind}")
            if cell.units != ls.units or cell.input_size != fan_in:
                raise ShapeError(
                    f"layer {i}: expected {ls.units} units x {fan_in} inputs, "
                    f"got {cell.units} x {cell.input_size}"
                )
            fan_in = ls.units
        w = np.array(self.output_weights, dtype=np.float64)
        b = np.array(self.output_bias, dtype=np.float64)
        if w.shape != (self.spec.num_classes, fan_in):
            raise ShapeError(f"output_weights: expected {(self.spec.num_classes, fan_in)}, got {w.shape}")
        if b.shape != (self.spec.num_classes,):
            raise ShapeError(f"output_bias: expected ({self.spec.num_classes},), got {b.shape}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise NumericError("output parameters contain non-finite values")
        w.flags.writeable = False
        b.flags.writeable = False
        object.__setattr__(self, "output_weights", w)
        object.__setattr__(self, "output_bias", b)

    def tensors(self) -> dict:
        """Flat ``name -> array`` view of every trainable tensor, in a fixed order."""
        out = {}
        for i, cell in enumerate(self.layers):
            for name, arr in cell.tensors().items():
                out[f"layers.{i}.{name}"] = arr
        out["output_weights"] = self.output_weights
        out["output_bias"] = self.output_bias
        return out

    def with_tensors(self, tensors: dict) -> "ModelParams":
        layers = []
        for i, cell in enumerate(self.layers):
            prefix = f"layers.{i}."
            layers.append(cell.replace(**{k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)}))
        return ModelParams(
            spec=self.spec,
            layers=tuple(layers),
            output_weights=tensors.get("output_weights", self.output_weights),
            output_bias=tensors.get("output_bias", self.output_bias),
            preprocessing=self.preprocessing,
            format_version=self.format_version,
        )

    def with_preprocessing(self, preprocessing: Optional[dict]) -> "ModelParams":
        return ModelParams(self.spec, self.layers, self.output_weights, self.output_bias,
                           preprocessing, self.format_version)


def init_model(spec: NetworkSpec, rng: np.random.Generator) -> ModelParams:
    layers = []
    fan_in = spec.input_features
    for ls in spec.layers:
        if ls.cell_kind == "ltc":
            layers.append(LtcCellParams.init(ls.units, fan_in, rng, ls.step_size, ls.unfold_steps))
        else:
            layers.append(LstmCellParams.init(ls.units, fan_in, rng))
        fan_in = ls.units
    return ModelParams(
        spec=spec,
        layers=tuple(layers),
        output_weights=ltc_core.glorot_uniform(rng, spec.num_classes, fan_in),
        output_bias=np.zeros(spec.num_classes),
    )


# ---------------------------------------------------------------- forward


def softmax(logits):
    z = np.asarray(logits, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def dropout_mask(shape, rate: float, mode: str, rng: Optional[np.random.Generator]):
    """Inverted-dropout multiplier, or ``None`` when dropout is the identity."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if mode not in ("train", "eval"):
        raise ConfigError(f"mode must be 'train' or 'eval', got {mode!r}")
    if mode == "eval" or rate == 0.0:
        return None
    if rng is None:
        raise ConfigError("train-mode dropout needs a random generator")
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


def dropout_apply(activations, rate: float, mode: str, rng: Optional[np.random.Generator] = None):
    a = np.asarray(activations, dtype=np.float64)
    mask = dropout_mask(a.shape, rate, mode, rng)
    return a if mask is None else a * mask


@dataclass
class LayerTrace:
    inputs: np.ndarray  # (B, T, M)
    steps: list  # per (t, s): tuple of cached arrays
    outputs: np.ndarray  # (B, T, N) or (B, N), pre-dropout
    mask: Optional[np.ndarray]


@dataclass
class ForwardTrace:
    batch_shape: tuple
    mode: str
    layers: list = field(default_factory=list)
    final: Optional[np.ndarray] = None  # dropout-applied input to the dense head
    logits: Optional[np.ndarray] = None
    probabilities: Optional[np.ndarray] = None


def _layer_forward(cell, ls: LayerSpec, x, counter):
    batch, steps_t, _ = x.shape
    h = np.zeros((batch, cell.units))
    c = np.zeros((batch, cell.units))
    seq = np.empty((batch, steps_t, cell.units)) if ls.return_sequences else None
    cache = []
    if cell.kind == "ltc":
        dt = cell.step_size / cell.unfold_steps
        for t in range(steps_t):
            u = x[:, t, :]
            for _ in range(cell.unfold_steps):
                h_new, f, den = ltc_core.fused_step_raw(cell, h, u, dt)
                cache.append((h, f, den, h_new))
                h = h_new
            if counter is not None:
                counter.add(ltc_core.ltc_macs(cell, batch))
            if seq is not None:
                seq[:, t, :] = h
    else:
        for t in range(steps_t):
            u = x[:, t, :]
            h_new, c_new, step_cache = ltc_core.lstm_step_raw(cell, h, c, u)
            cache.append((h, c, step_cache))
            h, c = h_new, c_new
            if counter is not None:
                counter.add(ltc_core.lstm_macs(cell, batch))
            if seq is not None:
                seq[:, t, :] = h
    return (seq if seq is not None else h), cache


def forward(model: ModelParams, batch, mode: str = "eval", rng: Optional[np.random.Generator] = None,
            counter: Optional[OpCounter] = None):
    """Run the network on a ``(B, T, M)`` batch. Returns ``(probabilities, trace)``."""
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 3:
        raise ShapeError(f"batch must be 3-D (B, T, M), got shape {x.shape}")
    if x.shape[2] != model.spec.input_features:
        raise ShapeError(f"batch has {x.shape[2]} features, model expects {model.spec.input_features}")
    if x.shape[0] < 1 or x.shape[1] < 1:
        raise ShapeError(f"batch needs B >= 1 and T >= 1, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise NumericError("batch contains non-finite values")
    trace = ForwardTrace(batch_shape=x.shape, mode=mode)
    current = x
    for cell, ls in zip(model.layers, model.spec.layers):
        out, cache = _layer_forward(cell, ls, current, counter)
        mask = dropout_mask(out.shape, ls.dropout_rate, mode, rng)
        trace.layers.append(LayerTrace(current, cache, out, mask))
        current = out if mask is None else out * mask
    trace.final = current
    trace.logits = current @ model.output_weights.T + model.output_bias
    trace.probabilities = softmax(trace.logits)
    return trace.probabilities, trace


def predict_proba(model: ModelParams, features, batch_size: int = 1024) -> np.ndarray:
    """Eval-mode probabilities, computed in fixed-size chunks."""
    x = np.asarray(features, dtype=np.float64)
    parts = [forward(model, x[i:i + batch_size], "eval")[0] for i in range(0, len(x), batch_size)]
    if not parts:
        return np.zeros((0, model.spec.num_classes))
    return np.concatenate(parts, axis=0)


# ---------------------------------------------------------------- backward

PROB_CLIP = 1e-7


def _layer_backward(cell, ls: LayerSpec, lt: LayerTrace, g_out, grads, prefix):
    x = lt.inputs
    batch, steps_t, _ = x.shape
    dx = np.zeros_like(x)
    if ls.return_sequences:
        g_seq, g_h = g_out, np.zeros((batch, cell.units))
    else:
        g_seq, g_h = None, g_out
    if cell.kind == "ltc":
        dt = cell.step_size / cell.unfold_steps
        k = cell.unfold_steps
        for t in reversed(range(steps_t)):
            if g_seq is not None:
                g_h = g_h + g_seq[:, t, :]
            u = x[:, t, :]
            du_t = np.zeros_like(u)
            for s in reversed(range(k)):
                h, f, den, h_new = lt.steps[t * k + s]
                g_h, du, step_grads = ltc_core.fused_step_vjp(cell, h, u, dt, f, den, h_new, g_h)
                du_t += du
                for name, g in step_grads.items():
                    grads[prefix + name] += g
            dx[:, t, :] = du_t
    else:
        g_c = np.zeros((batch, cell.units))
        for t in reversed(range(steps_t)):
            if g_seq is not None:
                g_h = g_h + g_seq[:, t, :]
            h, c, step_cache = lt.steps[t]
            g_h, g_c, du, step_grads = ltc_core.lstm_step_vjp(cell, h, c, x[:, t, :], step_cache, g_h, g_c)
            dx[:, t, :] = du
            for name, g in step_grads.items():
                grads[prefix + name] += g
    return dx


def backward(model: ModelParams, trace: ForwardTrace, onehot_labels) -> dict:
    """Gradients of mean clipped cross-entropy w.r.t. every tensor in ``model.tensors()``."""
    y = np.asarray(onehot_labels, dtype=np.float64)
    p = trace.probabilities
    if p is None or len(trace.layers) != len(model.layers):
        raise ContractError("trace was not produced by a forward pass of this model")
    if y.shape != p.shape:
        raise ContractError(f"labels shape {y.shape} does not match trace output {p.shape}")
    if trace.final.shape[1] != model.output_weights.shape[1]:
        raise ContractError("trace does not match model output layer")
    batch = y.shape[0]
    p_true = (p * y).sum(axis=1)
    active = (p_true >= PROB_CLIP) & (p_true <= 1.0 - PROB_CLIP)
    d_logits = (p - y) * active[:, None] / batch

    grads = {name: np.zeros_like(arr) for name, arr in model.tensors().items()}
    grads["output_weights"] = d_logits.T @ trace.final
    grads["output_bias"] = d_logits.sum(axis=0)
    g = d_logits @ model.output_weights
    for i in reversed(range(len(model.layers))):
        lt = trace.layers[i]
        if lt.mask is not None:
            g = g * lt.mask
        g = _layer_backward(model.layers[i], model.spec.layers[i], lt, g, grads, f"layers.{i}.")
    return grads


# ---------------------------------------------------------------- persistence


def _encode_tensor(arr) -> dict:
    a = np.asarray(arr, dtype=np.float64)
    return {"shape": list(a.shape), "data": a.ravel().tolist()}


def _decode_tensor(doc, path: str) -> np.ndarray:
    if not isinstance(doc, dict) or "shape" not in doc or "data" not in doc:
        raise PersistenceError(f"{path}: expected an object with 'shape' and 'data'")
    shape, data = doc["shape"], doc["data"]
    if not isinstance(shape, list) or not all(isinstance(s, int) and s >= 0 for s in shape):
        raise PersistenceError(f"{path}.shape: expected a list of non-negative integers")
    if not isinstance(data, list) or len(data) != math.prod(shape):
        raise PersistenceError(f"{path}.data: expected {math.prod(shape)} numbers")
    try:
        return np.array(data, dtype=np.float64).reshape(shape)
    except (TypeError, ValueError) as exc:
        raise PersistenceError(f"{path}.data: {exc}") from None


def model_to_dict(model: ModelParams) -> dict:
    layers = []
    for cell in model.layers:
        entry = {"kind": cell.kind}
        if cell.kind == "ltc":
            entry["step_size"] = cell.step_size
            entry["unfold_steps"] = cell.unfold_steps
        entry["tensors"] = {name: _encode_tensor(arr) for name, arr in cell.tensors().items()}
        layers.append(entry)
    return {
        "format_version": model.format_version,
        "spec": model.spec.to_dict(),
        "preprocessing": model.preprocessing,
        "layers": layers,
        "output_weights": _encode_tensor(model.output_weights),
        "output_bias": _encode_tensor(model.output_bias),
    }


def model_from_dict(doc) -> ModelParams:
    if not isinstance(doc, dict):
        raise PersistenceError("model document: expected a JSON object")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise PersistenceError(f"format_version: unsupported version {version!r} (expected {FORMAT_VERSION})")
    for key in ("spec", "layers", "output_weights", "output_bias"):
        if key not in doc:
            raise PersistenceError(f"{key}: missing field")
    try:
        spec = NetworkSpec.from_dict(doc["spec"])
    except (KeyError, TypeError, ConfigError) as exc:
        raise PersistenceError(f"spec: {exc}") from None
    if not isinstance(doc["layers"], list):
        raise PersistenceError("layers: expected a list")
    layers = []
    for i, entry in enumerate(doc["layers"]):
        path = f"layers[{i}]"
        if not isinstance(entry, dict) or "tensors" not in entry:
            raise PersistenceError(f"{path}: expected an object with 'tensors'")
        names = ltc_core.LTC_TENSORS if entry.get("kind") == "ltc" else ltc_core.LSTM_TENSORS
        if entry.get("kind") not in CELL_KINDS:
            raise PersistenceError(f"{path}.kind: unknown cell kind {entry.get('kind')!r}")
        tensors = {}
        for name in names:
            if name not in entry["tensors"]:
                raise PersistenceError(f"{path}.tensors.{name}: missing field")
            tensors[name] = _decode_tensor(entry["tensors"][name], f"{path}.tensors.{name}")
        try:
            if entry["kind"] == "ltc":
                layers.append(LtcCellParams(**tensors, step_size=entry["step_size"],
                                            unfold_steps=entry["unfold_steps"]))
            else:
                layers.append(LstmCellParams(**tensors))
        except KeyError as exc:
            raise PersistenceError(f"{path}.{exc.args[0]}: missing field") from None
        except (ShapeError, ConfigError, NumericError) as exc:
            raise PersistenceError(f"{path}: {exc}") from None
    try:
        return ModelParams(
            spec=spec,
            layers=tuple(layers),
            output_weights=_decode_tensor(doc["output_weights"], "output_weights"),
            output_bias=_decode_tensor(doc["output_bias"], "output_bias"),
            preprocessing=doc.get("preprocessing"),
        )
    except (ShapeError, NumericError) as exc:
        raise PersistenceError(f"model: {exc}") from None


def model_save(model: ModelParams, path) -> None:
    atomic_write_text(path, json.dumps(model_to_dict(model), indent=1) + "\n")


def model_load(path) -> ModelParams:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise PersistenceError(f"{path}: malformed JSON at line {exc.lineno} column {exc.colno}") from None
    except OSError as exc:
        raise PersistenceError(f"{path}: {exc.strerror}") from None
    return model_from_dict(doc)
