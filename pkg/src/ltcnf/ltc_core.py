"""Recurrent cells: the liquid time-constant (LTC) cell and a plain LSTM cell.

LTC dynamics per neuron ``i``::

    dx/dt = -(1/tau_i + f_i) * x_i + f_i * A_i,   f = sigmoid(W_rec x + W_in u + b)

integrated with the fused semi-implicit step::

    x' = (x + dt * f * A) / (1 + dt * (1/tau + f))

The denominator is always > 1, which makes the update stable for any dt > 0.

Every function accepts either single vectors (shape ``(N,)``) or batches
(shape ``(B, N)``); rows are independent. The ``*_vjp`` helpers give the
reverse-mode derivatives of one step and are what the network's BPTT uses.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, NumericError, ShapeError

_TINY = np.finfo(np.float64).tiny
_ONE_MINUS = np.nextafter(1.0, 0.0)

LTC_TENSORS = ("recurrent_weights", "input_weights", "gate_bias", "attractor", "time_constants")
LSTM_TENSORS = ("input_weights", "recurrent_weights", "bias")
# stacked LSTM gate order inside the 4N rows
LSTM_GATES = ("input", "forget", "candidate", "output")


def sigmoid(z):
    """Logistic function, clipped so the result is strictly inside (0, 1)."""
    s = np.exp(-np.logaddexp(0.0, -np.asarray(z, dtype=np.float64)))
    return np.clip(s, _TINY, _ONE_MINUS)


def _as_array(name, value, ndim):
    arr = np.array(value, dtype=np.float64)
    if arr.ndim != ndim:
        raise ShapeError(f"{name}: expected {ndim}-D array, got shape {arr.shape}")
    arr.flags.writeable = False
    return arr


def glorot_uniform(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols))


@dataclass
class OpCounter:
    """Counts multiply-accumulates spent in cell matrix products."""

    multiply_accumulate_count: int = 0

    def add(self, n: int) -> None:
        if n < 0:
            raise ValueError("MAC increments must be non-negative")
        self.multiply_accumulate_count += int(n)


@dataclass(frozen=True)
class NeuronState:
    hidden: np.ndarray
    cell: Optional[np.ndarray] = None

    def __post_init__(self):
        h = np.array(self.hidden, dtype=np.float64)
        if not np.all(np.isfinite(h)):
            raise NumericError("neuron state contains non-finite values")
        h.flags.writeable = False
        object.__setattr__(self, "hidden", h)
        if self.cell is not None:
            c = np.array(self.cell, dtype=np.float64)
            if c.shape != h.shape:
                raise ShapeError(f"cell state shape {c.shape} != hidden shape {h.shape}")
            if not np.all(np.isfinite(c)):
                raise NumericError("cell state contains non-finite values")
            c.flags.writeable = False
            object.__setattr__(self, "cell", c)

    @classmethod
    def zeros(cls, units: int, batch: Optional[int] = None, with_cell: bool = False) -> "NeuronState":
        shape = (units,) if batch is None else (batch, units)
        return cls(np.zeros(shape), np.zeros(shape) if with_cell else None)


@dataclass(frozen=True)
class LtcCellParams:
    recurrent_weights: np.ndarray  # (N, N)
    input_weights: np.ndarray  # (N, M)
    gate_bias: np.ndarray  # (N,)
    attractor: np.ndarray  # (N,)
    time_constants: np.ndarray  # (N,), all > 0
    step_size: float = 1.0
    unfold_steps: int = 6
    kind: str = field(default="ltc", init=False)

    def __post_init__(self):
        for name in LTC_TENSORS:
            ndim = 2 if name.endswith("weights") else 1
            object.__setattr__(self, name, _as_array(name, getattr(self, name), ndim))
        n = self.recurrent_weights.shape[0]
        expected = {
            "recurrent_weights": (n, n),
            "input_weights": (n, self.input_weights.shape[1]),
            "gate_bias": (n,),
            "attractor": (n,),
            "time_constants": (n,),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ShapeError(f"{name}: expected shape {shape}, got {getattr(self, name).shape}")
        for name in LTC_TENSORS:
            if not np.all(np.isfinite(getattr(self, name))):
                raise NumericError(f"{name} contains non-finite values")
        if not np.all(self.time_constants > 0):
            raise ConfigError("time_constants must be strictly positive")
        if not (np.isfinite(self.step_size) and self.step_size > 0):
            raise ConfigError(f"step_size must be > 0, got {self.step_size}")
        if int(self.unfold_steps) != self.unfold_steps or self.unfold_steps < 1:
            raise ConfigError(f"unfold_steps must be an integer >= 1, got {self.unfold_steps}")
        object.__setattr__(self, "step_size", float(self.step_size))
        object.__setattr__(self, "unfold_steps", int(self.unfold_steps))

    @property
    def units(self) -> int:
        return self.recurrent_weights.shape[0]

    @property
    def input_size(self) -> int:
        return self.input_weights.shape[1]

    def tensors(self) -> dict:
        return {name: getattr(self, name) for name in LTC_TENSORS}

    def replace(self, **tensors) -> "LtcCellParams":
        values = self.tensors()
        values.update(tensors)
        return LtcCellParams(**values, step_size=self.step_size, unfold_steps=self.unfold_steps)

    @classmethod
    def init(cls, units: int, input_size: int, rng: np.random.Generator,
             step_size: float = 1.0, unfold_steps: int = 6) -> "LtcCellParams":
        return cls(
            recurrent_weights=glorot_uniform(rng, units, units),
            input_weights=glorot_uniform(rng, units, input_size),
            gate_bias=np.zeros(units),
            attractor=rng.uniform(-1.0, 1.0, size=units),
            time_constants=rng.uniform(0.5, 2.0, size=units),
            step_size=step_size,
            unfold_steps=unfold_steps,
        )


@dataclass(frozen=True)
class LstmCellParams:
    """Stacked LSTM weights; rows are grouped in :data:`LSTM_GATES` order."""

    input_weights: np.ndarray  # (4N, M)
    recurrent_weights: np.ndarray  # (4N, N)
    bias: np.ndarray  # (4N,)
    kind: str = field(default="lstm", init=False)

    def __post_init__(self):
        for name in LSTM_TENSORS:
            object.__setattr__(self, name, _as_array(name, getattr(self, name), 1 if name == "bias" else 2))
        rows = self.recurrent_weights.shape[0]
        if rows % 4 or self.recurrent_weights.shape != (rows, rows // 4):
            raise ShapeError(f"recurrent_weights: expected (4N, N), got {self.recurrent_weights.shape}")
        if self.input_weights.shape[0] != rows:
            raise ShapeError(f"input_weights: expected {rows} rows, got {self.input_weights.shape[0]}")
        if self.bias.shape != (rows,):
            raise ShapeError(f"bias: expected shape ({rows},), got {self.bias.shape}")
        for name in LSTM_TENSORS:
            if not np.all(np.isfinite(getattr(self, name))):
                raise NumericError(f"{name} contains non-finite values")

    @property
    def units(self) -> int:
        return self.recurrent_weights.shape[1]

    @property
    def input_size(self) -> int:
        return self.input_weights.shape[1]

    def tensors(self) -> dict:
        return {name: getattr(self, name) for name in LSTM_TENSORS}

    def replace(self, **tensors) -> "LstmCellParams":
        values = self.tensors()
        values.update(tensors)
        return LstmCellParams(**values)

    def gate_slice(self, gate: str) -> slice:
        i = LSTM_GATES.index(gate)
        n = self.units
        return slice(i * n, (i + 1) * n)

    @classmethod
    def init(cls, units: int, input_size: int, rng: np.random.Generator) -> "LstmCellParams":
        w_in = np.vstack([glorot_uniform(rng, units, input_size) for _ in LSTM_GATES])
        w_rec = np.vstack([glorot_uniform(rng, units, units) for _ in LSTM_GATES])
        bias = np.zeros(4 * units)
        bias[units:2 * units] = 1.0  # forget gate starts open
        return cls(input_weights=w_in, recurrent_weights=w_rec, bias=bias)


def _check_inputs(params, h, u):
    n, m = params.units, params.input_size
    if h.shape[-1] != n:
        raise ShapeError(f"state: expected {n} units, got {h.shape[-1]}")
    if u.shape[-1] != m:
        raise ShapeError(f"input: expected {m} features, got {u.shape[-1]}")
    if h.ndim == 2 and u.ndim == 2 and h.shape[0] != u.shape[0]:
        raise ShapeError(f"batch mismatch: state has {h.shape[0]} rows, input has {u.shape[0]}")
    if not (np.all(np.isfinite(h)) and np.all(np.isfinite(u))):
        raise NumericError("non-finite state or input")


def _rows(h) -> int:
    return 1 if h.ndim == 1 else h.shape[0]


# ---------------------------------------------------------------- LTC


def gate_raw(params: LtcCellParams, h, u):
    return sigmoid(h @ params.recurrent_weights.T + u @ params.input_weights.T + params.gate_bias)


def gate(params: LtcCellParams, state: NeuronState, input) -> np.ndarray:
    """sigmoid(W_rec·hidden + W_in·input + b), every entry strictly in (0, 1)."""
    u = np.asarray(input, dtype=np.float64)
    _check_inputs(params, state.hidden, u)
    return gate_raw(params, state.hidden, u)


def fused_step_raw(params: LtcCellParams, h, u, dt):
    """One fused step on arrays. Returns ``(h_new, f, den)`` for reuse in the VJP."""
    f = gate_raw(params, h, u)
    den = 1.0 + dt * (1.0 / params.time_constants + f)
    h_new = (h + dt * f * params.attractor) / den
    return h_new, f, den


def fused_step(params: LtcCellParams, state: NeuronState, input, dt: float) -> NeuronState:
    if not (np.isfinite(dt) and dt > 0):
        raise ConfigError(f"dt must be a positive finite number, got {dt}")
    u = np.asarray(input, dtype=np.float64)
    _check_inputs(params, state.hidden, u)
    h_new, _, _ = fused_step_raw(params, state.hidden, u, dt)
    return NeuronState(h_new)


def ltc_macs(params: LtcCellParams, rows: int = 1) -> int:
    """MACs of one full unfold (k gate products) for ``rows`` samples."""
    n, m = params.units, params.input_size
    return rows * params.unfold_steps * (n * n + n * m)


def ltc_unfold(params: LtcCellParams, state: NeuronState, input,
               counter: Optional[OpCounter] = None) -> NeuronState:
    """Advance one input timestep: ``unfold_steps`` fused steps of size step_size/k."""
    u = np.asarray(input, dtype=np.float64)
    _check_inputs(params, state.hidden, u)
    dt = params.step_size / params.unfold_steps
    h = state.hidden
    for _ in range(params.unfold_steps):
        h, _, _ = fused_step_raw(params, h, u, dt)
    if counter is not None:
        counter.add(ltc_macs(params, _rows(h)))
    return NeuronState(h)


def fused_step_vjp(params: LtcCellParams, h, u, dt, f, den, h_new, g):
    """Pull ``g = dL/dh_new`` back through one fused step.

    Returns ``(dh, du, grads)`` where ``grads`` maps tensor names to arrays
    summed over batch rows.
    """
    g_num = g / den
    # d h_new / d f = dt * (A - h_new) / den
    d_f = g_num * dt * (params.attractor - h_new)
    d_z = d_f * f * (1.0 - f)
    batched = h.ndim == 2
    h2, u2, dz2 = np.atleast_2d(h), np.atleast_2d(u), np.atleast_2d(d_z)
    grads = {
        "recurrent_weights": dz2.T @ h2,
        "input_weights": dz2.T @ u2,
        "gate_bias": dz2.sum(axis=0),
        "attractor": np.atleast_2d(g_num * dt * f).sum(axis=0),
        "time_constants": np.atleast_2d(g * h_new / den).sum(axis=0) * dt / params.time_constants ** 2,
    }
    dh = g_num + d_z @ params.recurrent_weights
    du = d_z @ params.input_weights
    if not batched:
        dh, du = dh.reshape(h.shape), du.reshape(u.shape)
    return dh, du, grads


# ---------------------------------------------------------------- LSTM


def lstm_step_raw(params: LstmCellParams, h, c, u):
    """One LSTM step on arrays. Returns ``(h_new, c_new, cache)``."""
    z = u @ params.input_weights.T + h @ params.recurrent_weights.T + params.bias
    n = params.units
    i = sigmoid(z[..., 0:n])
    fg = sigmoid(z[..., n:2 * n])
    cand = np.tanh(z[..., 2 * n:3 * n])
    o = sigmoid(z[..., 3 * n:4 * n])
    c_new = fg * c + i * cand
    tc = np.tanh(c_new)
    h_new = o * tc
    return h_new, c_new, (i, fg, cand, o, tc)


def lstm_macs(params: LstmCellParams, rows: int = 1) -> int:
    n, m = params.units, params.input_size
    return rows * 4 * (n * n + n * m)


def lstm_step(params: LstmCellParams, state: NeuronState, input,
              counter: Optional[OpCounter] = None) -> NeuronState:
    u = np.asarray(input, dtype=np.float64)
    _check_inputs(params, state.hidden, u)
    c = state.cell if state.cell is not None else np.zeros_like(state.hidden)
    h_new, c_new, _ = lstm_step_raw(params, state.hidden, c, u)
    if counter is not None:
        counter.add(lstm_macs(params, _rows(h_new)))
    return NeuronState(h_new, c_new)


def lstm_step_vjp(params: LstmCellParams, h, c, u, cache, g_h, g_c):
    """Pull ``(dL/dh_new, dL/dc_new)`` back through one LSTM step.

    Returns ``(dh, dc, du, grads)``.
    """
    i, fg, cand, o, tc = cache
    d_o = g_h * tc
    d_c = g_c + g_h * o * (1.0 - tc ** 2)
    d_i = d_c * cand
    d_f = d_c * c
    d_cand = d_c * i
    d_z = np.concatenate(
        [d_i * i * (1 - i), d_f * fg * (1 - fg), d_cand * (1 - cand ** 2), d_o * o * (1 - o)],
        axis=-1,
    )
    dz2 = np.atleast_2d(d_z)
    grads = {
        "input_weights": dz2.T @ np.atleast_2d(u),
        "recurrent_weights": dz2.T @ np.atleast_2d(h),
        "bias": dz2.sum(axis=0),
    }
    dh = d_z @ params.recurrent_weights
    du = d_z @ params.input_weights
    dc = d_c * fg
    return dh, dc, du, grads
