"""Comparator predictors: persistence, linear extrapolation, LSTM seq2seq.

All baselines consume the same (beam index / Q, AoD) windows as the main
forecaster. The LSTM encodes the U input steps and emits all H horizon
values from a linear head on the final hidden state; it trains through
the same loop and loss as the forecaster.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tc
from .errors import ConfigError, ShapeError
from .params import ParamStore, seeded_init
from .tensor import Tensor


@dataclass(frozen=True)
class LstmConfig:
    input_size: int = 2
    hidden_size: int = 64
    layers: int = 2
    h_len: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.hidden_size < 1 or self.layers < 1:
            raise ConfigError("hidden_size and layers must be >= 1")
        if self.input_size < 1 or self.h_len < 0:
            raise ConfigError("input_size must be >= 1 and h_len >= 0")


def _round_clamp(values: np.ndarray, q_count: int) -> np.ndarray:
    idx = np.floor(np.asarray(values, dtype=np.float64) * q_count + 0.5)
    return np.clip(idx, 0, q_count - 1).astype(np.int64)


def persistence_predict(x: np.ndarray, q_count: int, h_len: int) -> np.ndarray:
    """Repeat the last observed beam index for all H steps."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] < 1:
        raise ShapeError("persistence_predict", f"expected (C, U) window, got {x.shape}")
    last = _round_clamp(x[0, -1:], q_count)[0]
    return np.full(h_len, last, dtype=np.int64)


def linear_extrapolate(x: np.ndarray, q_count: int, h_len: int) -> np.ndarray:
    """Least-squares line over the normalized beam row, extrapolated H steps."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] < 2:
        raise ShapeError("linear_extrapolate", f"need at least 2 steps, got {x.shape}")
    u = x.shape[1]
    t = np.arange(u, dtype=np.float64)
    slope, intercept = np.polyfit(t, x[0], 1)
    horizon = np.arange(u, u + h_len, dtype=np.float64)
    return _round_clamp(slope * horizon + intercept, q_count)


# ---------------------------------------------------------------------------
# LSTM seq2seq


def build_lstm_store(cfg: LstmConfig) -> ParamStore:
    """Stacked LSTM cells plus the horizon head; gate layout is (i, f, g, o)."""
    store = ParamStore()
    for layer in range(cfg.layers):
        in_dim = cfg.input_size if layer == 0 else cfg.hidden_size
        store.add(f"lstm.l{layer}.wx",
                  seeded_init(f"lstm.l{layer}.wx", (in_dim, 4 * cfg.hidden_size),
                              "uniform-scaled", cfg.seed), trainable=True)
        store.add(f"lstm.l{layer}.wh",
                  seeded_init(f"lstm.l{layer}.wh", (cfg.hidden_size, 4 * cfg.hidden_size),
                              "uniform-scaled", cfg.seed), trainable=True)
        store.add(f"lstm.l{layer}.b",
                  seeded_init(f"lstm.l{layer}.b", (4 * cfg.hidden_size,), "zeros", cfg.seed),
                  trainable=True)
    store.add("lstm.head.w",
              seeded_init("lstm.head.w", (cfg.hidden_size, cfg.h_len),
                          "uniform-scaled", cfg.seed), trainable=True)
    store.add("lstm.head.b",
              seeded_init("lstm.head.b", (cfg.h_len,), "zeros", cfg.seed), trainable=True)
    return store


def lstm_forecast(x: np.ndarray, store: ParamStore, cfg: LstmConfig,
                  collect_gates: bool = False):
    """Encode the (C, U) window and emit H normalized forecasts.

    With collect_gates=True also returns the per-step sigmoid gates and
    tanh candidates (as arrays) for range checks.
    """
    x = np.asarray(x, dtype=np.float32)
    if x.ndim != 2 or x.shape[0] != cfg.input_size:
        raise ShapeError("lstm_forecast", f"expected ({cfg.input_size}, U) window, got {x.shape}")
    u = x.shape[1]
    hidden = cfg.hidden_size
    h_states = [Tensor(np.zeros((1, hidden), dtype=np.float32)) for _ in range(cfg.layers)]
    c_states = [Tensor(np.zeros((1, hidden), dtype=np.float32)) for _ in range(cfg.layers)]
    gates_trace = [] if collect_gates else None

    for step in range(u):
        inp = Tensor(x[:, step].reshape(1, cfg.input_size))
        for layer in range(cfg.layers):
            wx = store[f"lstm.l{layer}.wx"]
            wh = store[f"lstm.l{layer}.wh"]
            bias = store[f"lstm.l{layer}.b"]
            pre = tc.matmul(inp, wx) + tc.matmul(h_states[layer], wh) + bias
            gi = tc.sigmoid(pre[:, 0 * hidden:1 * hidden])
            gf = tc.sigmoid(pre[:, 1 * hidden:2 * hidden])
            gg = tc.tanh(pre[:, 2 * hidden:3 * hidden])
            go = tc.sigmoid(pre[:, 3 * hidden:4 * hidden])
            c_states[layer] = gf * c_states[layer] + gi * gg
            h_states[layer] = go * tc.tanh(c_states[layer])
            inp = h_states[layer]
            if collect_gates:
                gates_trace.append((gi.data.copy(), gf.data.copy(),
                                    go.data.copy(), gg.data.copy()))

    out = tc.matmul(h_states[-1], store["lstm.head.w"]) + store["lstm.head.b"]
    out = tc.reshape(out, (cfg.h_len,))
    if collect_gates:
        return out, gates_trace
    return out


def lstm_loss(store: ParamStore, cfg: LstmConfig, x: np.ndarray, y: np.ndarray):
    """Mean squared error against the normalized future beam indices."""
    y = np.asarray(y, dtype=np.float32)
    pred = lstm_forecast(x, store, cfg)
    if pred.shape != y.shape:
        raise ShapeError("lstm_loss", f"shapes differ: {pred.shape} vs {y.shape}")
    return tc.mse(pred, Tensor(y))
