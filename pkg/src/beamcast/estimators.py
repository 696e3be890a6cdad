"""Scikit-learn style estimators over the predictors.

Every estimator fits on X of shape (n_samples, 2, U) holding (beam
index / Q, AoD rad) rows and y of shape (n_samples, H) holding future
beam indices / Q, and predicts integer beam indices of shape
(n_samples, H). `predict_indices(x, q_count)` is the single-window
protocol the evaluation harness drives, with an explicit codebook size
so one fitted model can serve scenarios with other antenna counts.
"""

from __future__ import annotations

from dataclasses import replace
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator

from . import baselines
from .config import get_bool, get_int, get_str, load_config
from .errors import ConfigError, DataError
from .model import (ModelConfig, build_model_store, forecast_loss, forward,
                    normalize_target, postprocess, select_prototypes)
from .params import seeded_rng
from .training import TrainConfig, train
from .validation import check_is_fitted, check_q_count, check_target_batch, check_window, check_window_batch

_VARIABLE_ROWS = {"both": (0, 1), "beam": (0,), "aod": (1,)}


def _group_into_units(samples, batch_size: int, seed: int):
    """Seeded fixed grouping of windows into minibatch units whose loss is
    evaluated in one graph."""
    order = seeded_rng(seed, "fit-batch-grouping").permutation(len(samples))
    return [[samples[i] for i in order[j:j + batch_size]]
            for j in range(0, len(order), batch_size)]


class PersistencePredictor(BaseEstimator):
    """Repeat the last observed optimal beam for every horizon step."""

    name = "persistence"

    def __init__(self, q_count: int = 64, h_len: int = 10):
        self.q_count = q_count
        self.h_len = h_len

    def fit(self, X, y=None):
        check_window_batch(X)
        self.fitted_ = True
        return self

    def predict_indices(self, x, q_count: int | None = None) -> np.ndarray:
        x = check_window(x)
        q = check_q_count(q_count if q_count is not None else self.q_count)
        return baselines.persistence_predict(x, q, self.h_len)

    def predict(self, X) -> np.ndarray:
        X = check_window_batch(X)
        return np.stack([self.predict_indices(x) for x in X])


class LinearExtrapolationPredictor(BaseEstimator):
    """Least-squares line over the beam row, extrapolated H steps."""

    name = "linear"

    def __init__(self, q_count: int = 64, h_len: int = 10):
        self.q_count = q_count
        self.h_len = h_len

    def fit(self, X, y=None):
        check_window_batch(X)
        self.fitted_ = True
        return self

    def predict_indices(self, x, q_count: int | None = None) -> np.ndarray:
        x = check_window(x)
        q = check_q_count(q_count if q_count is not None else self.q_count)
        return baselines.linear_extrapolate(x, q, self.h_len)

    def predict(self, X) -> np.ndarray:
        X = check_window_batch(X)
        return np.stack([self.predict_indices(x) for x in X])


class OraclePredictor(BaseEstimator):
    """Marker predictor resolved to the true future optima by the harness."""

    name = "oracle"
    is_oracle = True

    def fit(self, X=None, y=None):
        return self

    def predict_indices(self, x, q_count: int | None = None):
        raise RuntimeError("the oracle is resolved by the evaluation harness, "
                           "not by calling predict_indices")


class BeamForecaster(BaseEstimator):
    """The reprogrammed frozen-backbone forecaster behind a fit/predict API.

    input_variables selects which window rows feed the model ("both",
    "beam", or "aod"); targets are standardized with the beam row's
    per-window statistics when the beam row is an input, otherwise they
    stay in index/Q units.
    """

    name = "forecaster"

    def __init__(self, u_len: int = 40, h_len: int = 10, patch_len: int = 16,
                 stride: int = 8, d_model: int = 32, n_heads: int = 4,
                 backbone_dim: int = 64, backbone_layers: int = 2,
                 vocab_size: int = 4096, n_prototypes: int = 100,
                 input_variables: str = "both", use_prompt: bool = True,
                 q_count: int = 64, learning_rate: float = 1e-3,
                 epochs: int = 15, batch_size: int = 16,
                 val_fraction: float = 0.2, early_stop_patience: int = 5,
                 seed: int = 0):
        self.u_len = u_len
        self.h_len = h_len
        self.patch_len = patch_len
        self.stride = stride
        self.d_model = d_model
        self.n_heads = n_heads
        self.backbone_dim = backbone_dim
        self.backbone_layers = backbone_layers
        self.vocab_size = vocab_size
        self.n_prototypes = n_prototypes
        self.input_variables = input_variables
        self.use_prompt = use_prompt
        self.q_count = q_count
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.val_fraction = val_fraction
        self.early_stop_patience = early_stop_patience
        self.seed = seed

    # -- configuration plumbing ------------------------------------------

    def _rows(self) -> tuple[int, ...]:
        if self.input_variables not in _VARIABLE_ROWS:
            raise ConfigError(f"input_variables must be one of {sorted(_VARIABLE_ROWS)}, "
                              f"got {self.input_variables!r}")
        return _VARIABLE_ROWS[self.input_variables]

    def _stats_row(self) -> int | None:
        # position of the beam row inside the selected rows, if present
        rows = self._rows()
        return rows.index(0) if 0 in rows else None

    def _model_config(self) -> ModelConfig:
        return ModelConfig(
            c_vars=len(self._rows()), u_len=self.u_len, h_len=self.h_len,
            patch_len=self.patch_len, stride=self.stride, d_model=self.d_model,
            n_heads=self.n_heads, backbone_dim=self.backbone_dim,
            backbone_layers=self.backbone_layers, vocab_size=self.vocab_size,
            n_prototypes=self.n_prototypes, seed=self.seed,
            use_prompt=self.use_prompt)

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate, epochs=self.epochs,
            batch_size=self.batch_size, seed=self.seed,
            early_stop_patience=self.early_stop_patience,
            val_fraction=self.val_fraction)

    # -- estimator API ----------------------------------------------------

    def fit(self, X, y):
        X = check_window_batch(X, c_vars=2, u_len=self.u_len)
        y = check_target_batch(y, X.shape[0], self.h_len)
        cfg = self._model_config()
        rows = list(self._rows())
        stats_row = self._stats_row()
        store = build_model_store(cfg)
        q_count = check_q_count(self.q_count)

        def window_loss(active_store, sx, sy, prototypes):
            pred, trace = forward(sx, q_count, active_store, cfg, prototypes=prototypes)
            target = normalize_target(sy, trace.revin_stats, stats_row)
            return forecast_loss(pred, target.astype(np.float32))

        def loss_fn(active_store, unit):
            # one prototype mixing per unit; its gradient flows once per
            # backward instead of once per window
            prototypes = select_prototypes(active_store)
            losses = [window_loss(active_store, sx, sy, prototypes) for sx, sy in unit]
            total = losses[0]
            for extra in losses[1:]:
                total = total + extra
            return total * (1.0 / len(losses))

        samples = [(X[i][rows, :], y[i]) for i in range(X.shape[0])]
        units = _group_into_units(samples, self.batch_size, self.seed)
        train_cfg = replace(self._train_config(), batch_size=1)
        self.train_log_ = train(store, units, loss_fn, train_cfg)
        self.store_ = store
        self.model_config_ = cfg
        return self

    def forecast_window(self, x, q_count: int | None = None):
        """Standardized-space forecast plus the forward trace for one window."""
        check_is_fitted(self, "store_")
        x = check_window(x, c_vars=2, u_len=self.u_len)
        q = check_q_count(q_count if q_count is not None else self.q_count)
        sub = x[list(self._rows()), :]
        pred, trace = forward(sub, q, self.store_, self.model_config_)
        return pred, trace

    def predict_indices(self, x, q_count: int | None = None) -> np.ndarray:
        q = check_q_count(q_count if q_count is not None else self.q_count)
        pred, trace = self.forecast_window(x, q)
        return postprocess(pred.data, trace.revin_stats, self._stats_row(), q)

    def predict(self, X) -> np.ndarray:
        X = check_window_batch(X, c_vars=2, u_len=self.u_len)
        return np.stack([self.predict_indices(x) for x in X])

    # -- persistence -------------------------------------------------------

    def save(self, path) -> Path:
        """Checkpoint plus a sibling .cfg with the estimator parameters."""
        check_is_fitted(self, "store_")
        path = Path(path)
        self.store_.save(path)
        lines = [f"{k} = {v}" for k, v in sorted(self.get_params().items())]
        path.with_suffix(".cfg").write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, path) -> "BeamForecaster":
        path = Path(path)
        if not path.exists():
            raise DataError(f"checkpoint not found: {path}")
        cfg_path = path.with_suffix(".cfg")
        if not cfg_path.exists():
            raise DataError(f"checkpoint config not found: {cfg_path}")
        kv = load_config(cfg_path)
        est = cls(
            u_len=get_int(kv, "u_len"), h_len=get_int(kv, "h_len"),
            patch_len=get_int(kv, "patch_len"), stride=get_int(kv, "stride"),
            d_model=get_int(kv, "d_model"), n_heads=get_int(kv, "n_heads"),
            backbone_dim=get_int(kv, "backbone_dim"),
            backbone_layers=get_int(kv, "backbone_layers"),
            vocab_size=get_int(kv, "vocab_size"),
            n_prototypes=get_int(kv, "n_prototypes"),
            input_variables=get_str(kv, "input_variables"),
            use_prompt=get_bool(kv, "use_prompt", True),
            q_count=get_int(kv, "q_count"),
            learning_rate=float(kv.get("learning_rate", 1e-3)),
            epochs=get_int(kv, "epochs", 15), batch_size=get_int(kv, "batch_size", 16),
            val_fraction=float(kv.get("val_fraction", 0.2)),
            early_stop_patience=get_int(kv, "early_stop_patience", 5),
            seed=get_int(kv, "seed", 0))
        cfg = est._model_config()
        reference = build_model_store(cfg)
        reference.load_into(path)
        est.store_ = reference
        est.model_config_ = cfg
        return est


class LstmBeamPredictor(BaseEstimator):
    """LSTM seq2seq on the same windows, trained with the same loop/loss."""

    name = "lstm"

    def __init__(self, hidden_size: int = 64, layers: int = 2, u_len: int = 40,
                 h_len: int = 10, q_count: int = 64, learning_rate: float = 1e-3,
                 epochs: int = 15, batch_size: int = 16, val_fraction: float = 0.2,
                 early_stop_patience: int = 5, seed: int = 0):
        self.hidden_size = hidden_size
        self.layers = layers
        self.u_len = u_len
        self.h_len = h_len
        self.q_count = q_count
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.val_fraction = val_fraction
        self.early_stop_patience = early_stop_patience
        self.seed = seed

    def _lstm_config(self) -> baselines.LstmConfig:
        return baselines.LstmConfig(input_size=2, hidden_size=self.hidden_size,
                                    layers=self.layers, h_len=self.h_len, seed=self.seed)

    def fit(self, X, y):
        X = check_window_batch(X, c_vars=2, u_len=self.u_len)
        y = check_target_batch(y, X.shape[0], self.h_len)
        cfg = self._lstm_config()
        store = baselines.build_lstm_store(cfg)
        samples = [(X[i], y[i].astype(np.float32)) for i in range(X.shape[0])]
        self.train_log_ = train(
            store, samples,
            lambda s, smp: baselines.lstm_loss(s, cfg, smp[0], smp[1]),
            TrainConfig(learning_rate=self.learning_rate, epochs=self.epochs,
                        batch_size=self.batch_size, seed=self.seed,
                        early_stop_patience=self.early_stop_patience,
                        val_fraction=self.val_fraction))
        self.store_ = store
        self.lstm_config_ = cfg
        return self

    def predict_indices(self, x, q_count: int | None = None) -> np.ndarray:
        check_is_fitted(self, "store_")
        x = check_window(x, c_vars=2, u_len=self.u_len)
        q = check_q_count(q_count if q_count is not None else self.q_count)
        out = baselines.lstm_forecast(x, self.store_, self.lstm_config_)
        return postprocess(out.data, np.zeros((1, 2)), None, q)

    def predict(self, X) -> np.ndarray:
        X = check_window_batch(X, c_vars=2, u_len=self.u_len)
        return np.stack([self.predict_indices(x) for x in X])

    def save(self, path) -> Path:
        check_is_fitted(self, "store_")
        path = Path(path)
        self.store_.save(path)
        lines = [f"{k} = {v}" for k, v in sorted(self.get_params().items())]
        path.with_suffix(".cfg").write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, path) -> "LstmBeamPredictor":
        path = Path(path)
        if not path.exists():
            raise DataError(f"checkpoint not found: {path}")
        cfg_path = path.with_suffix(".cfg")
        if not cfg_path.exists():
            raise DataError(f"checkpoint config not found: {cfg_path}")
        kv = load_config(cfg_path)
        est = cls(hidden_size=get_int(kv, "hidden_size"), layers=get_int(kv, "layers"),
                  u_len=get_int(kv, "u_len"), h_len=get_int(kv, "h_len"),
                  q_count=get_int(kv, "q_count"),
                  learning_rate=float(kv.get("learning_rate", 1e-3)),
                  epochs=get_int(kv, "epochs", 15),
                  batch_size=get_int(kv, "batch_size", 16),
                  val_fraction=float(kv.get("val_fraction", 0.2)),
                  early_stop_patience=get_int(kv, "early_stop_patience", 5),
                  seed=get_int(kv, "seed", 0))
        store = baselines.build_lstm_store(est._lstm_config())
        store.load_into(path)
        est.store_ = store
        est.lstm_config_ = est._lstm_config()
        return est
