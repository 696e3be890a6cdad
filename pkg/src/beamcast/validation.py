"""Input validation helpers for the estimator API."""

from __future__ import annotations

import numpy as np
from sklearn.exceptions import NotFittedError


def check_window(x, c_vars: int | None = None, u_len: int | None = None) -> np.ndarray:
    """One (C, U) observation window as a float64 array."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"window must be 2-D (C, U), got shape {x.shape}")
    if c_vars is not None and x.shape[0] != c_vars:
        raise ValueError(f"window has {x.shape[0]} variables, expected {c_vars}")
    if u_len is not None and x.shape[1] != u_len:
        raise ValueError(f"window has {x.shape[1]} steps, expected {u_len}")
    if not np.all(np.isfinite(x)):
        raise ValueError("window contains non-finite values")
    return x


def check_window_batch(X, c_vars: int | None = None, u_len: int | None = None) -> np.ndarray:
    """A batch of windows as (n, C, U); a single (C, U) window is promoted."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        X = X[None, ...]
    if X.ndim != 3:
        raise ValueError(f"X must be (n_samples, C, U), got shape {X.shape}")
    if c_vars is not None and X.shape[1] != c_vars:
        raise ValueError(f"X has {X.shape[1]} variables, expected {c_vars}")
    if u_len is not None and X.shape[2] != u_len:
        raise ValueError(f"X has {X.shape[2]} steps, expected {u_len}")
    if not np.all(np.isfinite(X)):
        raise ValueError("X contains non-finite values")
    return X


def check_target_batch(y, n_samples: int, h_len: int | None = None) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 1:
        y = y[None, :]
    if y.ndim != 2 or y.shape[0] != n_samples:
        raise ValueError(f"y must be (n_samples, H) with n_samples={n_samples}, "
                         f"got shape {y.shape}")
    if h_len is not None and y.shape[1] != h_len:
        raise ValueError(f"y has horizon {y.shape[1]}, expected {h_len}")
    if not np.all(np.isfinite(y)):
        raise ValueError("y contains non-finite values")
    return y


def check_q_count(q_count) -> int:
    q = int(q_count)
    if q < 1:
        raise ValueError(f"q_count must be >= 1, got {q_count}")
    return q


def check_is_fitted(estimator, attribute: str):
    if not hasattr(estimator, attribute):
        raise NotFittedError(
            f"{type(estimator).__name__} is not fitted yet; call fit() first")
