"""Prefix-prompt text, window statistics, and the fixed hashing tokenizer.

The prompt prepended to the reprogrammed patch tokens has three parts:
a domain sentence, a task instruction, and window statistics (trend
direction, strongest autocorrelation lags, min/max/median of the beam
row). Text is tokenized by splitting words and digit runs and hashing
each token into the embedding-table range with FNV-1a.
"""

from __future__ import annotations

import re

import numpy as np

_TOKEN_RE = re.compile(r"[a-z]+|[0-9]+|[^\sa-z0-9]")
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a64(text: str) -> int:
    h = _FNV_OFFSET
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * _FNV_PRIME) & _MASK64
    return h


def tokenize(text: str, vocab_size: int) -> list[int]:
    """Deterministic ids in [0, vocab_size); whitespace never matters."""
    if vocab_size < 1:
        raise ValueError(f"vocab_size must be >= 1, got {vocab_size}")
    return [fnv1a64(tok) % vocab_size for tok in _TOKEN_RE.findall(text.lower())]


def trend_stat(series) -> str:
    """'upward' iff the sum of successive differences is positive.

    The sum telescopes to last - first, so a zero net move counts as
    'downward'.
    """
    x = np.asarray(series, dtype=np.float64)
    if x.ndim != 1 or x.size < 2:
        raise ValueError(f"series must be 1-D with length >= 2, got shape {x.shape}")
    return "upward" if x[-1] - x[0] > 0 else "downward"


def autocorrelation_fft(series) -> np.ndarray:
    """Autocovariance sums c(lag) = sum_t r_t r_{t+lag} of the mean-removed
    series, lags 0..U-1, computed with zero-padded FFTs."""
    x = np.asarray(series, dtype=np.float64)
    if x.ndim != 1 or x.size < 1:
        raise ValueError(f"series must be a nonempty 1-D array, got shape {x.shape}")
    r = x - x.mean()
    n = 1
    while n < 2 * x.size:
        n *= 2
    spec = np.fft.rfft(r, n)
    acov = np.fft.irfft(spec * np.conj(spec), n)[: x.size]
    return acov


def _variance_floor(x: np.ndarray) -> float:
    return x.size * (1e-12 * max(1.0, float(np.abs(x).max()))) ** 2


def top_lags(series, k: int = 5) -> list[int]:
    """The k lags in 1..U-1 with the largest autocorrelation, strongest
    first; ties resolve toward the smaller lag.

    Windows with effectively zero variance have no correlation structure
    and get the smallest-lag ladder [1..k].
    """
    x = np.asarray(series, dtype=np.float64)
    if x.ndim != 1 or x.size < 2:
        raise ValueError(f"series must be 1-D with length >= 2, got shape {x.shape}")
    if not 1 <= k <= x.size - 1:
        raise ValueError(f"k must lie in [1, {x.size - 1}], got {k}")
    acov = autocorrelation_fft(x)
    if acov[0] <= _variance_floor(x):
        return list(range(1, k + 1))
    order = sorted(range(1, x.size), key=lambda lag: (-acov[lag], lag))
    return order[:k]


def build_prompt(x_raw: np.ndarray, q_count: int, cfg) -> str:
    """Assemble the deterministic three-part prefix for one input window.

    Statistics are computed on the beam-index row (row 0) of the window as
    given, before any per-window standardization.
    """
    x = np.asarray(x_raw, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"window must be 2-D, got shape {x.shape}")
    beam = x[0]
    lags = top_lags(beam, k=min(5, beam.size - 1))
    lag_text = " ".join(str(lag) for lag in lags)
    stats = (f"trend {trend_stat(beam)} ; top lags {lag_text} ; "
             f"min {beam.min():.4f} max {beam.max():.4f} median {np.median(beam):.4f}")
    return (f"a millimeter wave base station selects one of {q_count} codebook beams "
            f"to serve a moving user . "
            f"task : predict the next {cfg.h_len} optimal beam indices "
            f"given the previous {cfg.u_len} steps . "
            f"statistics : {stats} .")


def prompt_token_ids(x_raw: np.ndarray, q_count: int, cfg) -> list[int]:
    return tokenize(build_prompt(x_raw, q_count, cfg), cfg.vocab_size)
