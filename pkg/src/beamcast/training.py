"""Adam optimizer, the seeded training loop, and training logs.

The loop is model-agnostic: it consumes a loss closure over (store,
sample), shuffles per epoch with seeded streams, averages minibatch
gradients, early-stops on validation loss, and restores the
best-validation parameters (initialization included as a candidate).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, NonFiniteError
from .params import ParamStore, seeded_rng
from .tensor import backward


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_opt: float = 1e-8
    epochs: int = 10
    batch_size: int = 16
    seed: int = 0
    early_stop_patience: int = 5
    val_fraction: float = 0.2

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigError(f"val_fraction must lie in (0, 1), got {self.val_fraction}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.early_stop_patience < 1:
            raise ConfigError("early_stop_patience must be >= 1")


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float
    seconds: float


@dataclass
class TrainLog:
    epochs: list[EpochStats] = field(default_factory=list)
    checkpoint_path: str = ""
    seed: int = 0
    best_val_loss: float = float("inf")
    initial_val_loss: float = float("inf")

    def to_csv(self, path) -> Path:
        path = Path(path)
        lines = ["epoch,train_loss,val_loss,seconds"]
        lines += [f"{e.epoch},{e.train_loss!r},{e.val_loss!r},{e.seconds!r}"
                  for e in self.epochs]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path


class AdamState:
    """First/second moment buffers for the trainable entries of a store."""

    def __init__(self, store: ParamStore):
        self.step = 0
        self.m = {n: np.zeros(t.data.shape, dtype=np.float64)
                  for n, t in store.trainable().items()}
        self.v = {n: np.zeros(t.data.shape, dtype=np.float64)
                  for n, t in store.trainable().items()}


def adam_step(store: ParamStore, grads: dict[str, np.ndarray],
              state: AdamState, cfg: TrainConfig):
    """Bias-corrected Adam update of the trainable entries; frozen entries
    are untouched by construction."""
    state.step += 1
    t = state.step
    for name, grad in grads.items():
        tensor = store[name]
        if not tensor.requires_grad:
            raise ConfigError(f"adam_step received a gradient for frozen tensor {name!r}")
        if grad.shape != tensor.data.shape:
            raise ConfigError(f"gradient shape {grad.shape} != parameter shape "
                              f"{tensor.data.shape} for {name!r}")
        m = state.m[name]
        v = state.v[name]
        m *= cfg.beta1
        m += (1 - cfg.beta1) * grad
        v *= cfg.beta2
        v += (1 - cfg.beta2) * grad * grad
        m_hat = m / (1 - cfg.beta1**t)
        v_hat = v / (1 - cfg.beta2**t)
        update = cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps_opt)
        tensor.data[...] = (tensor.data.astype(np.float64) - update).astype(np.float32)


def _mean_loss(loss_fn, store, samples) -> float:
    return float(np.mean([loss_fn(store, s).item() for s in samples]))


def train(store: ParamStore, samples, loss_fn, cfg: TrainConfig,
          checkpoint_path=None) -> TrainLog:
    """Run the loop and leave `store` holding the best-validation weights.

    loss_fn(store, sample) must return a scalar loss tensor built through
    the store's trainable entries.
    """
    samples = list(samples)
    if not samples:
        raise DataError("training dataset is empty")
    n_val = max(1, int(round(len(samples) * cfg.val_fraction)))
    if n_val >= len(samples):
        raise DataError(f"val_fraction {cfg.val_fraction} leaves no training samples "
                        f"(n={len(samples)})")
    split_perm = seeded_rng(cfg.seed, "train-val-split").permutation(len(samples))
    train_idx = split_perm[:-n_val]
    val_idx = split_perm[-n_val:]
    train_samples = [samples[i] for i in train_idx]
    val_samples = [samples[i] for i in val_idx]

    log = TrainLog(seed=cfg.seed)
    log.initial_val_loss = _mean_loss(loss_fn, store, val_samples)
    log.best_val_loss = log.initial_val_loss
    best_params = {n: t.data.copy() for n, t in store.trainable().items()}

    state = AdamState(store)
    stale_epochs = 0
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        order = seeded_rng(cfg.seed, f"epoch-{epoch}").permutation(len(train_samples))
        epoch_losses = []
        for b0 in range(0, len(order), cfg.batch_size):
            batch = order[b0:b0 + cfg.batch_size]
            store.zero_grads()
            batch_losses = []
            for i in batch:
                loss = loss_fn(store, train_samples[i])
                if not np.isfinite(loss.item()):
                    raise NonFiniteError(
                        f"non-finite loss at epoch {epoch}, batch starting {b0}, "
                        f"train sample {i}")
                backward(loss)
                batch_losses.append(loss.item())
            grads = {n: t.grad / len(batch)
                     for n, t in store.trainable().items() if t.grad is not None}
            adam_step(store, grads, state, cfg)
            epoch_losses.extend(batch_losses)
        val_loss = _mean_loss(loss_fn, store, val_samples)
        log.epochs.append(EpochStats(epoch=epoch,
                                     train_loss=float(np.mean(epoch_losses)),
                                     val_loss=val_loss,
                                     seconds=time.perf_counter() - t0))
        if val_loss < log.best_val_loss:
            log.best_val_loss = val_loss
            best_params = {n: t.data.copy() for n, t in store.trainable().items()}
            stale_epochs = 0
        else:
            stale_epochs += 1
            if stale_epochs >= cfg.early_stop_patience:
                break

    for name, data in best_params.items():
        store[name].data[...] = data
    if checkpoint_path is not None:
        log.checkpoint_path = str(store.save(checkpoint_path))
    return log
