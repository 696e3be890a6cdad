"""The reprogrammed-forecaster pipeline around a frozen seeded backbone.

One window flows: per-variable standardization -> overlapping patches ->
shared linear embedding -> per-patch cross-variable attention with a
learnable query -> multi-head cross-attention against text prototypes
mixed from a frozen embedding table -> [prompt prefix ; patch tokens]
through the frozen transformer -> last patch positions flattened into a
linear head. Only the adapters around the backbone train.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import tensor as tc
from .errors import ConfigError, ShapeError
from .params import ParamStore, seeded_init
from .prompts import build_prompt, tokenize
from .tensor import Tensor

REVIN_EPS = 1e-5


@dataclass(frozen=True)
class ModelConfig:
    c_vars: int = 2
    u_len: int = 40
    h_len: int = 10
    patch_len: int = 16
    stride: int = 8
    d_model: int = 32
    n_heads: int = 4
    backbone_dim: int = 64
    backbone_layers: int = 2
    vocab_size: int = 4096
    n_prototypes: int = 100
    seed: int = 0
    use_prompt: bool = True

    def __post_init__(self):
        if self.c_vars < 1:
            raise ConfigError("c_vars must be >= 1")
        if self.patch_len > self.u_len:
            raise ConfigError(f"patch_len {self.patch_len} exceeds u_len {self.u_len}")
        if self.patch_len < 1 or self.stride < 1:
            raise ConfigError("patch_len and stride must be >= 1")
        if self.head_dim < 1:
            raise ConfigError(f"d_model {self.d_model} gives empty heads for K={self.n_heads}")
        if not self.n_prototypes < self.vocab_size:
            raise ConfigError("n_prototypes must be far smaller than vocab_size")
        if self.backbone_layers < 0:
            raise ConfigError("backbone_layers must be >= 0")

    @property
    def num_patches(self) -> int:
        return (self.u_len - self.patch_len) // self.stride + 2

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    def to_kv(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_kv(cls, kv: dict) -> "ModelConfig":
        kwargs = {}
        for f in fields(cls):
            if f.name not in kv:
                continue
            raw = kv[f.name]
            if f.type == "bool":
                kwargs[f.name] = raw if isinstance(raw, bool) else str(raw).lower() == "true"
            else:
                kwargs[f.name] = int(raw)
        return cls(**kwargs)


@dataclass
class ForwardTrace:
    """Intermediate activations of one forward pass, for tests and debugging."""

    revin_stats: np.ndarray      # (C, 2): per-variable mean, std
    patches: np.ndarray          # (P, C, L_p)
    embedded: np.ndarray         # (P, C, d_m)
    fused: np.ndarray            # (P, d_m)
    reprogrammed: np.ndarray     # (P, D)
    backbone_out: np.ndarray     # (T_prompt + P, D)
    forecast_norm: np.ndarray    # (H,)
    prompt_length: int = 0
    prompt_text: str = ""


# ---------------------------------------------------------------------------
# parameter construction


def build_model_store(cfg: ModelConfig) -> ParamStore:
    """Frozen backbone + embedding table plus the trainable adapters."""
    store = ParamStore()
    seed = cfg.seed
    d_m, d_head, big_d = cfg.d_model, cfg.head_dim, cfg.backbone_dim

    def frozen(name, shape, scheme="uniform-scaled"):
        store.add(name, seeded_init(name, shape, scheme, seed), trainable=False)

    def trainable(name, shape, scheme="uniform-scaled"):
        store.add(name, seeded_init(name, shape, scheme, seed), trainable=True)

    frozen("vocab.embed", (cfg.vocab_size, big_d))
    for i in range(cfg.backbone_layers):
        prefix = f"backbone.l{i}"
        frozen(f"{prefix}.ln1.g", (big_d,), "ones")
        frozen(f"{prefix}.ln1.b", (big_d,), "zeros")
        for proj in ("wq", "wk", "wv", "wo"):
            frozen(f"{prefix}.attn.{proj}", (big_d, big_d))
        frozen(f"{prefix}.ln2.g", (big_d,), "ones")
        frozen(f"{prefix}.ln2.b", (big_d,), "zeros")
        frozen(f"{prefix}.ffn.w1", (big_d, 4 * big_d))
        frozen(f"{prefix}.ffn.b1", (4 * big_d,), "zeros")
        frozen(f"{prefix}.ffn.w2", (4 * big_d, big_d))
        frozen(f"{prefix}.ffn.b2", (big_d,), "zeros")
    frozen("backbone.ln_f.g", (big_d,), "ones")
    frozen("backbone.ln_f.b", (big_d,), "zeros")

    trainable("patch_embed.w", (cfg.patch_len, d_m))
    trainable("patch_embed.b", (d_m,), "zeros")
    trainable("cvar.query", (cfg.num_patches, 1, d_m))
    for proj in ("wq", "wk", "wv", "wo"):
        trainable(f"cvar.{proj}", (d_m, d_m))
    trainable("proto.mixer", (cfg.n_prototypes, cfg.vocab_size))
    for k in range(cfg.n_heads):
        trainable(f"reprogram.h{k}.wq", (d_m, d_head))
        trainable(f"reprogram.h{k}.wk", (big_d, d_head))
        trainable(f"reprogram.h{k}.wv", (big_d, d_head))
    if cfg.n_heads * d_head != d_m:
        # floor(d_m/K) heads do not tile d_m; mix the concatenation back up
        trainable("reprogram.head_merge", (cfg.n_heads * d_head, d_m))
    trainable("reprogram.out", (d_m, big_d))
    trainable("out_proj.w", (cfg.num_patches * big_d, cfg.h_len))
    trainable("out_proj.b", (cfg.h_len,), "zeros")
    return store


# ---------------------------------------------------------------------------
# pipeline stages


def revin_normalize(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-variable standardization; stats are kept for exact inversion.

    std is sqrt(population variance + eps), so constant rows map to ~0
    instead of dividing by zero.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError("revin_normalize", f"expected (C, U) input, got {x.shape}")
    mean = x.mean(axis=1)
    std = np.sqrt(x.var(axis=1) + REVIN_EPS)
    stats = np.stack([mean, std], axis=1)
    return (x - mean[:, None]) / std[:, None], stats


def revin_denormalize(xn: np.ndarray, stats: np.ndarray) -> np.ndarray:
    xn = np.asarray(xn, dtype=np.float64)
    return xn * stats[:, 1][:, None] + stats[:, 0][:, None]


def patchify(x: np.ndarray, patch_len: int, stride: int) -> np.ndarray:
    """Right-pad by repeating the last column `stride` times, then take
    length-`patch_len` windows at the given stride: exactly
    (U - patch_len)//stride + 2 patches of shape (C, patch_len) each."""
    x = np.asarray(x)
    if x.ndim != 2:
        raise ShapeError("patchify", f"expected (C, U) input, got {x.shape}")
    c, u = x.shape
    if patch_len > u:
        raise ConfigError(f"patch_len {patch_len} exceeds window length {u}")
    padded = np.concatenate([x, np.repeat(x[:, -1:], stride, axis=1)], axis=1)
    starts = range(0, padded.shape[1] - patch_len + 1, stride)
    return np.stack([padded[:, s:s + patch_len] for s in starts])


def embed_patches(patches: np.ndarray, store: ParamStore) -> Tensor:
    """Shared linear map of every (patch, variable) segment, flattened to
    (P*C, d_m)."""
    p, c, patch_len = patches.shape
    w = store["patch_embed.w"]
    if w.shape[0] != patch_len:
        raise ShapeError("embed_patches", f"patch length {patch_len} != weight rows {w.shape[0]}")
    flat = Tensor(patches.reshape(p * c, patch_len))
    return tc.matmul(flat, w) + store["patch_embed.b"]


def cross_variable_attention(embedded: Tensor, store: ParamStore, cfg: ModelConfig) -> Tensor:
    """Fuse the C variable embeddings of each patch into one row via
    single-head attention with that patch's learnable query."""
    p, c, d_m = cfg.num_patches, cfg.c_vars, cfg.d_model
    if embedded.shape != (p * c, d_m):
        raise ShapeError("cross_variable_attention",
                         f"expected ({p * c}, {d_m}) embeddings, got {embedded.shape}")
    query = store["cvar.query"]
    wq, wk, wv, wo = (store[f"cvar.{n}"] for n in ("wq", "wk", "wv", "wo"))
    rows = []
    for i in range(p):
        per_patch = embedded[i * c:(i + 1) * c]
        q = tc.matmul(query[i], wq)
        k = tc.matmul(per_patch, wk)
        v = tc.matmul(per_patch, wv)
        rows.append(tc.matmul(tc.attention(q, k, v, scale=1.0 / np.sqrt(d_m)), wo))
    return tc.concat(rows, axis=0)


def select_prototypes(store: ParamStore) -> Tensor:
    """Trainable mixture over the frozen embedding table; one-hot rows
    recover hard row selection."""
    return tc.matmul(store["proto.mixer"], store["vocab.embed"])


def reprogram(fused: Tensor, prototypes: Tensor, store: ParamStore, cfg: ModelConfig) -> Tensor:
    """Multi-head cross-attention from patch features to the prototypes,
    projected up to the backbone width."""
    if fused.shape != (cfg.num_patches, cfg.d_model):
        raise ShapeError("reprogram",
                         f"expected ({cfg.num_patches}, {cfg.d_model}) features, got {fused.shape}")
    if prototypes.shape != (cfg.n_prototypes, cfg.backbone_dim):
        raise ShapeError("reprogram", f"unexpected prototype shape {prototypes.shape}")
    scale = 1.0 / np.sqrt(cfg.head_dim)
    heads = []
    for k in range(cfg.n_heads):
        q = tc.matmul(fused, store[f"reprogram.h{k}.wq"])
        key = tc.matmul(prototypes, store[f"reprogram.h{k}.wk"])
        val = tc.matmul(prototypes, store[f"reprogram.h{k}.wv"])
        heads.append(tc.attention(q, key, val, scale=scale))
    merged = heads[0] if len(heads) == 1 else tc.concat(heads, axis=1)
    if "reprogram.head_merge" in store:
        merged = tc.matmul(merged, store["reprogram.head_merge"])
    return tc.matmul(merged, store["reprogram.out"])


def run_backbone(seq: Tensor, store: ParamStore, cfg: ModelConfig) -> Tensor:
    """Pre-norm self-attention + GELU feed-forward stack, no causal mask."""
    x = seq
    for i in range(cfg.backbone_layers):
        prefix = f"backbone.l{i}"
        pre = tc.layer_norm(x) * store[f"{prefix}.ln1.g"] + store[f"{prefix}.ln1.b"]
        attended = tc.attention(tc.matmul(pre, store[f"{prefix}.attn.wq"]),
                                tc.matmul(pre, store[f"{prefix}.attn.wk"]),
                                tc.matmul(pre, store[f"{prefix}.attn.wv"]))
        x = x + tc.matmul(attended, store[f"{prefix}.attn.wo"])
        pre = tc.layer_norm(x) * store[f"{prefix}.ln2.g"] + store[f"{prefix}.ln2.b"]
        hidden = tc.gelu(tc.matmul(pre, store[f"{prefix}.ffn.w1"]) + store[f"{prefix}.ffn.b1"])
        x = x + tc.matmul(hidden, store[f"{prefix}.ffn.w2"]) + store[f"{prefix}.ffn.b2"]
    return tc.layer_norm(x) * store["backbone.ln_f.g"] + store["backbone.ln_f.b"]


def forward(x: np.ndarray, q_count: int, store: ParamStore, cfg: ModelConfig,
            prototypes: Tensor | None = None) -> tuple[Tensor, ForwardTrace]:
    """Full pipeline on one (C, U) window; returns the standardized-space
    forecast tensor and the recorded intermediates.

    A precomputed prototype tensor may be shared across the windows of one
    minibatch (the mixer only changes between optimizer steps).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (cfg.c_vars, cfg.u_len):
        raise ShapeError("forward", f"expected ({cfg.c_vars}, {cfg.u_len}) window, got {x.shape}")
    tc.assert_finite("forward input", x)

    normalized, stats = revin_normalize(x)
    patches = patchify(normalized, cfg.patch_len, cfg.stride).astype(np.float32)
    embedded = embed_patches(patches, store)
    fused = cross_variable_attention(embedded, store, cfg)
    if prototypes is None:
        prototypes = select_prototypes(store)
    tokens = reprogram(fused, prototypes, store, cfg)

    prompt_text = ""
    prompt_ids: list[int] = []
    if cfg.use_prompt:
        prompt_text = build_prompt(x, q_count, cfg)
        prompt_ids = tokenize(prompt_text, cfg.vocab_size)
        prompt_emb = tc.take_rows(store["vocab.embed"], prompt_ids)
        seq = tc.concat([prompt_emb, tokens], axis=0)
    else:
        seq = tokens

    backbone_out = run_backbone(seq, store, cfg)
    tail = backbone_out[len(prompt_ids):]
    flat = tc.reshape(tail, (1, cfg.num_patches * cfg.backbone_dim))
    forecast = tc.reshape(tc.matmul(flat, store["out_proj.w"]) + store["out_proj.b"],
                          (cfg.h_len,))
    tc.assert_finite("forecast", forecast.data)

    trace = ForwardTrace(
        revin_stats=stats,
        patches=patches.copy(),
        embedded=embedded.data.reshape(cfg.num_patches, cfg.c_vars, cfg.d_model).copy(),
        fused=fused.data.copy(),
        reprogrammed=tokens.data.copy(),
        backbone_out=backbone_out.data.copy(),
        forecast_norm=forecast.data.copy(),
        prompt_length=len(prompt_ids),
        prompt_text=prompt_text,
    )
    return forecast, trace


def normalize_target(y: np.ndarray, stats: np.ndarray, stats_row: int | None) -> np.ndarray:
    """Map Eq-space targets into the same standardized space the model
    predicts in, using the input window's beam-row statistics."""
    y = np.asarray(y, dtype=np.float64)
    if stats_row is None:
        return y
    mean, std = stats[stats_row]
    return (y - mean) / std


def forecast_loss(pred: Tensor, target: np.ndarray) -> Tensor:
    """Mean squared error over the H forecast steps."""
    target = np.asarray(target, dtype=np.float32)
    if pred.shape != target.shape:
        raise ShapeError("forecast_loss", f"shapes differ: {pred.shape} vs {target.shape}")
    return tc.mse(pred, Tensor(target))


def postprocess(forecast_norm: np.ndarray, stats: np.ndarray, stats_row: int | None,
                q_count: int) -> np.ndarray:
    """Undo the standardization and index normalization: scale back, round
    half-up, clamp to the codebook range."""
    y = np.asarray(forecast_norm, dtype=np.float64)
    tc.assert_finite("postprocess input", y)
    if stats_row is not None:
        mean, std = stats[stats_row]
        y = y * std + mean
    idx = np.floor(y * q_count + 0.5)
    return np.clip(idx, 0, q_count - 1).astype(np.int64)
