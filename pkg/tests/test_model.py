import numpy as np
import pytest

from beamcast import tensor as tc
from beamcast.errors import ConfigError, ShapeError
from beamcast.model import (
    ForwardTrace,
    ModelConfig,
    build_model_store,
    cross_variable_attention,
    embed_patches,
    forecast_loss,
    forward,
    normalize_target,
    patchify,
    postprocess,
    reprogram,
    revin_denormalize,
    revin_normalize,
    select_prototypes,
)
from beamcast.params import seeded_rng
from beamcast.tensor import Tensor, backward, grad_check


def tiny_cfg(**kwargs):
    """Small but structurally complete config; d_model=10 with 3 heads also
    exercises the non-tiling head-merge path."""
    base = dict(c_vars=2, u_len=16, h_len=4, patch_len=8, stride=4, d_model=10,
                n_heads=3, backbone_dim=16, backbone_layers=1, vocab_size=128,
                n_prototypes=8, seed=5)
    base.update(kwargs)
    return ModelConfig(**base)


def ramp_window(cfg, q_count=64):
    x = np.zeros((cfg.c_vars, cfg.u_len))
    x[0] = np.linspace(0.2, 0.5, cfg.u_len)
    if cfg.c_vars > 1:
        x[1] = np.linspace(0.3, 0.8, cfg.u_len)
    return x


class TestRevin:
    def test_closed_form_row(self):
        xn, stats = revin_normalize(np.array([[1.0, 2.0, 3.0]]))
        assert np.allclose(xn, [[-1.2247, 0.0, 1.2247]], atol=1e-3)
        assert stats[0, 0] == pytest.approx(2.0)
        assert stats[0, 1] == pytest.approx(np.sqrt(2.0 / 3.0), abs=1e-5)

    def test_constant_row_guarded(self):
        xn, _ = revin_normalize(np.array([[5.0, 5.0, 5.0]]))
        assert np.allclose(xn, 0.0, atol=1e-9)

    def test_roundtrip_seeded_windows(self):
        for seed in range(100):
            rng = seeded_rng(seed, "revin")
            x = rng.normal(size=(2, 40)) * rng.uniform(0.01, 10)
            if seed % 5 == 0:
                x[1, :] = rng.normal()  # constant rows included
            xn, stats = revin_normalize(x)
            assert np.max(np.abs(revin_denormalize(xn, stats) - x)) < 1e-5


class TestPatchify:
    def test_default_count(self):
        assert patchify(np.zeros((2, 40)), 16, 8).shape == (5, 2, 16)

    def test_equal_lengths(self):
        assert patchify(np.zeros((2, 16)), 16, 8).shape == (2, 2, 16)

    def test_constant_input_identical_patches(self):
        patches = patchify(np.full((1, 20), 3.3), 8, 4)
        assert np.all(patches == 3.3)

    def test_count_matches_enumeration_on_grid(self):
        for u in range(2, 65, 3):
            for patch_len in range(1, u + 1, 3):
                for stride in range(1, patch_len + 3, 2):
                    x = np.arange(u, dtype=float)[None, :]
                    got = patchify(x, patch_len, stride)
                    padded = np.concatenate([x, np.repeat(x[:, -1:], stride, axis=1)], axis=1)
                    starts = list(range(0, padded.shape[1] - patch_len + 1, stride))
                    assert got.shape[0] == (u - patch_len) // stride + 2 == len(starts)
                    for i, s in enumerate(starts):
                        assert np.array_equal(got[i, 0], padded[0, s:s + patch_len])

    def test_patch_longer_than_window_rejected(self):
        with pytest.raises(ConfigError):
            patchify(np.zeros((2, 8)), 16, 8)


class TestEmbedPatches:
    def test_zero_weights_zero_output(self):
        cfg = tiny_cfg()
        store = build_model_store(cfg)
        store["patch_embed.w"].data[...] = 0
        store["patch_embed.b"].data[...] = 0
        out = embed_patches(np.ones((3, 2, cfg.patch_len), dtype=np.float32), store)
        assert not out.data.any()

    def test_identity_square_case(self):
        cfg = tiny_cfg(patch_len=10, d_model=10, u_len=20, stride=5)
        store = build_model_store(cfg)
        store["patch_embed.w"].data[...] = np.eye(10)
        store["patch_embed.b"].data[...] = 0
        patches = seeded_rng(1, "emb").normal(size=(4, 2, 10)).astype(np.float32)
        out = embed_patches(patches, store)
        assert np.allclose(out.data, patches.reshape(8, 10), atol=1e-6)

    def test_shapes(self):
        cfg = ModelConfig()
        store = build_model_store(cfg)
        out = embed_patches(np.zeros((5, 2, 16), dtype=np.float32), store)
        assert out.shape == (10, 32)


class TestCrossVariableAttention:
    def test_single_variable_ignores_query(self):
        cfg = tiny_cfg(c_vars=1)
        store = build_model_store(cfg)
        emb = Tensor(seeded_rng(2, "cva").normal(size=(cfg.num_patches, cfg.d_model)))
        base = cross_variable_attention(emb, store, cfg).data.copy()
        store["cvar.query"].data[...] += 0.37
        again = cross_variable_attention(emb, store, cfg).data
        assert np.max(np.abs(base - again)) < 1e-6

    def test_identical_variables_get_half_weight_each(self):
        cfg = tiny_cfg()
        store = build_model_store(cfg)
        row = seeded_rng(3, "cva2").normal(size=(1, cfg.d_model))
        emb = Tensor(np.tile(row, (cfg.num_patches * 2, 1)))
        out = cross_variable_attention(emb, store, cfg)
        # both keys identical: attention output equals the value projection of the row
        expected = tc.matmul(tc.matmul(Tensor(np.tile(row, (cfg.num_patches, 1))),
                                       store["cvar.wv"]), store["cvar.wo"])
        assert np.allclose(out.data, expected.data, atol=1e-5)

    def test_output_shape(self):
        cfg = ModelConfig()
        store = build_model_store(cfg)
        emb = Tensor(np.zeros((10, 32), dtype=np.float32))
        assert cross_variable_attention(emb, store, cfg).shape == (5, 32)


class TestSelectPrototypes:
    def test_one_hot_rows_select(self):
        cfg = tiny_cfg()
        store = build_model_store(cfg)
        mixer = np.zeros((cfg.n_prototypes, cfg.vocab_size), dtype=np.float32)
        for i in range(cfg.n_prototypes):
            mixer[i, 3 * i] = 1.0
        store["proto.mixer"].data[...] = mixer
        protos = select_prototypes(store).data
        table = store["vocab.embed"].data
        for i in range(cfg.n_prototypes):
            assert np.allclose(protos[i], table[3 * i], atol=1e-6)

    def test_zero_mixer(self):
        cfg = tiny_cfg()
        store = build_model_store(cfg)
        store["proto.mixer"].data[...] = 0
        assert not select_prototypes(store).data.any()

    def test_shape(self):
        store = build_model_store(ModelConfig())
        assert select_prototypes(store).shape == (100, 64)


class TestReprogram:
    def test_single_prototype_passes_value_through(self):
        cfg = tiny_cfg(n_prototypes=1)
        store = build_model_store(cfg)
        fused = Tensor(seeded_rng(4, "rep").normal(size=(cfg.num_patches, cfg.d_model)))
        protos = select_prototypes(store)
        out = reprogram(fused, protos, store, cfg)
        # with one key the attention weight is 1 for every patch row, so the
        # pre-merge rows are all the value projection of that prototype
        heads = [tc.matmul(protos, store[f"reprogram.h{k}.wv"]).data for k in range(cfg.n_heads)]
        merged = np.tile(np.concatenate(heads, axis=1), (cfg.num_patches, 1))
        expected = merged @ store["reprogram.head_merge"].data @ store["reprogram.out"].data
        assert np.allclose(out.data, expected, atol=1e-4)

    def test_single_head_dim(self):
        cfg = tiny_cfg(n_heads=1)
        assert cfg.head_dim == cfg.d_model
        store = build_model_store(cfg)
        assert "reprogram.head_merge" not in store

    def test_default_shape(self):
        cfg = ModelConfig()
        store = build_model_store(cfg)
        fused = Tensor(np.zeros((5, 32), dtype=np.float32))
        out = reprogram(fused, select_prototypes(store), store, cfg)
        assert out.shape == (5, 64)
        assert "reprogram.head_merge" not in store  # 4 heads of 8 tile 32


class TestForward:
    def test_zero_trainables_output_equals_bias(self):
        cfg = tiny_cfg()
        store = build_model_store(cfg)
        for name, tensor in store.trainable().items():
            tensor.data[...] = 0.0
        store["out_proj.b"].data[...] = np.arange(cfg.h_len, dtype=np.float32)
        fc, _ = forward(ramp_window(cfg), 64, store, cfg)
        assert np.allclose(fc.data, np.arange(cfg.h_len), atol=1e-6)

    def test_trace_shapes_default_config(self):
        cfg = ModelConfig()
        store = build_model_store(cfg)
        fc, trace = forward(ramp_window(cfg), 64, store, cfg)
        assert fc.shape == (10,)
        assert trace.revin_stats.shape == (2, 2)
        assert trace.patches.shape == (5, 2, 16)
        assert trace.embedded.shape == (5, 2, 32)
        assert trace.fused.shape == (5, 32)
        assert trace.reprogrammed.shape == (5, 64)
        assert trace.backbone_out.shape == (trace.prompt_length + 5, 64)
        assert trace.forecast_norm.shape == (10,)
        assert np.all(np.isfinite(trace.forecast_norm))

    def test_no_prompt_variant(self):
        cfg = tiny_cfg(use_prompt=False)
        store = build_model_store(cfg)
        fc, trace = forward(ramp_window(cfg), 64, store, cfg)
        assert trace.prompt_length == 0
        assert trace.backbone_out.shape == (cfg.num_patches, cfg.backbone_dim)
        assert np.all(np.isfinite(fc.data))

    def test_no_patch_variant_two_patches(self):
        cfg = tiny_cfg(patch_len=16, stride=16)
        assert cfg.num_patches == 2
        store = build_model_store(cfg)
        fc, trace = forward(ramp_window(cfg), 64, store, cfg)
        assert trace.patches.shape[0] == 2

    def test_deterministic(self):
        cfg = tiny_cfg()
        store = build_model_store(cfg)
        a, _ = forward(ramp_window(cfg), 64, store, cfg)
        b, _ = forward(ramp_window(cfg), 64, store, cfg)
        assert a.data.tobytes() == b.data.tobytes()

    def test_rejects_wrong_shape(self):
        cfg = tiny_cfg()
        store = build_model_store(cfg)
        with pytest.raises(ShapeError):
            forward(np.zeros((3, cfg.u_len)), 64, store, cfg)


class TestPostprocess:
    def identity_stats(self):
        return np.array([[0.0, 1.0], [0.0, 1.0]])

    def test_midpoint(self):
        out = postprocess(np.array([0.5]), self.identity_stats(), 0, 64)
        assert out.tolist() == [32]

    def test_clamp_high(self):
        assert postprocess(np.array([1.7]), self.identity_stats(), 0, 64).tolist() == [63]

    def test_clamp_low(self):
        assert postprocess(np.array([-0.1]), self.identity_stats(), 0, 64).tolist() == [0]

    def test_round_half_up(self):
        stats = self.identity_stats()
        assert postprocess(np.array([10.5 / 64]), stats, 0, 64).tolist() == [11]

    def test_inverts_revin(self):
        x = np.zeros((2, 8))
        x[0] = np.linspace(0.25, 0.5, 8)
        xn, stats = revin_normalize(x)
        recovered = postprocess(xn[0], stats, 0, 64)
        assert recovered.tolist() == [round(v * 64) for v in x[0]]


class TestLoss:
    def test_zero_at_target(self):
        pred = Tensor(np.array([0.1, 0.2], dtype=np.float32))
        assert forecast_loss(pred, np.array([0.1, 0.2], dtype=np.float32)).item() == 0.0

    def test_values(self):
        assert forecast_loss(Tensor([0.5]), np.array([0.0])).item() == pytest.approx(0.25)
        assert forecast_loss(Tensor([0.1, 0.3]), np.zeros(2)).item() == pytest.approx(0.05, rel=1e-5)

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            forecast_loss(Tensor([0.1]), np.zeros(2))

    def test_normalize_target_uses_beam_stats(self):
        stats = np.array([[0.5, 0.1], [0.0, 1.0]])
        y = np.array([0.6, 0.4])
        assert np.allclose(normalize_target(y, stats, 0), [1.0, -1.0])
        assert np.allclose(normalize_target(y, stats, None), y)


def model_loss(store, cfg, x, y, q_count=64):
    fc, trace = forward(x, q_count, store, cfg)
    target = normalize_target(y, trace.revin_stats, 0)
    return forecast_loss(fc, target.astype(np.float32))


class TestGradients:
    def test_every_trainable_receives_gradient(self):
        cfg = tiny_cfg()
        store = build_model_store(cfg)
        x = ramp_window(cfg)
        x[0] += seeded_rng(9, "gradflow").normal(scale=0.02, size=cfg.u_len)
        y = np.linspace(0.5, 0.6, cfg.h_len)
        backward(model_loss(store, cfg, x, y))
        for name, tensor in store.trainable().items():
            assert tensor.grad is not None, name
            assert np.max(np.abs(tensor.grad)) > 0, name

    def test_frozen_gets_no_gradient(self):
        cfg = tiny_cfg()
        store = build_model_store(cfg)
        backward(model_loss(store, cfg, ramp_window(cfg), np.full(cfg.h_len, 0.4)))
        assert store["vocab.embed"].grad is None

    @pytest.mark.parametrize("param", ["out_proj.w", "cvar.query"])
    @pytest.mark.parametrize("seed", [11, 22, 33])
    def test_end_to_end_grad_check(self, param, seed):
        cfg = tiny_cfg(seed=seed)
        store = build_model_store(cfg)
        rng = seeded_rng(seed, "e2e-window")
        x = ramp_window(cfg)
        x[0] += rng.normal(scale=0.03, size=cfg.u_len)
        y = rng.uniform(0.3, 0.7, size=cfg.h_len)
        original = store._entries[param]

        def f(t):
            store._entries[param] = (t, True)
            try:
                return model_loss(store, cfg, x, y)
            finally:
                store._entries[param] = original

        assert grad_check(f, Tensor(original[0].data.copy()), eps=1e-3) < 1e-3


class TestFrozenInvariance:
    def test_checksums_stable_under_manual_updates(self):
        cfg = tiny_cfg()
        store = build_model_store(cfg)
        frozen_before = store.frozen_checksum()
        y = np.full(cfg.h_len, 0.45)
        for step in range(3):
            store.zero_grads()
            backward(model_loss(store, cfg, ramp_window(cfg), y))
            for tensor in store.trainable().values():
                tensor.data[...] -= (0.01 * tensor.grad).astype(np.float32)
        assert store.frozen_checksum() == frozen_before


class TestModelConfigSerialization:
    def test_kv_roundtrip(self):
        cfg = tiny_cfg(use_prompt=False)
        assert ModelConfig.from_kv(cfg.to_kv()) == cfg

    def test_kv_parses_strings(self):
        kv = {k: str(v) for k, v in ModelConfig().to_kv().items()}
        assert ModelConfig.from_kv(kv) == ModelConfig()

    def test_invalid_configs_rejected(self):
        with pytest.raises(ConfigError):
            ModelConfig(patch_len=50, u_len=40)
        with pytest.raises(ConfigError):
            ModelConfig(n_heads=64, d_model=32)
        with pytest.raises(ConfigError):
            ModelConfig(n_prototypes=4096, vocab_size=4096)
