import numpy as np
import pytest

from beamcast.baselines import (
    LstmConfig,
    build_lstm_store,
    linear_extrapolate,
    lstm_forecast,
    lstm_loss,
    persistence_predict,
)
from beamcast.errors import ShapeError
from beamcast.params import seeded_rng
from beamcast.tensor import Tensor, grad_check
from beamcast.training import TrainConfig, train


def window(beam_row, aod_row=None):
    beam_row = np.asarray(beam_row, dtype=np.float64)
    if aod_row is None:
        aod_row = np.linspace(0.1, 0.2, beam_row.size)
    return np.stack([beam_row, aod_row])


class TestPersistence:
    def test_repeats_last_index(self):
        x = window(np.concatenate([np.zeros(39), [17 / 64]]))
        assert persistence_predict(x, 64, 10).tolist() == [17] * 10

    def test_h_zero(self):
        assert persistence_predict(window([0.5, 0.5]), 64, 0).size == 0

    def test_indices_in_range(self):
        x = window(np.full(10, 0.999))
        out = persistence_predict(x, 64, 5)
        assert np.all((out >= 0) & (out <= 63))


class TestLinearExtrapolate:
    def test_exact_line_continues(self):
        q = 64
        beams = np.arange(10, 30)  # slope 1 index/slot
        x = window(beams / q)
        out = linear_extrapolate(x, q, 5)
        assert out.tolist() == [30, 31, 32, 33, 34]

    def test_constant_matches_persistence(self):
        x = window(np.full(20, 12 / 64))
        assert linear_extrapolate(x, 64, 6).tolist() == persistence_predict(x, 64, 6).tolist()

    def test_clamps_at_codebook_edge(self):
        beams = np.arange(44, 64)
        x = window(beams / 64)
        out = linear_extrapolate(x, 64, 10)
        assert out.max() == 63
        assert np.all(out >= 0)

    def test_needs_two_steps(self):
        with pytest.raises(ShapeError):
            linear_extrapolate(window([0.5]), 64, 3)


def tiny_lstm(**kwargs):
    base = dict(input_size=2, hidden_size=6, layers=1, h_len=4, seed=3)
    base.update(kwargs)
    return LstmConfig(**base)


class TestLstm:
    def test_zero_weights_output_is_head_bias(self):
        cfg = tiny_lstm()
        store = build_lstm_store(cfg)
        for tensor in store.trainable().values():
            tensor.data[...] = 0.0
        store["lstm.head.b"].data[...] = np.arange(cfg.h_len, dtype=np.float32)
        out = lstm_forecast(window(np.linspace(0, 1, 12)), store, cfg)
        assert np.allclose(out.data, np.arange(cfg.h_len), atol=1e-7)

    def test_output_shape_default_config(self):
        cfg = LstmConfig()
        store = build_lstm_store(cfg)
        out = lstm_forecast(window(np.linspace(0.1, 0.4, 40)), store, cfg)
        assert out.shape == (10,)
        assert np.all(np.isfinite(out.data))

    def test_gate_ranges(self):
        cfg = tiny_lstm(layers=2)
        store = build_lstm_store(cfg)
        rng = seeded_rng(8, "lstm-gates")
        x = np.stack([rng.uniform(0, 1, 15), rng.uniform(-1.5, 1.5, 15)])
        _, gates = lstm_forecast(x, store, cfg, collect_gates=True)
        assert gates
        for gi, gf, go, gg in gates:
            for gate in (gi, gf, go):
                assert np.all(gate > 0) and np.all(gate < 1)
            assert np.all(gg > -1) and np.all(gg < 1)

    @pytest.mark.parametrize("seed", [1, 2, 3])
    def test_grad_check_end_to_end(self, seed):
        cfg = tiny_lstm(seed=seed)
        store = build_lstm_store(cfg)
        rng = seeded_rng(seed, "lstm-gc")
        x = np.stack([rng.uniform(0, 1, 8), rng.uniform(-1, 1, 8)])
        y = rng.uniform(0, 1, cfg.h_len).astype(np.float32)
        for name in store.names():
            original = store._entries[name]

            def f(t, _name=name, _orig=original):
                store._entries[_name] = (t, True)
                try:
                    return lstm_loss(store, cfg, x, y)
                finally:
                    store._entries[_name] = _orig

            assert grad_check(f, Tensor(original[0].data.copy()), eps=1e-3) < 1e-3, name

    def test_trains_on_synthetic_drift(self):
        # targets continue the input line: learnable by the LSTM head
        cfg = tiny_lstm(hidden_size=8, h_len=3)
        store = build_lstm_store(cfg)
        rng = seeded_rng(5, "lstm-train")
        samples = []
        for _ in range(30):
            start = rng.uniform(0.2, 0.6)
            slope = rng.uniform(-0.01, 0.01)
            t = np.arange(12)
            beam = start + slope * t
            samples.append((window(beam), (start + slope * (12 + np.arange(3))).astype(np.float32)))
        log = train(store, samples, lambda s, smp: lstm_loss(s, cfg, *smp),
                    TrainConfig(epochs=10, learning_rate=0.02, seed=1))
        assert log.best_val_loss < log.initial_val_loss

    def test_shape_validation(self):
        cfg = tiny_lstm()
        store = build_lstm_store(cfg)
        with pytest.raises(ShapeError):
            lstm_forecast(np.zeros((3, 10)), store, cfg)
