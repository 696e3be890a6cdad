import subprocess
import sys

import numpy as np
import pytest

from beamcast.cli import main


def write_config(tmp_path, name, **keys):
    path = tmp_path / name
    lines = [f"{k} = {v}" for k, v in keys.items()]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def scenario_keys(**extra):
    base = dict(seed=3, num_antennas=16, speeds="5,15", num_slots=52,
                eval_trajectories=2, train_trajectories=4, u_len=24, h_len=6,
                window_stride=2, eval_stride=3, epochs=1, learning_rate=0.003)
    base.update(extra)
    return base


class TestUsageErrors:
    def test_no_command(self, capsys):
        assert main([]) == 1

    def test_unknown_command(self, capsys):
        assert main(["frobnicate"]) == 1
        assert "error" in capsys.readouterr().err

    def test_unknown_flag(self, capsys):
        assert main(["simulate", "--bogus"]) == 1

    def test_module_entry_point(self):
        proc = subprocess.run([sys.executable, "-m", "beamcast", "definitely-not-a-command"],
                              capture_output=True, text=True)
        assert proc.returncode == 1


class TestConfigErrors:
    def test_unknown_config_key_exit_2(self, tmp_path, capsys):
        cfg = write_config(tmp_path, "c.txt", **scenario_keys(), typo_key=1)
        assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
        assert "typo_key" in capsys.readouterr().err

    def test_missing_config_file_exit_2(self, tmp_path):
        assert main(["simulate", "--config", str(tmp_path / "missing.txt")]) == 2

    def test_bad_set_override_exit_2(self, tmp_path):
        cfg = write_config(tmp_path, "c.txt", **scenario_keys())
        assert main(["simulate", "--config", str(cfg), "--set", "nonsense"]) == 2


class TestSimulateAndIngest:
    def test_simulate_writes_pairs(self, tmp_path, capsys):
        cfg = write_config(tmp_path, "c.txt", **scenario_keys(num_trajectories=2))
        out = tmp_path / "sim"
        assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == 0
        assert (out / "traj_000.trace.csv").exists()
        assert (out / "traj_001.snap.bin").exists()

    def test_simulate_deterministic(self, tmp_path):
        cfg = write_config(tmp_path, "c.txt", **scenario_keys(num_trajectories=2))
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert main(["simulate", "--config", str(cfg), "--out", str(out1)]) == 0
        assert main(["simulate", "--config", str(cfg), "--out", str(out2)]) == 0
        for name in ("traj_000.trace.csv", "traj_000.snap.bin"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()

    def test_ingest_roundtrip(self, tmp_path, capsys):
        src = tmp_path / "ext.csv"
        src.write_text("slot,opt_beam,aod_rad\n0,5,0.1\n1,6,0.12\n", encoding="utf-8")
        cfg = write_config(tmp_path, "c.txt", input=str(src), q_count=16)
        out = tmp_path / "ing"
        assert main(["ingest", "--config", str(cfg), "--out", str(out)]) == 0
        assert "2 records" in capsys.readouterr().out
        assert (out / "trace.csv").read_text().splitlines()[0] == "slot,opt_beam,aod_rad"

    def test_ingest_bad_file_exit_2(self, tmp_path, capsys):
        src = tmp_path / "ext.csv"
        src.write_text("slot,opt_beam,aod_rad\n0,5,0.1\n2,6,0.12\n", encoding="utf-8")
        cfg = write_config(tmp_path, "c.txt", input=str(src), q_count=16)
        assert main(["ingest", "--config", str(cfg), "--out", str(tmp_path)]) == 2
        assert "line 3" in capsys.readouterr().err


class TestDatasetCommand:
    def test_dataset_single_window_trace(self, tmp_path, capsys):
        cfg = write_config(tmp_path, "c.txt",
                           **scenario_keys(num_trajectories=1, num_slots=30,
                                           u_len=24, h_len=6, window_stride=1))
        out = tmp_path / "ds"
        assert main(["dataset", "--config", str(cfg), "--out", str(out)]) == 0
        assert "wrote 1 samples" in capsys.readouterr().out
        from beamcast.scenario import load_dataset
        samples, q = load_dataset(out / "dataset.bpds")
        assert len(samples) == 1 and q == 16

    def test_dataset_deterministic(self, tmp_path):
        cfg = write_config(tmp_path, "c.txt", **scenario_keys(num_trajectories=3))
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["dataset", "--config", str(cfg), "--out", str(a)]) == 0
        assert main(["dataset", "--config", str(cfg), "--out", str(b)]) == 0
        assert (a / "dataset.bpds").read_bytes() == (b / "dataset.bpds").read_bytes()

    def test_set_override_changes_output(self, tmp_path):
        cfg = write_config(tmp_path, "c.txt", **scenario_keys(num_trajectories=3))
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["dataset", "--config", str(cfg), "--out", str(a)]) == 0
        assert main(["dataset", "--config", str(cfg), "--out", str(b),
                     "--set", "seed=9"]) == 0
        assert (a / "dataset.bpds").read_bytes() != (b / "dataset.bpds").read_bytes()

    def test_workers_flag_matches_serial(self, tmp_path):
        cfg = write_config(tmp_path, "c.txt", **scenario_keys(num_trajectories=4))
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["dataset", "--config", str(cfg), "--out", str(a)]) == 0
        assert main(["dataset", "--config", str(cfg), "--out", str(b),
                     "--workers", "2"]) == 0
        assert (a / "dataset.bpds").read_bytes() == (b / "dataset.bpds").read_bytes()


@pytest.fixture(scope="module")
def trained_dir(tmp_path_factory):
    """One tiny dataset + forecaster + lstm checkpoint for the command tests."""
    root = tmp_path_factory.mktemp("cli_train")
    cfg = write_config(root, "data.txt", **scenario_keys(num_trajectories=6))
    assert main(["dataset", "--config", str(cfg), "--out", str(root)]) == 0
    train_cfg = write_config(
        root, "train.txt", kind="forecaster", dataset=str(root / "dataset.bpds"),
        patch_len=8, stride=4, d_model=8, n_heads=2, backbone_dim=16,
        backbone_layers=1, vocab_size=256, n_prototypes=8, epochs=1,
        batch_size=8, learning_rate=0.003, seed=3)
    assert main(["train", "--config", str(train_cfg), "--out", str(root)]) == 0
    lstm_cfg = write_config(
        root, "lstm.txt", kind="lstm", dataset=str(root / "dataset.bpds"),
        hidden_size=6, layers=1, epochs=1, batch_size=8, seed=3)
    assert main(["train", "--config", str(lstm_cfg), "--out", str(root)]) == 0
    return root


class TestTrainEvalTrack:
    def test_train_outputs(self, trained_dir):
        assert (trained_dir / "forecaster.bpck").exists()
        assert (trained_dir / "forecaster.cfg").exists()
        assert (trained_dir / "lstm.bpck").exists()
        log = (trained_dir / "trainlog.csv").read_text().splitlines()
        assert log[0] == "epoch,train_loss,val_loss,seconds"
        assert len(log) >= 2

    def test_train_determinism(self, trained_dir, tmp_path):
        train_cfg = trained_dir / "train.txt"
        out = tmp_path / "again"
        assert main(["train", "--config", str(train_cfg), "--out", str(out)]) == 0
        assert ((out / "forecaster.bpck").read_bytes()
                == (trained_dir / "forecaster.bpck").read_bytes())

    def test_eval_forecaster(self, trained_dir, tmp_path, capsys):
        cfg = write_config(tmp_path, "eval.txt", **scenario_keys(),
                           predictor="forecaster",
                           checkpoint=str(trained_dir / "forecaster.bpck"))
        out = tmp_path / "eval"
        assert main(["eval", "--config", str(cfg), "--out", str(out)]) == 0
        captured = capsys.readouterr().out
        assert "config_hash=" in captured
        lines = (out / "report.csv").read_text().splitlines()
        assert lines[0] == "step,predictor,scenario,mean_gain,n"
        assert len(lines) == 7  # h_len=6 steps

    def test_eval_oracle_all_ones(self, trained_dir, tmp_path):
        cfg = write_config(tmp_path, "eval.txt", **scenario_keys(), predictor="oracle")
        out = tmp_path / "eval"
        assert main(["eval", "--config", str(cfg), "--out", str(out)]) == 0
        gains = [float(line.split(",")[3])
                 for line in (out / "report.csv").read_text().splitlines()[1:]]
        assert gains == [1.0] * 6

    def test_eval_missing_checkpoint_exit_2(self, tmp_path):
        cfg = write_config(tmp_path, "eval.txt", **scenario_keys(),
                           predictor="forecaster", checkpoint=str(tmp_path / "no.bpck"))
        assert main(["eval", "--config", str(cfg), "--out", str(tmp_path)]) == 2

    def test_set_override_changes_config_hash(self, trained_dir, tmp_path, capsys):
        cfg = write_config(tmp_path, "eval.txt", **scenario_keys(), predictor="persistence")
        out = tmp_path / "e1"
        assert main(["eval", "--config", str(cfg), "--out", str(out)]) == 0
        hash1 = [l for l in capsys.readouterr().out.splitlines() if "config_hash" in l]
        assert main(["eval", "--config", str(cfg), "--out", str(out),
                     "--set", "eval_stride=1"]) == 0
        hash2 = [l for l in capsys.readouterr().out.splitlines() if "config_hash" in l]
        assert hash1 != hash2

    def test_track(self, trained_dir, tmp_path, capsys):
        cfg = write_config(tmp_path, "track.txt", **scenario_keys(),
                           predictor="persistence", refresh_every=2, neighborhood=2)
        out = tmp_path / "track"
        assert main(["track", "--config", str(cfg), "--out", str(out)]) == 0
        lines = (out / "track.csv").read_text().splitlines()
        assert lines[0] == "step,predictor,scenario,mean_gain,n"
        assert any("traj0" in line for line in lines[1:])

    def test_eval_deterministic_output(self, trained_dir, tmp_path):
        cfg = write_config(tmp_path, "eval.txt", **scenario_keys(), predictor="linear")
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["eval", "--config", str(cfg), "--out", str(a)]) == 0
        assert main(["eval", "--config", str(cfg), "--out", str(b)]) == 0
        assert (a / "report.csv").read_bytes() == (b / "report.csv").read_bytes()


class TestInspectPrompt:
    def test_increasing_trace_prints_upward(self, tmp_path, capsys):
        trace = tmp_path / "trace.csv"
        rows = ["slot,opt_beam,aod_rad"]
        rows += [f"{i},{min(i, 15)},{0.01 * i}" for i in range(32)]
        trace.write_text("\n".join(rows) + "\n", encoding="utf-8")
        cfg = write_config(tmp_path, "c.txt", trace=str(trace), num_antennas=16,
                           u_len=24, h_len=6, window_index=0)
        assert main(["inspect-prompt", "--config", str(cfg), "--out", str(tmp_path)]) == 0
        out = capsys.readouterr().out
        assert "upward" in out
        ids = out.splitlines()[-1].split()
        assert all(0 <= int(t) < 4096 for t in ids)

    def test_generated_window(self, tmp_path, capsys):
        cfg = write_config(tmp_path, "c.txt", **scenario_keys())
        assert main(["inspect-prompt", "--config", str(cfg), "--out", str(tmp_path)]) == 0
        out = capsys.readouterr().out
        assert "trend" in out

    def test_window_index_out_of_range_exit_2(self, tmp_path):
        cfg = write_config(tmp_path, "c.txt", **scenario_keys(window_index=10_000))
        assert main(["inspect-prompt", "--config", str(cfg), "--out", str(tmp_path)]) == 2


class TestSuiteCommand:
    def test_component_ablation_via_cli(self, tmp_path):
        cfg = write_config(tmp_path, "suite.txt", **scenario_keys())
        out = tmp_path / "suite"
        assert main(["suite", "component-ablation", "--config", str(cfg),
                     "--out", str(out)]) == 0
        lines = (out / "component-ablation.csv").read_text().splitlines()
        scenarios = {line.split(",")[2] for line in lines[1:]}
        assert {"full", "no_prompt", "no_patch"} <= scenarios

    def test_suite_unknown_name_exit_1(self, tmp_path):
        cfg = write_config(tmp_path, "suite.txt", **scenario_keys())
        assert main(["suite", "nonsense", "--config", str(cfg), "--out", str(tmp_path)]) == 1
