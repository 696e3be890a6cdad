"""Command-line entry point.

Subcommands: simulate, dataset, train, eval, suite, track, inspect-prompt,
ingest. Every run is driven by a flat ``key = value`` config file plus
repeatable ``--set key=value`` overrides; all randomness flows from
explicit seed keys. Exit codes: 0 success, 1 usage error, 2 data/config
error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .config import (apply_overrides, config_hash, get_bool, get_float, get_int,
                     get_str, load_config, reject_unknown)
from .errors import CheckpointError, ConfigError, DataError, NonFiniteError, TraceParseError
from .estimators import (BeamForecaster, LinearExtrapolationPredictor,
                         LstmBeamPredictor, OraclePredictor, PersistencePredictor)
from .evaluation import (_MANIFEST_KEYS, SUITES, closed_loop_track, eval_set,
                         evaluate, parse_manifest, run_suite, write_suite_csv)
from .model import ModelConfig
from .prompts import build_prompt, tokenize
from .scenario import (build_dataset, ingest_external_trace, load_dataset,
                       save_snapshots, save_trace_csv, simulate_trajectories,
                       spread_configs, window_trace, windows_to_arrays)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_common(sub, config_required: bool = True):
    sub.add_argument("--config", required=config_required, help="key = value config file")
    sub.add_argument("--set", action="append", default=[], dest="overrides",
                     metavar="KEY=VALUE", help="override a config key (repeatable)")
    sub.add_argument("--out", default=".", help="output directory")
    sub.add_argument("--workers", type=int, default=1,
                     help="parallel trajectory workers")
    sub.add_argument("--emit-plotdata", action="store_true",
                     help="also write whitespace-separated plot columns")


def build_parser() -> _Parser:
    parser = _Parser(prog="beamcast",
                     description="mmWave beam prediction workbench")
    commands = parser.add_subparsers(dest="command", metavar="COMMAND")
    for name, descr in (
            ("simulate", "generate trajectories into trace + snapshot files"),
            ("dataset", "generate trajectories and window them into a dataset file"),
            ("train", "train the forecaster or the LSTM baseline"),
            ("eval", "evaluate one predictor on a simulated scenario"),
            ("track", "closed-loop tracking with periodic re-measurement"),
            ("inspect-prompt", "print the prefix text and token ids for one window"),
            ("ingest", "validate an external trace CSV and write it canonically")):
        _add_common(commands.add_parser(name, help=descr))
    suite = commands.add_parser("suite", help="run one experiment grid")
    suite.add_argument("suite_name", choices=SUITES, metavar="SUITE",
                       help="one of %s" % ", ".join(SUITES))
    _add_common(suite)
    return parser


def _load(args) -> dict:
    return apply_overrides(load_config(args.config), args.overrides)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# handlers


def _cmd_simulate(args) -> int:
    cfg = _load(args)
    known = _MANIFEST_KEYS | {"num_trajectories"}
    reject_unknown(cfg, known, "simulate config")
    settings = parse_manifest({k: v for k, v in cfg.items() if k in _MANIFEST_KEYS})
    count = get_int(cfg, "num_trajectories", settings.eval_trajectories)
    out = _out_dir(args)
    from .evaluation import base_trajectory
    cfgs = spread_configs(base_trajectory(settings), count, speeds=settings.speeds)
    runs = simulate_trajectories(cfgs, workers=args.workers)
    for i, (snaps, trace) in enumerate(runs):
        save_trace_csv(trace, out / f"traj_{i:03d}.trace.csv")
        save_snapshots(out / f"traj_{i:03d}.snap.bin", snaps)
    print(f"wrote {len(runs)} trajectories to {out}")
    return 0


def _cmd_dataset(args) -> int:
    cfg = _load(args)
    known = _MANIFEST_KEYS | {"num_trajectories", "shuffle_seed", "name"}
    reject_unknown(cfg, known, "dataset config")
    settings = parse_manifest({k: v for k, v in cfg.items() if k in _MANIFEST_KEYS})
    count = get_int(cfg, "num_trajectories", settings.train_trajectories)
    out = _out_dir(args) / get_str(cfg, "name", "dataset.bpds")
    from .evaluation import base_trajectory
    cfgs = spread_configs(base_trajectory(settings), count, speeds=settings.speeds)
    n = build_dataset(cfgs, settings.u_len, settings.h_len, settings.window_stride,
                      out, shuffle_seed=get_int(cfg, "shuffle_seed", settings.seed),
                      workers=args.workers)
    print(f"wrote {n} samples to {out}")
    return 0


_TRAIN_KEYS = {
    "kind", "dataset", "patch_len", "stride", "d_model", "n_heads", "backbone_dim",
    "backbone_layers", "vocab_size", "n_prototypes", "input_variables", "use_prompt",
    "learning_rate", "epochs", "batch_size", "val_fraction", "early_stop_patience",
    "seed", "hidden_size", "layers",
}


def _cmd_train(args) -> int:
    cfg = _load(args)
    reject_unknown(cfg, _TRAIN_KEYS, "train config")
    kind = get_str(cfg, "kind", "forecaster")
    samples, q_count = load_dataset(get_str(cfg, "dataset"))
    x, y = windows_to_arrays(samples)
    u_len, h_len = x.shape[2], y.shape[1]
    out = _out_dir(args)
    shared = dict(u_len=u_len, h_len=h_len, q_count=q_count,
                  learning_rate=get_float(cfg, "learning_rate", 1e-3),
                  epochs=get_int(cfg, "epochs", 15),
                  batch_size=get_int(cfg, "batch_size", 16),
                  val_fraction=get_float(cfg, "val_fraction", 0.2),
                  early_stop_patience=get_int(cfg, "early_stop_patience", 5),
                  seed=get_int(cfg, "seed", 0))
    if kind == "forecaster":
        est = BeamForecaster(
            patch_len=get_int(cfg, "patch_len", 16), stride=get_int(cfg, "stride", 8),
            d_model=get_int(cfg, "d_model", 32), n_heads=get_int(cfg, "n_heads", 4),
            backbone_dim=get_int(cfg, "backbone_dim", 64),
            backbone_layers=get_int(cfg, "backbone_layers", 2),
            vocab_size=get_int(cfg, "vocab_size", 4096),
            n_prototypes=get_int(cfg, "n_prototypes", 100),
            input_variables=get_str(cfg, "input_variables", "both"),
            use_prompt=get_bool(cfg, "use_prompt", True), **shared)
    elif kind == "lstm":
        est = LstmBeamPredictor(hidden_size=get_int(cfg, "hidden_size", 64),
                                layers=get_int(cfg, "layers", 2), **shared)
    else:
        raise ConfigError(f"kind must be 'forecaster' or 'lstm', got {kind!r}")
    est.fit(x, y)
    checkpoint = est.save(out / f"{kind}.bpck")
    est.train_log_.to_csv(out / "trainlog.csv")
    print(f"trained {kind} on {x.shape[0]} samples "
          f"(best val {est.train_log_.best_val_loss:.6f}); checkpoint {checkpoint}")
    return 0


def _load_predictor(cfg, settings):
    name = get_str(cfg, "predictor", "forecaster")
    if name == "forecaster":
        return BeamForecaster.load(get_str(cfg, "checkpoint"))
    if name == "lstm":
        return LstmBeamPredictor.load(get_str(cfg, "checkpoint"))
    if name == "persistence":
        return PersistencePredictor(q_count=settings.q_count, h_len=settings.h_len)
    if name == "linear":
        return LinearExtrapolationPredictor(q_count=settings.q_count, h_len=settings.h_len)
    if name == "oracle":
        return OraclePredictor()
    raise ConfigError(f"unknown predictor {name!r}")


def _cmd_eval(args) -> int:
    cfg = _load(args)
    reject_unknown(cfg, _MANIFEST_KEYS | {"predictor"}, "eval config")
    settings = parse_manifest({k: v for k, v in cfg.items() if k in _MANIFEST_KEYS})
    predictor = _load_predictor(cfg, settings)
    traces, snaps, cb = eval_set(settings, seed_offset=7000, workers=args.workers)
    digest = config_hash(cfg)
    report = evaluate(predictor, traces, snaps, cb, settings.u_len, settings.h_len,
                      stride=settings.eval_stride, scenario="eval", config_digest=digest)
    out = _out_dir(args)
    write_suite_csv(out / "report.csv", [report])
    print(f"predictor={report.predictor} windows={report.sample_count} "
          f"mean_gain={report.overall_gain:.4f} config_hash={digest}")
    for j, g in enumerate(report.per_step_gain, start=1):
        print(f"  step {j}: {g:.4f}")
    return 0


def _cmd_track(args) -> int:
    cfg = _load(args)
    known = _MANIFEST_KEYS | {"predictor", "checkpoint", "refresh_every", "neighborhood"}
    reject_unknown(cfg, known, "track config")
    settings = parse_manifest({k: v for k, v in cfg.items() if k in _MANIFEST_KEYS})
    predictor = _load_predictor(cfg, settings)
    refresh_every = get_int(cfg, "refresh_every", 1)
    neighborhood = get_int(cfg, "neighborhood", settings.q_count)
    traces, snaps, cb = eval_set(settings, seed_offset=7500, workers=args.workers)
    digest = config_hash(cfg)
    reports = [closed_loop_track(predictor, s, t, cb, settings.u_len, settings.h_len,
                                 refresh_every, neighborhood,
                                 scenario=f"traj{i}", config_digest=digest)
               for i, (t, s) in enumerate(zip(traces, snaps))]
    out = _out_dir(args)
    write_suite_csv(out / "track.csv", reports)
    mean = float(np.mean([r.overall_gain for r in reports]))
    print(f"tracked {len(reports)} trajectories, mean gain {mean:.4f}, "
          f"config_hash={digest}")
    return 0


def _cmd_suite(args) -> int:
    manifest = _load(args)
    written = run_suite(args.suite_name, manifest, _out_dir(args),
                        workers=args.workers, emit_plotdata=args.emit_plotdata)
    for path in written:
        print(f"wrote {path}")
    return 0


def _cmd_inspect_prompt(args) -> int:
    cfg = _load(args)
    known = _MANIFEST_KEYS | {"trace", "window_index", "vocab_size"}
    reject_unknown(cfg, known, "inspect-prompt config")
    settings = parse_manifest({k: v for k, v in cfg.items() if k in _MANIFEST_KEYS})
    index = get_int(cfg, "window_index", 0)
    if "trace" in cfg:
        trace = ingest_external_trace(get_str(cfg, "trace"), settings.q_count)
    else:
        from .evaluation import base_trajectory
        trace = simulate_trajectories(
            spread_configs(base_trajectory(settings), 1, speeds=settings.speeds))[0][1]
    samples = window_trace(trace, settings.u_len, settings.h_len, 1, settings.q_count)
    if not samples:
        raise DataError(f"trace too short for a (u={settings.u_len}, h={settings.h_len}) window")
    if not 0 <= index < len(samples):
        raise DataError(f"window_index {index} outside [0, {len(samples) - 1}]")
    model_cfg = ModelConfig(u_len=settings.u_len, h_len=settings.h_len,
                            vocab_size=get_int(cfg, "vocab_size", 4096))
    text = build_prompt(samples[index].x, settings.q_count, model_cfg)
    ids = tokenize(text, model_cfg.vocab_size)
    print(text)
    print(" ".join(str(i) for i in ids))
    return 0


def _cmd_ingest(args) -> int:
    cfg = _load(args)
    reject_unknown(cfg, {"input", "q_count"}, "ingest config")
    records = ingest_external_trace(get_str(cfg, "input"), get_int(cfg, "q_count"))
    out = _out_dir(args) / "trace.csv"
    save_trace_csv(records, out)
    print(f"ingested {len(records)} records into {out}")
    return 0


_HANDLERS = {
    "simulate": _cmd_simulate,
    "dataset": _cmd_dataset,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "track": _cmd_track,
    "suite": _cmd_suite,
    "inspect-prompt": _cmd_inspect_prompt,
    "ingest": _cmd_ingest,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            return 1
        return _HANDLERS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"beamcast: error: {exc}", file=sys.stderr)
        return 1
    except (ConfigError, DataError, TraceParseError, CheckpointError,
            FileNotFoundError) as exc:
        print(f"beamcast: error: {exc}", file=sys.stderr)
        return 2
    except NonFiniteError as exc:
        print(f"beamcast: runtime failure: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"beamcast: runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
