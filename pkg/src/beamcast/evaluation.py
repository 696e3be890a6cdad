"""Normalized-gain evaluation, closed-loop tracking, and experiment suites.

Evaluation slides windows over held-out traces, asks each predictor for
H future beam indices, and scores every step with the gain of the chosen
beam relative to the best beam for the true channel at that slot. Suites
assemble the scenario grids (velocity, BS geometry, carrier frequency,
antenna count, input variables, model components) and write one CSV per
grid with rows ``step,predictor,scenario,mean_gain,n``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .channel import Codebook, beam_gains, channel_vector
from .config import config_hash, get_float, get_float_list, get_int, get_str, get_bool, reject_unknown
from .errors import ConfigError, DataError
from .estimators import BeamForecaster, LinearExtrapolationPredictor, LstmBeamPredictor, OraclePredictor, PersistencePredictor
from .scenario import TrajectoryConfig, simulate_trajectories, spread_configs, window_trace

SUITES = ("velocity", "scenario-mismatch", "frequency-mismatch", "antenna",
          "variable-ablation", "component-ablation")

# alternate base-station placement for the geometry-mismatch suite; the
# primary geometry keeps the BS at the origin
ALTERNATE_BS_POSITION = (-10.0, -5.0)


@dataclass
class EvalReport:
    predictor: str
    scenario: str
    per_step_gain: list[float]
    overall_gain: float
    sample_count: int
    config_hash: str = ""

    def __post_init__(self):
        if self.sample_count <= 0:
            raise DataError("EvalReport needs at least one evaluated window")
        if any(not 0.0 <= g <= 1.0 + 1e-9 for g in self.per_step_gain):
            raise DataError("normalized gains must lie in [0, 1]")


def _slot_gain_tables(snaps, cb: Codebook):
    """Per-slot beam gain rows and their maxima, so gains come from the
    stored channel state rather than being recomputed per window."""
    gains = np.stack([beam_gains(channel_vector(s, cb.num_antennas), cb) for s in snaps])
    best = gains.max(axis=1)
    return gains, best


def _normalized(gains_row: np.ndarray, best: float, q: int) -> float:
    if best == 0.0:
        return 1.0
    return float(gains_row[q] / best)


def evaluate(predictor, traces, snapshots, cb: Codebook, u: int, h: int,
             stride: int = 1, scenario: str = "", config_digest: str = "") -> EvalReport:
    """Score a predictor over every admissible window of the given traces."""
    if len(traces) != len(snapshots):
        raise DataError(f"{len(traces)} traces but {len(snapshots)} snapshot sequences")
    q_count = cb.num_beams
    is_oracle = bool(getattr(predictor, "is_oracle", False))
    step_sums = np.zeros(h)
    count = 0
    for trace, snaps in zip(traces, snapshots):
        if snaps is None or len(snaps) < len(trace):
            raise DataError("missing snapshots for a trace; gains need the channel state")
        gain_rows, best = _slot_gain_tables(snaps, cb)
        beams = np.array([r.opt_beam for r in trace])
        aods = np.array([r.aod_rad for r in trace])
        for start in range(u, len(trace) - h + 1, stride):
            if is_oracle:
                pred = beams[start:start + h]
            else:
                x = np.stack([beams[start - u:start] / q_count, aods[start - u:start]])
                pred = np.asarray(predictor.predict_indices(x, q_count))
            if pred.shape != (h,):
                raise DataError(f"predictor returned shape {pred.shape}, expected ({h},)")
            if pred.min() < 0 or pred.max() >= q_count:
                raise DataError(f"predicted beam index outside [0, {q_count - 1}]")
            for j in range(h):
                step_sums[j] += _normalized(gain_rows[start + j], best[start + j], int(pred[j]))
            count += 1
    if count == 0:
        raise DataError(f"no admissible windows (need traces of length >= {u + h})")
    per_step = (step_sums / count).tolist()
    return EvalReport(predictor=getattr(predictor, "name", type(predictor).__name__),
                      scenario=scenario, per_step_gain=per_step,
                      overall_gain=float(np.mean(per_step)), sample_count=count,
                      config_hash=config_digest)


def closed_loop_track(predictor, snaps, trace, cb: Codebook, u: int, h: int,
                      refresh_every: int, neighborhood: int,
                      scenario: str = "", config_digest: str = "") -> EvalReport:
    """Alternate prediction with periodic re-measurement.

    The first u slots come from the oracle trace. After that the history is
    fed by measurements: every `refresh_every` slots the best beam within
    `neighborhood` of the predicted one is measured and stored; other slots
    store the prediction itself. A half-width covering the codebook is a
    full scan.
    """
    if refresh_every < 1:
        raise ConfigError(f"refresh_every must be >= 1, got {refresh_every}")
    if neighborhood < 0:
        raise ConfigError(f"neighborhood must be >= 0, got {neighborhood}")
    total = len(trace)
    if total < u + refresh_every:
        raise ConfigError(f"trajectory too short: {total} slots for u={u} "
                          f"with refresh_every={refresh_every}")
    if len(snaps) < total:
        raise DataError("missing snapshots for the trajectory")
    q_count = cb.num_beams
    is_oracle = bool(getattr(predictor, "is_oracle", False))
    gain_rows, best = _slot_gain_tables(snaps, cb)
    true_beams = np.array([r.opt_beam for r in trace])
    aods = np.array([r.aod_rad for r in trace])

    history = list(true_beams[:u])
    step_sums = np.zeros(h)
    step_counts = np.zeros(h, dtype=np.int64)
    slot = u
    while slot < total:
        steps = min(h, total - slot)
        if is_oracle:
            pred = true_beams[slot:slot + h]
        else:
            x = np.stack([np.array(history[-u:]) / q_count, aods[slot - u:slot]])
            pred = np.asarray(predictor.predict_indices(x, q_count))
        for j in range(steps):
            n = slot + j
            chosen = int(pred[j])
            step_sums[j] += _normalized(gain_rows[n], best[n], chosen)
            step_counts[j] += 1
            if (n - u) % refresh_every == 0:
                lo = max(0, chosen - neighborhood)
                hi = min(q_count - 1, chosen + neighborhood)
                window_gains = gain_rows[n, lo:hi + 1]
                measured = lo + int(np.argmax(window_gains))
            else:
                measured = chosen
            history.append(measured)
        slot += steps

    covered = step_counts > 0
    per_step = (step_sums[covered] / step_counts[covered]).tolist()
    return EvalReport(predictor=getattr(predictor, "name", type(predictor).__name__),
                      scenario=scenario, per_step_gain=per_step,
                      overall_gain=float(np.mean(per_step)),
                      sample_count=int(step_counts.max()), config_hash=config_digest)


# ---------------------------------------------------------------------------
# suite machinery

_MANIFEST_KEYS = {
    "seed", "num_antennas", "speeds", "train_trajectories", "eval_trajectories",
    "num_slots", "window_stride", "eval_stride", "u_len", "h_len", "epochs",
    "batch_size", "learning_rate", "val_fraction", "early_stop_patience",
    "checkpoint", "include_lstm", "include_linear", "carrier_freq_ghz",
    "num_nlos_paths", "nlos_relative_loss_db", "aod_jitter_std_rad",
}


@dataclass
class SuiteSettings:
    seed: int
    q_count: int
    speeds: list[float]
    train_trajectories: int
    eval_trajectories: int
    num_slots: int
    window_stride: int
    eval_stride: int
    u_len: int
    h_len: int
    epochs: int
    batch_size: int
    learning_rate: float
    val_fraction: float
    early_stop_patience: int
    checkpoint: str
    include_lstm: bool
    include_linear: bool
    carrier_freq_ghz: float
    num_nlos_paths: int
    nlos_relative_loss_db: float
    aod_jitter_std_rad: float
    digest: str


def parse_manifest(manifest: dict) -> SuiteSettings:
    reject_unknown(manifest, _MANIFEST_KEYS, "suite manifest")
    return SuiteSettings(
        seed=get_int(manifest, "seed", 7),
        q_count=get_int(manifest, "num_antennas", 64),
        speeds=get_float_list(manifest, "speeds", [5.0, 10.0, 15.0, 20.0]),
        train_trajectories=get_int(manifest, "train_trajectories", 48),
        eval_trajectories=get_int(manifest, "eval_trajectories", 6),
        num_slots=get_int(manifest, "num_slots", 58),
        window_stride=get_int(manifest, "window_stride", 4),
        eval_stride=get_int(manifest, "eval_stride", 3),
        u_len=get_int(manifest, "u_len", 40),
        h_len=get_int(manifest, "h_len", 10),
        epochs=get_int(manifest, "epochs", 10),
        batch_size=get_int(manifest, "batch_size", 16),
        learning_rate=get_float(manifest, "learning_rate", 3e-3),
        val_fraction=get_float(manifest, "val_fraction", 0.2),
        early_stop_patience=get_int(manifest, "early_stop_patience", 5),
        checkpoint=get_str(manifest, "checkpoint", ""),
        include_lstm=get_bool(manifest, "include_lstm", False),
        include_linear=get_bool(manifest, "include_linear", True),
        carrier_freq_ghz=get_float(manifest, "carrier_freq_ghz", 28.0),
        num_nlos_paths=get_int(manifest, "num_nlos_paths", 2),
        nlos_relative_loss_db=get_float(manifest, "nlos_relative_loss_db", 10.0),
        aod_jitter_std_rad=get_float(manifest, "aod_jitter_std_rad", 0.0),
        digest=config_hash(manifest),
    )


def base_trajectory(settings: SuiteSettings, **overrides) -> TrajectoryConfig:
    kwargs = dict(
        num_slots=settings.num_slots,
        num_antennas=settings.q_count,
        num_beams=settings.q_count,
        carrier_freq_ghz=settings.carrier_freq_ghz,
        num_nlos_paths=settings.num_nlos_paths,
        nlos_relative_loss_db=settings.nlos_relative_loss_db,
        aod_jitter_std_rad=settings.aod_jitter_std_rad,
        seed=settings.seed,
    )
    kwargs.update(overrides)
    return TrajectoryConfig(**kwargs)


def training_arrays(settings: SuiteSettings, workers: int = 1,
                    base_overrides: dict | None = None):
    """Simulate the training scenario mix and window it into (X, Y)."""
    base = base_trajectory(settings, **(base_overrides or {}))
    cfgs = spread_configs(base, settings.train_trajectories, speeds=settings.speeds)
    xs, ys = [], []
    for _, trace in simulate_trajectories(cfgs, workers=workers):
        for s in window_trace(trace, settings.u_len, settings.h_len,
                              settings.window_stride, settings.q_count):
            xs.append(s.x)
            ys.append(s.y)
    if not xs:
        raise DataError("training scenario produced no windows; increase num_slots")
    return np.stack(xs), np.stack(ys)


def eval_set(settings: SuiteSettings, seed_offset: int, workers: int = 1,
             base_overrides: dict | None = None, speeds=None):
    """Simulate held-out trajectories; returns (traces, snapshots, codebook)."""
    overrides = dict(base_overrides or {})
    base = base_trajectory(settings, **overrides)
    cfgs = spread_configs(base, settings.eval_trajectories,
                          speeds=speeds if speeds is not None else settings.speeds,
                          seed_offset=seed_offset)
    runs = simulate_trajectories(cfgs, workers=workers)
    traces = [trace for _, trace in runs]
    snaps = [s for s, _ in runs]
    return traces, snaps, base.codebook()


def fit_forecaster(settings: SuiteSettings, x, y, workers: int = 1,
                   **estimator_overrides) -> BeamForecaster:
    params = dict(
        u_len=settings.u_len, h_len=settings.h_len, q_count=settings.q_count,
        learning_rate=settings.learning_rate, epochs=settings.epochs,
        batch_size=settings.batch_size, val_fraction=settings.val_fraction,
        early_stop_patience=settings.early_stop_patience, seed=settings.seed)
    params.update(estimator_overrides)
    return BeamForecaster(**params).fit(x, y)


def _baseline_predictors(settings: SuiteSettings, x=None, y=None):
    out = [PersistencePredictor(q_count=settings.q_count, h_len=settings.h_len),
           OraclePredictor()]
    if settings.include_linear:
        out.insert(1, LinearExtrapolationPredictor(q_count=settings.q_count,
                                                   h_len=settings.h_len))
    if settings.include_lstm:
        if x is None:
            raise ConfigError("include_lstm needs training data in this suite")
        lstm = LstmBeamPredictor(u_len=settings.u_len, h_len=settings.h_len,
                                 q_count=settings.q_count, epochs=settings.epochs,
                                 learning_rate=settings.learning_rate,
                                 batch_size=settings.batch_size,
                                 val_fraction=settings.val_fraction,
                                 early_stop_patience=settings.early_stop_patience,
                                 seed=settings.seed).fit(x, y)
        out.insert(1, lstm)
    return out


def _resolve_base_forecaster(settings: SuiteSettings, out_dir: Path, workers: int,
                             x=None, y=None) -> BeamForecaster:
    """Load the manifest checkpoint when given, else train and cache one."""
    if settings.checkpoint:
        return BeamForecaster.load(settings.checkpoint)
    if x is None:
        x, y = training_arrays(settings, workers=workers)
    model = fit_forecaster(settings, x, y, workers=workers)
    model.save(out_dir / "forecaster_base.bpck")
    return model


def write_suite_csv(path, reports) -> Path:
    path = Path(path)
    lines = ["step,predictor,scenario,mean_gain,n"]
    for report in reports:
        for j, gain in enumerate(report.per_step_gain, start=1):
            lines.append(f"{j},{report.predictor},{report.scenario},"
                         f"{gain!r},{report.sample_count}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def write_plotdata(path, reports) -> Path:
    """Whitespace-separated columns, one per (predictor, scenario) pair."""
    path = Path(path)
    keys = [f"{r.predictor}/{r.scenario}" for r in reports]
    h = max(len(r.per_step_gain) for r in reports)
    lines = ["# step " + " ".join(keys)]
    for j in range(h):
        row = [str(j + 1)]
        for r in reports:
            row.append(repr(r.per_step_gain[j]) if j < len(r.per_step_gain) else "nan")
        lines.append(" ".join(row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def run_suite(suite: str, manifest: dict, out_dir, workers: int = 1,
              emit_plotdata: bool = False) -> list[Path]:
    """Run one experiment grid end to end; returns the written files."""
    if suite not in SUITES:
        raise ConfigError(f"unknown suite {suite!r}; choose from {SUITES}")
    settings = parse_manifest(manifest)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    reports: list[EvalReport] = []

    def run_predictors(predictors, traces, snaps, cb, scenario):
        for p in predictors:
            reports.append(evaluate(p, traces, snaps, cb, settings.u_len,
                                    settings.h_len, stride=settings.eval_stride,
                                    scenario=scenario, config_digest=settings.digest))

    if suite == "velocity":
        x, y = training_arrays(settings, workers=workers)
        model = _resolve_base_forecaster(settings, out_dir, workers, x, y)
        predictors = [model] + _baseline_predictors(settings, x, y)
        for speed in settings.speeds:
            traces, snaps, cb = eval_set(settings, seed_offset=9000 + int(speed),
                                         workers=workers, speeds=[speed])
            run_predictors(predictors, traces, snaps, cb, f"v{speed:g}")

    elif suite == "scenario-mismatch":
        x, y = training_arrays(settings, workers=workers)
        model = _resolve_base_forecaster(settings, out_dir, workers, x, y)
        predictors = [model] + _baseline_predictors(settings, x, y)
        for name, bs in (("bs1", (0.0, 0.0)), ("bs2", ALTERNATE_BS_POSITION)):
            traces, snaps, cb = eval_set(settings, seed_offset=9100,
                                         workers=workers,
                                         base_overrides={"bs_position_m": bs})
            run_predictors(predictors, traces, snaps, cb, name)

    elif suite == "frequency-mismatch":
        x, y = training_arrays(settings, workers=workers)
        model = _resolve_base_forecaster(settings, out_dir, workers, x, y)
        predictors = [model] + _baseline_predictors(settings, x, y)
        for fc in (28.0, 60.0):
            traces, snaps, cb = eval_set(settings, seed_offset=9200, workers=workers,
                                         base_overrides={"carrier_freq_ghz": fc})
            run_predictors(predictors, traces, snaps, cb, f"fc{fc:g}")

    elif suite == "antenna":
        x, y = training_arrays(settings, workers=workers)
        model = _resolve_base_forecaster(settings, out_dir, workers, x, y)
        for m in (32, 64, 128):
            scenario_settings = replace(settings, q_count=m)
            traces, snaps, cb = eval_set(scenario_settings, seed_offset=9300 + m,
                                         workers=workers)
            predictors = [model] + _baseline_predictors(scenario_settings)
            run_predictors(predictors, traces, snaps, cb, f"m{m}")

    elif suite == "variable-ablation":
        x, y = training_arrays(settings, workers=workers)
        traces, snaps, cb = eval_set(settings, seed_offset=9400, workers=workers)
        variants = {"both": "both", "beam_only": "beam", "aod_only": "aod"}
        for scenario, input_variables in variants.items():
            model = fit_forecaster(settings, x, y, input_variables=input_variables)
            model.save(out_dir / f"forecaster_{scenario}.bpck")
            run_predictors([model], traces, snaps, cb, scenario)
        run_predictors(_baseline_predictors(settings, x, y), traces, snaps, cb, "both")

    elif suite == "component-ablation":
        x, y = training_arrays(settings, workers=workers)
        traces, snaps, cb = eval_set(settings, seed_offset=9500, workers=workers)
        full = _resolve_base_forecaster(settings, out_dir, workers, x, y)
        run_predictors([full], traces, snaps, cb, "full")
        no_prompt = fit_forecaster(settings, x, y, use_prompt=False)
        no_prompt.save(out_dir / "forecaster_no_prompt.bpck")
        run_predictors([no_prompt], traces, snaps, cb, "no_prompt")
        no_patch = fit_forecaster(settings, x, y, patch_len=settings.u_len,
                                  stride=settings.u_len)
        no_patch.save(out_dir / "forecaster_no_patch.bpck")
        run_predictors([no_patch], traces, snaps, cb, "no_patch")
        run_predictors(_baseline_predictors(settings, x, y), traces, snaps, cb, "full")

    written = [write_suite_csv(out_dir / f"{suite}.csv", reports)]
    (out_dir / "config_hash.txt").write_text(settings.digest + "\n", encoding="utf-8")
    written.append(out_dir / "config_hash.txt")
    if emit_plotdata:
        written.append(write_plotdata(out_dir / f"{suite}.dat", reports))
    return written
