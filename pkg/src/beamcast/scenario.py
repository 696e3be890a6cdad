"""User-motion scenarios, beam-index traces, windowing, and dataset files.

A trajectory is straight-line constant-velocity motion in the plane; the
line-of-sight departure angle follows from BS/UT geometry, NLOS paths get
seeded static angles and per-slot phases (salted with the carrier
frequency), and the beam oracle turns snapshots into per-slot records.

File formats owned here:
  - trace CSV      header ``slot,opt_beam,aod_rad``
  - dataset binary magic ``BPDS`` (see save_dataset)
  - snapshot binary magic ``BPSN`` (see save_snapshots)
"""

from __future__ import annotations

import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .channel import HALF_PI, ChannelSnapshot, Codebook, PathComponent, channel_vector, optimal_beam
from .errors import ConfigError, DataError, TraceParseError
from .params import seeded_rng

_TRACE_HEADER = "slot,opt_beam,aod_rad"
_DATASET_MAGIC = b"BPDS"
_SNAPSHOT_MAGIC = b"BPSN"
_FORMAT_VERSION = 1

# keep jittered angles strictly inside the valid departure sector
_SECTOR_MARGIN = 1e-9


@dataclass(frozen=True)
class TrajectoryConfig:
    """Geometry, mobility, channel, and seeding of one simulated run."""

    num_slots: int
    slot_period_s: float = 0.016
    ut_speed_mps: float = 10.0
    bs_position_m: tuple[float, float] = (0.0, 0.0)
    ut_start_m: tuple[float, float] = (15.0, 8.0)
    ut_heading_rad: float = np.pi / 2
    carrier_freq_ghz: float = 28.0
    num_antennas: int = 64
    num_beams: int = 64
    num_nlos_paths: int = 2
    nlos_relative_loss_db: float = 10.0
    aod_jitter_std_rad: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.num_slots < 1:
            raise ConfigError(f"num_slots must be >= 1, got {self.num_slots}")
        if not self.slot_period_s > 0:
            raise ConfigError(f"slot_period_s must be positive, got {self.slot_period_s}")
        if self.ut_speed_mps < 0:
            raise ConfigError(f"ut_speed_mps must be >= 0, got {self.ut_speed_mps}")
        if self.num_antennas < 1 or self.num_beams < 1:
            raise ConfigError("num_antennas and num_beams must be >= 1")
        if self.num_nlos_paths < 0:
            raise ConfigError(f"num_nlos_paths must be >= 0, got {self.num_nlos_paths}")
        if not self.nlos_relative_loss_db > 0:
            raise ConfigError("nlos_relative_loss_db must be positive")
        if self.aod_jitter_std_rad < 0:
            raise ConfigError("aod_jitter_std_rad must be >= 0")

    def codebook(self) -> Codebook:
        return Codebook(num_antennas=self.num_antennas, num_beams=self.num_beams)


@dataclass(frozen=True)
class TraceRecord:
    """Per-slot observables: optimal beam index and LOS departure angle."""

    slot: int
    opt_beam: int
    aod_rad: float


@dataclass(frozen=True, eq=False)
class WindowedSample:
    """One training example: x is (2, U) with rows (beam index / Q, AoD rad),
    y is the next H beam indices divided by Q."""

    x: np.ndarray
    y: np.ndarray
    q_count: int


def generate_trajectory(cfg: TrajectoryConfig) -> list[ChannelSnapshot]:
    """Simulate multipath snapshots for every slot of one trajectory."""
    t = np.arange(cfg.num_slots) * cfg.slot_period_s
    ux = cfg.ut_start_m[0] + cfg.ut_speed_mps * t * np.cos(cfg.ut_heading_rad)
    uy = cfg.ut_start_m[1] + cfg.ut_speed_mps * t * np.sin(cfg.ut_heading_rad)
    los_aod = np.arctan2(uy - cfg.bs_position_m[1], ux - cfg.bs_position_m[0])
    outside = np.abs(los_aod) >= HALF_PI
    if outside.any():
        slot = int(np.argmax(outside))
        raise ConfigError(
            f"geometry leaves the (-pi/2, pi/2) departure sector at slot {slot} "
            f"(aod={los_aod[slot]:.4f} rad)")
    if cfg.aod_jitter_std_rad > 0:
        jitter = seeded_rng(cfg.seed, "los-jitter").normal(
            0.0, cfg.aod_jitter_std_rad, size=cfg.num_slots)
        los_aod = np.clip(los_aod + jitter, -HALF_PI + _SECTOR_MARGIN, HALF_PI - _SECTOR_MARGIN)
    los_phase = seeded_rng(cfg.seed, "los-phase").uniform(0.0, 2 * np.pi, size=cfg.num_slots)

    # unit-amplitude LOS with loss 1; NLOS amplitudes land strictly below
    # 10^(-loss_db/20), so the dominance invariant holds by construction
    nlos_loss = 10.0 ** (cfg.nlos_relative_loss_db / 10.0)
    nlos = []
    for k in range(cfg.num_nlos_paths):
        aod = seeded_rng(cfg.seed, f"nlos-aod-{k}").uniform(-0.95 * HALF_PI, 0.95 * HALF_PI)
        amp = seeded_rng(cfg.seed, f"nlos-amp-{k}").uniform(0.5, 1.0)
        phases = seeded_rng(cfg.seed, f"nlos-phase-{k}-fc{cfg.carrier_freq_ghz:g}").uniform(
            0.0, 2 * np.pi, size=cfg.num_slots)
        nlos.append((float(aod), float(amp), phases))

    snaps = []
    for n in range(cfg.num_slots):
        paths = [PathComponent(float(los_aod[n]), np.exp(1j * los_phase[n]), 1.0)]
        for aod, amp, phases in nlos:
            paths.append(PathComponent(aod, amp * np.exp(1j * phases[n]), nlos_loss))
        snaps.append(ChannelSnapshot(paths=tuple(paths), slot_index=n))
    return snaps


def trace_from_trajectory(snaps, cb: Codebook) -> list[TraceRecord]:
    """Run the beam oracle on every snapshot."""
    if not snaps:
        raise DataError("empty snapshot sequence")
    out = []
    for snap in snaps:
        h = channel_vector(snap, cb.num_antennas)
        out.append(TraceRecord(slot=snap.slot_index,
                               opt_beam=optimal_beam(h, cb),
                               aod_rad=snap.paths[0].aod_rad))
    return out


def window_trace(trace, u: int, h: int, stride: int, q_count: int) -> list[WindowedSample]:
    """Slide (u past, h future) windows over one trace at the given stride."""
    if stride < 1:
        raise ConfigError(f"stride must be >= 1, got {stride}")
    records = list(trace)
    beams = np.array([r.opt_beam for r in records], dtype=np.int64)
    if beams.size and (beams.min() < 0 or beams.max() >= q_count):
        raise ValueError(f"beam index {beams.max()} out of range for q_count={q_count}")
    aods = np.array([r.aod_rad for r in records], dtype=np.float64)
    samples = []
    total = len(records)
    if total < u + h:
        return samples
    for start in range(0, total - u - h + 1, stride):
        past = slice(start, start + u)
        future = slice(start + u, start + u + h)
        x = np.stack([beams[past] / q_count, aods[past]]).astype(np.float32)
        y = (beams[future] / q_count).astype(np.float32)
        samples.append(WindowedSample(x=x, y=y, q_count=q_count))
    return samples


def windows_to_arrays(samples) -> tuple[np.ndarray, np.ndarray]:
    """Stack samples into X of shape (n, 2, U) and Y of shape (n, H)."""
    if not samples:
        raise DataError("no samples")
    x = np.stack([s.x for s in samples])
    y = np.stack([s.y for s in samples])
    return x, y


# ---------------------------------------------------------------------------
# trace CSV


def save_trace_csv(trace, path) -> Path:
    path = Path(path)
    lines = [_TRACE_HEADER]
    # positional (never scientific) shortest round-trip decimals
    lines += [f"{r.slot},{r.opt_beam},"
              f"{np.format_float_positional(float(r.aod_rad), unique=True)}"
              for r in trace]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def ingest_external_trace(path, q_count: int) -> list[TraceRecord]:
    """Parse and validate a trace CSV; slots must count up from 0 by 1."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise TraceParseError(f"{path}: empty file")
    header = [c.strip() for c in lines[0].split(",")]
    expected = _TRACE_HEADER.split(",")
    for column in expected:
        if column not in header:
            raise TraceParseError(f"{path}: line 1: missing column '{column}'")
    if header != expected:
        raise TraceParseError(f"{path}: line 1: expected header '{_TRACE_HEADER}'")
    records = []
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        parts = raw.split(",")
        if len(parts) != 3:
            raise TraceParseError(f"{path}: line {lineno}: expected 3 fields, got {len(parts)}")
        try:
            slot = int(parts[0])
            beam = int(parts[1])
            aod = float(parts[2])
        except ValueError as exc:
            raise TraceParseError(f"{path}: line {lineno}: {exc}") from None
        if slot != len(records):
            raise TraceParseError(
                f"{path}: line {lineno}: slot {slot} breaks the 0,1,2,... order "
                f"(expected {len(records)})")
        if not 0 <= beam < q_count:
            raise TraceParseError(
                f"{path}: line {lineno}: opt_beam {beam} outside [0, {q_count - 1}]")
        if not abs(aod) < HALF_PI:
            raise TraceParseError(f"{path}: line {lineno}: aod_rad {aod} outside (-pi/2, pi/2)")
        records.append(TraceRecord(slot=slot, opt_beam=beam, aod_rad=aod))
    return records


# ---------------------------------------------------------------------------
# dataset binary (BPDS)


def save_dataset(path, samples, q_count: int) -> Path:
    path = Path(path)
    if not samples:
        raise DataError("refusing to write an empty dataset")
    c, u = samples[0].x.shape
    h = samples[0].y.shape[0]
    blobs = [struct.pack("<4sHIHHHI", _DATASET_MAGIC, _FORMAT_VERSION,
                         len(samples), c, u, h, q_count)]
    for s in samples:
        if s.x.shape != (c, u) or s.y.shape != (h,):
            raise DataError("all samples in a dataset must share one shape")
        if s.q_count != q_count:
            raise DataError("one q_count per dataset file")
        blobs.append(np.ascontiguousarray(s.x, dtype="<f4").tobytes())
        blobs.append(np.ascontiguousarray(s.y, dtype="<f4").tobytes())
    path.write_bytes(b"".join(blobs))
    return path


def load_dataset(path) -> tuple[list[WindowedSample], int]:
    blob = Path(path).read_bytes()
    head = struct.calcsize("<4sHIHHHI")
    if len(blob) < head:
        raise DataError(f"{path}: truncated dataset header")
    magic, version, count, c, u, h, q_count = struct.unpack("<4sHIHHHI", blob[:head])
    if magic != _DATASET_MAGIC:
        raise DataError(f"{path}: bad dataset magic {magic!r}")
    if version != _FORMAT_VERSION:
        raise DataError(f"{path}: unsupported dataset version {version}")
    per = 4 * (c * u + h)
    if len(blob) != head + count * per:
        raise DataError(f"{path}: dataset payload size mismatch")
    samples = []
    offset = head
    for _ in range(count):
        x = np.frombuffer(blob, dtype="<f4", count=c * u, offset=offset).reshape(c, u).copy()
        offset += 4 * c * u
        y = np.frombuffer(blob, dtype="<f4", count=h, offset=offset).copy()
        offset += 4 * h
        samples.append(WindowedSample(x=x, y=y, q_count=q_count))
    return samples, q_count


# ---------------------------------------------------------------------------
# snapshot binary (BPSN)


def save_snapshots(path, snaps) -> Path:
    path = Path(path)
    blobs = [struct.pack("<4sHI", _SNAPSHOT_MAGIC, _FORMAT_VERSION, len(snaps))]
    for snap in snaps:
        blobs.append(struct.pack("<IH", snap.slot_index, len(snap.paths)))
        for p in snap.paths:
            blobs.append(struct.pack("<dddd", p.aod_rad, p.complex_gain.real,
                                     p.complex_gain.imag, p.path_loss))
    path.write_bytes(b"".join(blobs))
    return path


def load_snapshots(path) -> list[ChannelSnapshot]:
    blob = Path(path).read_bytes()
    view = memoryview(blob)
    offset = 0

    def take(n):
        nonlocal offset
        if offset + n > len(view):
            raise DataError(f"{path}: truncated snapshot file")
        chunk = view[offset:offset + n]
        offset += n
        return chunk

    magic, version, count = struct.unpack("<4sHI", take(10))
    if magic != _SNAPSHOT_MAGIC:
        raise DataError(f"{path}: bad snapshot magic {magic!r}")
    if version != _FORMAT_VERSION:
        raise DataError(f"{path}: unsupported snapshot version {version}")
    snaps = []
    for _ in range(count):
        slot, n_paths = struct.unpack("<IH", take(6))
        paths = []
        for _ in range(n_paths):
            aod, re, im, loss = struct.unpack("<dddd", take(32))
            paths.append(PathComponent(aod, complex(re, im), loss))
        snaps.append(ChannelSnapshot(paths=tuple(paths), slot_index=slot))
    return snaps


# ---------------------------------------------------------------------------
# multi-trajectory generation and dataset building


def _simulate_one(cfg: TrajectoryConfig):
    snaps = generate_trajectory(cfg)
    return snaps, trace_from_trajectory(snaps, cfg.codebook())


def simulate_trajectories(cfgs, workers: int = 1):
    """Generate (snapshots, trace) pairs for each config, in config order."""
    cfgs = list(cfgs)
    if workers <= 1 or len(cfgs) <= 1:
        return [_simulate_one(cfg) for cfg in cfgs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_simulate_one, cfgs))


def build_dataset(cfgs, u: int, h: int, stride: int, out_path,
                  shuffle_seed: int = 0, workers: int = 1) -> int:
    """Window every trajectory, shuffle with a seeded permutation, and write
    one BPDS file. Returns the number of samples written."""
    cfgs = list(cfgs)
    if not cfgs:
        raise ConfigError("build_dataset needs at least one trajectory config")
    q_count = cfgs[0].num_beams
    if any(c.num_beams != q_count for c in cfgs):
        raise ConfigError("all trajectory configs in one dataset must share num_beams")
    samples = []
    for _, trace in simulate_trajectories(cfgs, workers=workers):
        samples.extend(window_trace(trace, u, h, stride, q_count))
    if not samples:
        raise DataError(f"no windows: traces shorter than u+h={u + h}")
    perm = seeded_rng(shuffle_seed, "dataset-shuffle").permutation(len(samples))
    save_dataset(out_path, [samples[i] for i in perm], q_count)
    return len(samples)


def spread_configs(base: TrajectoryConfig, count: int, speeds=None,
                   seed_offset: int = 0) -> list[TrajectoryConfig]:
    """Vary seed, start point, and speed across `count` trajectories.

    Start positions are drawn per-trajectory from a stream keyed by the base
    seed so scenario sets are reproducible as a whole.
    """
    rng = seeded_rng(base.seed, f"spread-{seed_offset}")
    speeds = list(speeds) if speeds else [base.ut_speed_mps]
    cfgs = []
    for i in range(count):
        start = (float(rng.uniform(12.0, 20.0)), float(rng.uniform(4.0, 12.0)))
        heading = float(np.pi / 2 + rng.uniform(-0.3, 0.3))
        cfgs.append(replace(
            base,
            ut_start_m=start,
            ut_heading_rad=heading,
            ut_speed_mps=float(speeds[i % len(speeds)]),
            seed=base.seed + seed_offset + 1000 + i,
        ))
    return cfgs
