"""Multipath channel model, DFT beam codebook, and beamforming-gain oracle.

The channel is a sum of discrete departure paths over a uniform linear
array at half-wavelength spacing; beams come from a DFT codebook indexed
0..Q-1. All complex arithmetic is 64-bit: this module is the ground truth
the rest of the workbench is measured against.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError

HALF_PI = np.pi / 2


@dataclass(frozen=True)
class PathComponent:
    """One departure path: angle (rad), complex gain, linear path loss."""

    aod_rad: float
    complex_gain: complex
    path_loss: float

    def __post_init__(self):
        if not self.path_loss > 0:
            raise ValueError(f"path_loss must be positive, got {self.path_loss}")
        if not abs(self.aod_rad) < HALF_PI:
            raise ValueError(f"aod_rad must lie strictly inside (-pi/2, pi/2), got {self.aod_rad}")

    def amplitude(self) -> float:
        return abs(self.complex_gain) * np.sqrt(1.0 / self.path_loss)


@dataclass(frozen=True)
class ChannelSnapshot:
    """Multipath state of one slot; paths[0] is the dominant LOS path."""

    paths: tuple[PathComponent, ...]
    slot_index: int

    def __post_init__(self):
        object.__setattr__(self, "paths", tuple(self.paths))
        if len(self.paths) < 1:
            raise ValueError("snapshot needs at least one path")
        if self.slot_index < 0:
            raise ValueError(f"slot_index must be nonnegative, got {self.slot_index}")
        los = self.paths[0].amplitude()
        for p in self.paths[1:]:
            if p.amplitude() > los + 1e-12:
                raise ValueError("paths[0] must be the dominant (LOS) path")


@dataclass(frozen=True)
class Codebook:
    """DFT transmit codebook: Q beams over M antennas."""

    num_antennas: int
    num_beams: int
    antenna_spacing_over_wavelength: float = 0.5

    def __post_init__(self):
        if self.num_antennas < 1 or self.num_beams < 1:
            raise ValueError("num_antennas and num_beams must be >= 1")
        if not self.antenna_spacing_over_wavelength > 0:
            raise ValueError("antenna spacing must be positive")

    def beam(self, q: int) -> np.ndarray:
        return codebook_beam(q, self)

    def beam_matrix(self) -> np.ndarray:
        """All beams as columns, shape (M, Q)."""
        m = np.arange(self.num_antennas)[:, None]
        q = np.arange(self.num_beams)[None, :]
        return np.exp(2j * np.pi * m * q / self.num_beams) / np.sqrt(self.num_antennas)


def steering_vector(aod_rad: float, m_antennas: int, spacing_over_wavelength: float = 0.5) -> np.ndarray:
    """ULA response [1, e^{j*2pi*d/lambda*sin(phi)}, ...] of length M."""
    if m_antennas < 1:
        raise ValueError(f"m_antennas must be >= 1, got {m_antennas}")
    if not abs(aod_rad) < HALF_PI:
        raise ValueError(f"aod_rad must lie strictly inside (-pi/2, pi/2), got {aod_rad}")
    phase = 2.0 * np.pi * spacing_over_wavelength * np.sin(aod_rad)
    return np.exp(1j * phase * np.arange(m_antennas))


def codebook_beam(q: int, cb: Codebook) -> np.ndarray:
    """The q-th DFT beam (1/sqrt(M)) [1, e^{j*2pi*q/Q}, ...], unit norm."""
    if not 0 <= q <= cb.num_beams - 1:
        raise IndexError(f"beam index {q} outside [0, {cb.num_beams - 1}]")
    m = np.arange(cb.num_antennas)
    return np.exp(2j * np.pi * m * q / cb.num_beams) / np.sqrt(cb.num_antennas)


def channel_vector(snap: ChannelSnapshot, m_antennas: int) -> np.ndarray:
    """Sum over paths of sqrt(1/loss) * gain * conj(steering(aod))."""
    h = np.zeros(m_antennas, dtype=np.complex128)
    for p in snap.paths:
        h += np.sqrt(1.0 / p.path_loss) * p.complex_gain * np.conj(
            steering_vector(p.aod_rad, m_antennas))
    return h


def beam_gain(h: np.ndarray, f: np.ndarray) -> float:
    """|h^T f|^2 with the unconjugated transpose product."""
    h = np.asarray(h)
    f = np.asarray(f)
    if h.shape != f.shape:
        raise ShapeError("beam_gain", f"vector lengths differ: {h.shape} vs {f.shape}")
    return float(np.abs(np.sum(h * f)) ** 2)


def beam_gains(h: np.ndarray, cb: Codebook) -> np.ndarray:
    """Gains of all Q beams for one channel vector."""
    h = np.asarray(h)
    if h.shape != (cb.num_antennas,):
        raise ShapeError("beam_gains", f"channel length {h.shape} != ({cb.num_antennas},)")
    return np.abs(h @ cb.beam_matrix()) ** 2


def optimal_beam(h: np.ndarray, cb: Codebook) -> int:
    """Index of the gain-maximizing beam; exact ties resolve to the lowest index."""
    return int(np.argmax(beam_gains(h, cb)))


def normalized_gain(h: np.ndarray, predicted_q: int, cb: Codebook) -> float:
    """Gain of the predicted beam over the best beam's gain, in [0, 1].

    An all-zero channel carries no information; its normalized gain is
    defined as 1.
    """
    if not 0 <= predicted_q <= cb.num_beams - 1:
        raise IndexError(f"beam index {predicted_q} outside [0, {cb.num_beams - 1}]")
    gains = beam_gains(h, cb)
    best = gains.max()
    if best == 0.0:
        return 1.0
    return float(gains[predicted_q] / best)
