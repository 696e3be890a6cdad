"""Desk-scale mmWave beam prediction workbench.

Simulated multipath channels with a DFT-codebook beam oracle, a
reprogrammed frozen-backbone time-series forecaster with prompt
prefixes, persistence / linear / LSTM baselines, and a normalized-gain
evaluation harness, all behind scikit-learn style estimators.
"""

from .channel import (ChannelSnapshot, Codebook, PathComponent, beam_gain,
                      channel_vector, codebook_beam, normalized_gain,
                      optimal_beam, steering_vector)
from .estimators import (BeamForecaster, LinearExtrapolationPredictor,
                         LstmBeamPredictor, OraclePredictor, PersistencePredictor)
from .evaluation import EvalReport, closed_loop_track, evaluate, run_suite
from .model import ModelConfig
from .scenario import (TraceRecord, TrajectoryConfig, WindowedSample,
                       build_dataset, generate_trajectory, ingest_external_trace,
                       load_dataset, trace_from_trajectory, window_trace)
from .training import TrainConfig

__version__ = "0.1.0"

__all__ = [
    "BeamForecaster",
    "ChannelSnapshot",
    "Codebook",
    "EvalReport",
    "LinearExtrapolationPredictor",
    "LstmBeamPredictor",
    "ModelConfig",
    "OraclePredictor",
    "PathComponent",
    "PersistencePredictor",
    "TraceRecord",
    "TrainConfig",
    "TrajectoryConfig",
    "WindowedSample",
    "beam_gain",
    "build_dataset",
    "channel_vector",
    "closed_loop_track",
    "codebook_beam",
    "evaluate",
    "generate_trajectory",
    "ingest_external_trace",
    "load_dataset",
    "normalized_gain",
    "optimal_beam",
    "run_suite",
    "steering_vector",
    "trace_from_trajectory",
    "window_trace",
]
