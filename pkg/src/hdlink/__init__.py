"""Simulation and analysis toolkit for high-dimensional path-encoded entanglement
distributed between photonic chips."""

from .bases import MUBSet, OperatorSet, gellmann_ops, measurement_counts, mub_set, verify_two_mode_support
from .channel import ChannelState, DriftModel, apply_channel, drift_preset, step_drift
from .core import BipartiteState, DensityMatrix, PureState, entanglement_entropy, fidelity, partial_trace
from .source import SourceConfig, prepare_bell_like
from .stabiliser import (
    FitPriors,
    FringeFit,
    StabilisationPlan,
    TimingBudget,
    build_plan,
    error_scaling_study,
    fit_fringe,
    infer_offsets,
    run_session,
)
from .tomography import (
    CountsRecord,
    TomographyResult,
    dimension_witness,
    linear_reconstruct,
    monte_carlo_errors,
    physical_estimate,
    reconstruct,
    simulate_counts,
)

__version__ = "0.1.0"

__all__ = [
    "MUBSet",
    "OperatorSet",
    "gellmann_ops",
    "measurement_counts",
    "mub_set",
    "verify_two_mode_support",
    "ChannelState",
    "DriftModel",
    "apply_channel",
    "drift_preset",
    "step_drift",
    "BipartiteState",
    "DensityMatrix",
    "PureState",
    "entanglement_entropy",
    "fidelity",
    "partial_trace",
    "SourceConfig",
    "prepare_bell_like",
    "FitPriors",
    "FringeFit",
    "StabilisationPlan",
    "TimingBudget",
    "build_plan",
    "error_scaling_study",
    "fit_fringe",
    "infer_offsets",
    "run_session",
    "CountsRecord",
    "TomographyResult",
    "dimension_witness",
    "linear_reconstruct",
    "monte_carlo_errors",
    "physical_estimate",
    "reconstruct",
    "simulate_counts",
]
