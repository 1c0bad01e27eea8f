"""Decentralized SGD with pairwise-correlated privacy noise: accounting, calibration and simulation."""

from __future__ import annotations

from .accountant import (
    AdversaryModel,
    Calibration,
    NoiseConfig,
    PrivacyReport,
    calibrate_binary_search,
    calibrate_closed_form,
    cdp_sigma,
    compose_and_convert,
    ldp_sigma,
    per_step_budget,
    privacy_report,
    step_epsilon_bound,
    step_epsilon_exact,
)
from .engine import MetricsTrace, SimState, TrainConfig, decor_step, run
from .errors import DecorError
from .graph import (
    Graph,
    MixingMatrix,
    algebraic_connectivity,
    build_topology,
    metropolis_weights,
    parse_topology,
    spectral_gap,
    weight_heterogeneity,
)
from .problems import logistic_problem, parse_libsvm, partition, synthetic_least_squares

__version__ = "0.1.0"
