"""Impulse control of a depleting resource under random observations and execution delays.

The state ``x`` in [0, 1] is depleted at a regime-dependent speed, observed at
Poisson times, and reset to 1 after an exponentially distributed delay once an
intervention is ordered.  The package provides the closed-form single-regime
solution, grid solvers for the value function and the stationary densities,
and a Monte-Carlo simulator for cross-checks.
"""

from __future__ import annotations

from .exact import (
    ExactPdf,
    ExactSingleRegime,
    ExactSolution,
    ergodic_threshold,
    eval_value,
    exact_stationary_pdf,
    solve_smooth_pasting,
)
from .exceptions import ConvergenceError, NoInteriorThreshold, SchemeViolation, ValidationError
from .fpe import CellGrid, DensityFields, FokkerPlanckSolver, PdfSummary, solve_fpe_stationary
from .hjbe import Grid, HJBESolver, Policy, ValueFields, extract_policy, solve_hjbe
from .markov import (
    RegimeChain,
    RegimePath,
    birth_death_chain,
    load_chain_csv,
    sample_regime_path,
    stationary_distribution,
    validate_chain,
)
from .model import HydraulicParams, ModelSpec, build_sediment_model, mpm_transport_rate
from .montecarlo import MonteCarloSimulator, SimConfig, estimate_cost, simulate_paths

__version__ = "0.1.0"

__all__ = [
    "CellGrid",
    "ConvergenceError",
    "DensityFields",
    "ExactPdf",
    "ExactSingleRegime",
    "ExactSolution",
    "FokkerPlanckSolver",
    "Grid",
    "HJBESolver",
    "HydraulicParams",
    "ModelSpec",
    "MonteCarloSimulator",
    "NoInteriorThreshold",
    "PdfSummary",
    "Policy",
    "RegimeChain",
    "RegimePath",
    "SchemeViolation",
    "SimConfig",
    "ValidationError",
    "ValueFields",
    "birth_death_chain",
    "build_sediment_model",
    "ergodic_threshold",
    "estimate_cost",
    "eval_value",
    "exact_stationary_pdf",
    "extract_policy",
    "load_chain_csv",
    "mpm_transport_rate",
    "sample_regime_path",
    "simulate_paths",
    "solve_fpe_stationary",
    "solve_hjbe",
    "solve_smooth_pasting",
    "stationary_distribution",
    "validate_chain",
]
