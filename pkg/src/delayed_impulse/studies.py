"""Grid-refinement study for the single-regime problem and the delay sweep."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .exact import eval_value, exact_stationary_pdf, solve_smooth_pasting
from .exceptions import ValidationError
from .fpe import CellGrid, PdfSummary, solve_fpe_stationary
from .hjbe import Grid, Policy, extract_policy, solve_hjbe
from .markov import RegimeChain
from .model import ModelSpec

logger = logging.getLogger(__name__)

__all__ = [
    "observed_rates",
    "hjbe_error",
    "fpe_errors",
    "ConvergenceTables",
    "convergence_study",
    "PipelineResult",
    "run_pipeline",
    "mu_sweep",
]


def observed_rates(errors) -> list:
    """``log2(e_k / e_{k+1})`` for successive resolutions doubling the grid."""
    e = np.asarray(errors, dtype=np.float64)
    return [float(np.log2(a / b)) for a, b in zip(e[:-1], e[1:])]


def hjbe_error(model: ModelSpec, n_intervals: int, exact=None, **solver_kw):
    """Solve the HJBE on ``L = n_intervals`` and compare with the closed form.

    Returns ``(linf_error, computed_threshold, threshold_error, iterations)``.
    """
    exact = solve_smooth_pasting(model) if exact is None else exact
    grid = Grid(n_intervals)
    fields, it, _ = solve_hjbe(model, None, grid, **solver_kw)
    err = float(np.max(np.abs(fields.phi[0] - eval_value(grid.x, exact)[0])))
    thr = extract_policy(fields, grid).thresholds[0]
    thr_err = float("nan") if thr is None else abs(thr - exact.threshold)
    return err, thr, thr_err, it


def fpe_errors(model: ModelSpec, n_intervals: int, threshold: float, reconstruction: str = "weno", **solver_kw):
    """Stationary FPE at a fixed threshold against the closed-form density.

    The pointwise error is taken over the cell centres ``x_l``, ``l >= 1``
    (the cell at 0 carries the atom); the density at 1 is the left limit.
    Returns ``(linf_error, dirac_error_N, dirac_error_W, summary)``.
    """
    S = model.speeds[0]
    pdf = exact_stationary_pdf(model.lam, model.mu, S, threshold)
    grid = CellGrid(n_intervals)
    fields, summary, _ = solve_fpe_stationary(
        model, None, Policy.from_thresholds([threshold]), grid, reconstruction=reconstruction, **solver_kw
    )
    x = grid.centers[1:]
    err = max(
        float(np.max(np.abs(fields.p_N[0, 1:] - pdf.density_N(x)))),
        float(np.max(np.abs(fields.p_W[0, 1:] - pdf.density_W(x)))),
    )
    return (
        err,
        abs(float(summary.dirac_weight_N[0]) - pdf.dirac_weight_N),
        abs(float(summary.dirac_weight_W[0]) - pdf.dirac_weight_W),
        summary,
    )


@dataclass
class ConvergenceTables:
    """Rows of the four refinement tables (one entry per resolution)."""

    resolutions: list
    intervals: list
    hjbe_errors: list = field(default_factory=list)
    thresholds: list = field(default_factory=list)
    threshold_errors: list = field(default_factory=list)
    fpe_errors: list = field(default_factory=list)
    dirac_errors_N: list = field(default_factory=list)
    dirac_errors_W: list = field(default_factory=list)
    exact_threshold: float = math.nan

    @property
    def hjbe_rates(self) -> list:
        return observed_rates(self.hjbe_errors)

    @property
    def fpe_rates(self) -> list:
        return observed_rates(self.fpe_errors)

    def table_rows(self) -> dict:
        """CSV-ready rows keyed by table name; the last rate column is blank."""
        hr = self.hjbe_rates + [None]
        fr = self.fpe_rates + [None]
        return {
            "table1_hjbe_error": (
                ["n", "L", "linf_error", "rate"],
                [[n, L, e, r] for n, L, e, r in zip(self.resolutions, self.intervals, self.hjbe_errors, hr)],
            ),
            "table2_threshold": (
                ["n", "L", "computed_threshold", "error"],
                [[n, L, t, e] for n, L, t, e in zip(self.resolutions, self.intervals, self.thresholds, self.threshold_errors)],
            ),
            "table3_fpe_error": (
                ["n", "L", "linf_error", "rate"],
                [[n, L, e, r] for n, L, e, r in zip(self.resolutions, self.intervals, self.fpe_errors, fr)],
            ),
            "table4_dirac_error": (
                ["n", "L", "non_waiting_error", "waiting_error"],
                [[n, L, a, b] for n, L, a, b in zip(self.resolutions, self.intervals, self.dirac_errors_N, self.dirac_errors_W)],
            ),
        }


def convergence_study(
    model: ModelSpec,
    resolutions=(1, 2, 4, 8, 16),
    base_intervals: int = 50,
    interpolation: str = "weno",
    reconstruction: str = "weno",
) -> ConvergenceTables:
    """HJBE and FPE errors on ``L = base_intervals * n`` against the closed forms.

    The FPE runs at the exact optimal threshold so that its error isolates
    the density discretization.
    """
    if model.regime_count != 1:
        raise ValidationError("the refinement study needs a single-regime model")
    exact = solve_smooth_pasting(model)
    intervals = [base_intervals * int(n) for n in resolutions]
    tables = ConvergenceTables(list(resolutions), intervals, exact_threshold=exact.threshold)
    for n, L in zip(resolutions, intervals):
        e, t, te, it = hjbe_error(model, L, exact, interpolation=interpolation)
        fe, dn, dw, _ = fpe_errors(model, L, exact.threshold, reconstruction=reconstruction)
        logger.info("n=%d: hjbe %.3e (%d iterations), threshold %s, fpe %.3e", n, e, it, t, fe)
        tables.hjbe_errors.append(e)
        tables.thresholds.append(t)
        tables.threshold_errors.append(te)
        tables.fpe_errors.append(fe)
        tables.dirac_errors_N.append(dn)
        tables.dirac_errors_W.append(dw)
    return tables


@dataclass
class PipelineResult:
    """Value fields, extracted policy and stationary densities for one model."""

    model: ModelSpec
    policy: Policy
    value_fields: object
    hjbe_iterations: int
    density: object
    summary: PdfSummary
    fpe_info: dict


def run_pipeline(
    model: ModelSpec,
    chain: RegimeChain,
    hjbe_intervals: int = 50,
    fpe_intervals: int = 50,
    interpolation: str = "weno",
    reconstruction: str = "weno",
    hjbe_kw: dict | None = None,
    fpe_kw: dict | None = None,
) -> PipelineResult:
    """HJBE -> policy -> stationary FPE."""
    grid = Grid(hjbe_intervals)
    fields, it, _ = solve_hjbe(model, chain, grid, interpolation=interpolation, **(hjbe_kw or {}))
    policy = extract_policy(fields, grid)
    dens, summary, info = solve_fpe_stationary(
        model, chain, policy, CellGrid(fpe_intervals), reconstruction=reconstruction, **(fpe_kw or {})
    )
    return PipelineResult(model, policy, fields, it, dens, summary, info)


def mu_sweep(model: ModelSpec, chain: RegimeChain, mus, **pipeline_kw) -> list:
    """Run :func:`run_pipeline` for each delay rate in ``mus``."""
    return [run_pipeline(model.with_(mu=float(mu)), chain, **pipeline_kw) for mu in mus]
