"""Conservative cell-vertex finite-volume solver for the stationary densities.

Unknowns are cell averages of the non-waiting and waiting densities
``p_N[i, l]``, ``p_W[i, l]`` on the cells

    C_0 = [0, dx/2],  C_l = [(l - 1/2) dx, (l + 1/2) dx],  C_L = [1 - dx/2, 1].

Transport is leftward with upwind interface fluxes (optionally WENO
reconstructed away from the boundaries) and zero flux through both ends, so
mass piles up in ``C_0`` where the drift vanishes: that pile is the discrete
Dirac atom at the depleted state.  Executions re-inject the waiting mass
into ``C_L`` at rate ``mu``.

The waiting density is carried in every cell: after a regime switch a
pending execution stays pending even above the new regime's threshold.  With
one regime (or a common threshold) the waiting density vanishes above the
threshold cell automatically.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import _kernels
from .exceptions import ConvergenceError, SchemeViolation, ValidationError
from .hjbe import Policy, threshold_cell
from .markov import RegimeChain
from .model import ModelSpec
from .weno import weno_interface_values

logger = logging.getLogger(__name__)

__all__ = [
    "CellGrid",
    "DensityFields",
    "PdfSummary",
    "resetting_mass",
    "stability_bound",
    "fpe_step",
    "solve_fpe_stationary",
    "extract_boundary_weights",
    "FokkerPlanckSolver",
]

MASS_TOL = 1e-14
NEGATIVE_TOL = 1e-12


@dataclass(frozen=True)
class CellGrid:
    """Cells centred on the vertices ``l / L``, half cells at both ends."""

    n_intervals: int

    def __post_init__(self):
        if int(self.n_intervals) != self.n_intervals or self.n_intervals < 3:
            raise ValidationError("cell grid needs at least 3 intervals")

    @property
    def dx(self) -> float:
        return 1.0 / self.n_intervals

    @property
    def cell_count(self) -> int:
        return self.n_intervals + 1

    @property
    def centers(self) -> NDArray[np.float64]:
        return np.arange(self.cell_count) / self.n_intervals

    @property
    def sizes(self) -> NDArray[np.float64]:
        s = np.full(self.cell_count, self.dx)
        s[0] = s[-1] = 0.5 * self.dx
        return s

    @property
    def faces(self) -> NDArray[np.float64]:
        """Interior interfaces ``(l + 1/2) dx`` for ``l = 0..L-1``."""
        return (np.arange(self.n_intervals) + 0.5) / self.n_intervals


@dataclass
class DensityFields:
    """Cell averages, shape ``(regimes, L+1)``, plus per-regime threshold cells.

    ``active[i, l]`` marks cells where an observation triggers an
    intervention; for threshold policies it is the prefix ``0..l_i``.
    """

    p_N: NDArray[np.float64]
    p_W: NDArray[np.float64]
    grid: CellGrid
    active: NDArray[np.bool_]
    threshold_cells: list = field(default_factory=list)

    def total_mass(self) -> float:
        return float(np.sum(self.grid.sizes * (self.p_N + self.p_W)))

    def copy(self) -> "DensityFields":
        return DensityFields(self.p_N.copy(), self.p_W.copy(), self.grid, self.active, list(self.threshold_cells))


@dataclass
class PdfSummary:
    """Boundary masses and marginals of a stationary solution."""

    dirac_weight_N: NDArray[np.float64]
    dirac_weight_W: NDArray[np.float64]
    mass_at_one_N: NDArray[np.float64]
    mass_at_one_W: NDArray[np.float64]
    regime_marginals: NDArray[np.float64]
    waiting_mass: NDArray[np.float64]
    concentrated_at_zero: NDArray[np.bool_]

    @property
    def P0(self) -> float:
        return float(self.dirac_weight_N.sum() + self.dirac_weight_W.sum())

    @property
    def P1(self) -> float:
        return float(self.mass_at_one_N.sum() + self.mass_at_one_W.sum())

    def to_dict(self) -> dict:
        return {
            "dirac_weight_N": self.dirac_weight_N.tolist(),
            "dirac_weight_W": self.dirac_weight_W.tolist(),
            "mass_at_one_N": self.mass_at_one_N.tolist(),
            "mass_at_one_W": self.mass_at_one_W.tolist(),
            "regime_marginals": self.regime_marginals.tolist(),
            "waiting_mass": self.waiting_mass.tolist(),
            "concentrated_at_zero": self.concentrated_at_zero.tolist(),
            "P0": self.P0,
            "P1": self.P1,
            "P0_plus_P1": self.P0 + self.P1,
        }


def resetting_mass(fields: DensityFields, regime: int) -> float:
    """Total waiting mass ``c_i`` of one regime (cells ``0..l_i`` when that bounds the support)."""
    sizes = fields.grid.sizes
    if fields.threshold_cells and fields.threshold_cells[regime] is not None:
        li = fields.threshold_cells[regime]
        if li >= -1 and not np.any(fields.p_W[regime, li + 1 :]):
            return float(np.sum(sizes[: li + 1] * fields.p_W[regime, : li + 1]))
    return float(np.sum(sizes * fields.p_W[regime]))


def stability_bound(model: ModelSpec, chain: RegimeChain, grid: CellGrid) -> float:
    """Largest step keeping every explicit update a non-negative combination.

    The diagonal coefficient of the update in a cell is at most
    ``S_max / |C_min| + lam + mu + max exit rate``; half of its inverse is
    returned as the admissible step.
    """
    rate = model.max_speed / grid.sizes.min() + model.lam + model.mu + float(chain.exit_rates.max())
    return 0.5 / rate


def _speed_faces(model: ModelSpec, grid: CellGrid) -> NDArray[np.float64]:
    R = model.regime_count
    faces = grid.faces
    return model.speed(np.repeat(np.arange(R)[:, None], faces.size, axis=1), faces[None, :])


def _activation(policy: Policy, grid: CellGrid, regime_count: int):
    if policy.regime_count != regime_count:
        raise ValidationError("policy and model disagree on the regime count")
    active = policy.cell_activation(grid.n_intervals)
    cells = [threshold_cell(t, grid.n_intervals) if p else None for t, p in zip(policy.thresholds, policy.prefix)]
    return active, cells


def fpe_step(
    fields: DensityFields,
    model: ModelSpec,
    chain: RegimeChain,
    dt: float,
    reconstruction: str = "weno",
) -> DensityFields:
    """One explicit conservative step (vectorized reference implementation).

    Raises :class:`SchemeViolation` on non-finite or negative densities and
    when the step changes the total mass by more than 1e-14.
    """
    if reconstruction not in ("upwind", "weno"):
        raise ValidationError(f"unknown reconstruction {reconstruction!r}")
    if not dt > 0:
        raise ValidationError("time step must be positive")
    grid = fields.grid
    sizes = grid.sizes
    pn, pw = fields.p_N, fields.p_W
    speed = _speed_faces(model, grid)
    if reconstruction == "weno":
        vn, vw = weno_interface_values(pn), weno_interface_values(pw)
    else:
        vn, vw = pn[:, 1:], pw[:, 1:]
    zero = np.zeros((pn.shape[0], 1))
    fn = np.concatenate([zero, -speed * vn, zero], axis=1)
    fw = np.concatenate([zero, -speed * vw, zero], axis=1)
    div_n = (fn[:, 1:] - fn[:, :-1]) / sizes
    div_w = (fw[:, 1:] - fw[:, :-1]) / sizes
    nu = chain.rates
    out_rate = chain.exit_rates[:, None]
    act = fields.active
    observe = model.lam * pn * act
    cw = np.sum(sizes * pw, axis=1)
    reset = np.zeros_like(pn)
    reset[:, -1] = model.mu * cw / sizes[-1]
    rn = div_n + observe + out_rate * pn - nu.T @ pn - reset
    rw = div_w + (model.mu + out_rate) * pw - observe - nu.T @ pw
    new = DensityFields(pn - dt * rn, pw - dt * rw, grid, act, list(fields.threshold_cells))
    if not (np.all(np.isfinite(new.p_N)) and np.all(np.isfinite(new.p_W))):
        raise SchemeViolation("non-finite density after step")
    lowest = min(new.p_N.min(), new.p_W.min())
    if lowest < -NEGATIVE_TOL:
        raise SchemeViolation(f"negative density {lowest:.3e} after step")
    before, after = _exact_mass(fields), _exact_mass(new)
    if abs(after - before) > MASS_TOL * max(1.0, abs(before)):
        raise SchemeViolation(f"step changed the total mass by {after - before:.3e}")
    return new


def _exact_mass(fields: DensityFields) -> float:
    sizes = fields.grid.sizes
    return math.fsum((sizes * fields.p_N).ravel()) + math.fsum((sizes * fields.p_W).ravel())


def initial_density(model: ModelSpec, policy: Policy, grid: CellGrid) -> DensityFields:
    """Uniform density over every admissible (regime, phase, cell), total mass 1.

    Waiting cells are admissible only where the regime's policy is active.
    """
    active, cells = _activation(policy, grid, model.regime_count)
    pn = np.ones((model.regime_count, grid.cell_count))
    pw = active.astype(np.float64)
    f = DensityFields(pn, pw, grid, active, cells)
    m = f.total_mass()
    f.p_N /= m
    f.p_W /= m
    return f


def extract_boundary_weights(fields: DensityFields, grid: CellGrid | None = None) -> PdfSummary:
    """Boundary masses from the end cells: ``cell average x |C|``.

    ``concentrated_at_zero`` flags regimes whose mass in ``C_0`` exceeds twice
    what the neighbouring interior average would put there, i.e. where the
    end cell holds an atom rather than a smooth density.
    """
    grid = fields.grid if grid is None else grid
    sizes = grid.sizes
    w0N = fields.p_N[:, 0] * sizes[0]
    w0W = fields.p_W[:, 0] * sizes[0]
    w1N = fields.p_N[:, -1] * sizes[-1]
    w1W = fields.p_W[:, -1] * sizes[-1]
    marg = np.sum(sizes * (fields.p_N + fields.p_W), axis=1)
    waiting = np.sum(sizes * fields.p_W, axis=1)
    interior = fields.p_N[:, 1] + fields.p_W[:, 1]
    concentrated = (w0N + w0W) > 2.0 * sizes[0] * interior
    return PdfSummary(w0N, w0W, w1N, w1W, marg, waiting, concentrated)


def solve_fpe_stationary(
    model: ModelSpec,
    chain: RegimeChain | None,
    policy: Policy,
    grid: CellGrid,
    dt: float | None = None,
    reconstruction: str = "weno",
    tol: float = 1e-14,
    max_iter: int = 50_000_000,
    initial: DensityFields | None = None,
    record_every: int = 1000,
):
    """March the densities in pseudo-time until stationary.

    ``dt`` defaults to ``5 dx^{1.5}``, capped at :func:`stability_bound`.
    Raises :class:`SchemeViolation` if any step changes the total mass by
    more than 1e-14 or produces densities below -1e-12; slightly negative
    values above that bound are clipped at the end and the clipped mass is
    logged.

    Returns ``(fields, summary, info)``; ``info`` holds the iteration count,
    step size, largest per-step mass change and residual history.
    """
    chain = RegimeChain.single() if chain is None else chain
    chain.check()
    if chain.regime_count != model.regime_count:
        raise ValidationError("chain and model disagree on the regime count")
    if reconstruction not in ("upwind", "weno"):
        raise ValidationError(f"unknown reconstruction {reconstruction!r}")
    bound = stability_bound(model, chain, grid)
    if dt is None:
        dt = min(5.0 * grid.dx ** 1.5, bound)
    elif dt > bound:
        raise ValidationError(f"time step {dt:.3e} exceeds the stability bound {bound:.3e}")
    if initial is None:
        initial = initial_density(model, policy, grid)
    else:
        active, cells = _activation(policy, grid, model.regime_count)
        initial = DensityFields(initial.p_N.copy(), initial.p_W.copy(), grid, active, cells)
    pn, pw, it, history, status, drift, lowest = _kernels.fpe_iterate(
        initial.p_N.copy(),
        initial.p_W.copy(),
        initial.active,
        np.ascontiguousarray(_speed_faces(model, grid)),
        grid.sizes,
        np.ascontiguousarray(chain.rates),
        chain.exit_rates,
        model.lam,
        model.mu,
        float(dt),
        reconstruction == "weno",
        float(tol),
        int(max_iter),
        int(record_every),
    )
    history = history.tolist()
    if status == 2:
        raise SchemeViolation(f"non-finite density at iteration {it}")
    if drift > MASS_TOL:
        raise SchemeViolation(f"a step changed the total mass by {drift:.3e}")
    if lowest < -NEGATIVE_TOL:
        raise SchemeViolation(f"negative density {lowest:.3e} produced by the scheme")
    if status == 1:
        raise ConvergenceError(f"FPE did not converge in {max_iter} iterations", history)
    fields = DensityFields(pn, pw, grid, initial.active, initial.threshold_cells)
    clipped = float(np.sum(grid.sizes * (np.minimum(pn, 0.0) + np.minimum(pw, 0.0))))
    if clipped < 0:
        logger.info("clipping %.3e of negative mass and renormalizing", -clipped)
        mass = fields.total_mass()
        np.maximum(fields.p_N, 0.0, out=fields.p_N)
        np.maximum(fields.p_W, 0.0, out=fields.p_W)
        scale = mass / fields.total_mass()
        fields.p_N *= scale
        fields.p_W *= scale
    info = {"iterations": int(it), "dt": float(dt), "max_step_mass_change": float(drift), "residual_history": history}
    return fields, extract_boundary_weights(fields), info


class FokkerPlanckSolver(BaseEstimator):
    """Estimator front end for :func:`solve_fpe_stationary`.

    ``fit(model, chain, policy)`` computes the stationary densities;
    ``transform(x)`` then returns, for points ``x``, the cell averages of
    ``p_N`` and ``p_W`` of the containing cells, shape ``(regimes, 2, n)``.
    """

    def __init__(self, n_intervals=50, reconstruction="weno", dt=None, tol=1e-14, max_iter=50_000_000):
        self.n_intervals = n_intervals
        self.reconstruction = reconstruction
        self.dt = dt
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, model: ModelSpec, chain: RegimeChain | None = None, policy: Policy | None = None):
        if policy is None:
            raise ValidationError("policy required")
        grid = CellGrid(self.n_intervals)
        fields, summary, info = solve_fpe_stationary(
            model, chain, policy, grid, dt=self.dt, reconstruction=self.reconstruction, tol=self.tol, max_iter=self.max_iter
        )
        self.grid_ = grid
        self.density_ = fields
        self.summary_ = summary
        self.n_iter_ = info["iterations"]
        self.info_ = info
        return self

    def transform(self, x):
        if not hasattr(self, "density_"):
            raise NotFittedError("FokkerPlanckSolver is not fitted yet")
        x = np.asarray(x, dtype=np.float64)
        if np.any((x < 0) | (x > 1)):
            raise ValidationError("x must lie in [0, 1]")
        cell = np.clip(np.floor(x * self.grid_.n_intervals + 0.5).astype(np.int64), 0, self.grid_.n_intervals)
        return np.stack([self.density_.p_N[:, cell], self.density_.p_W[:, cell]], axis=1)
