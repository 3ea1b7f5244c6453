"""Pseudo-time semi-Lagrangian solver for the coupled value/post-decision system.

For each regime ``i`` the pair ``(Phi_i, Phi_hat_i)`` is marched in an
artificial time until stationary.  The transport part ``S d/dx`` is
integrated along characteristics (value at the foot point
``max(0, x - S dt)``, interpolated with WENO); discounting, regime
switching, the observation/intervention comparison and the sources are
explicit Euler terms evaluated at the vertex with the previous iterate.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .exceptions import ConvergenceError, SchemeViolation, ValidationError
from . import _kernels
from .markov import RegimeChain
from .model import ModelSpec
from .weno import InterpolationPlan

logger = logging.getLogger(__name__)

__all__ = [
    "Grid",
    "ValueFields",
    "Policy",
    "default_time_step",
    "hjbe_pseudo_step",
    "solve_hjbe",
    "extract_policy",
    "HJBESolver",
]


@dataclass(frozen=True)
class Grid:
    """Uniform vertex grid ``x_l = l / L`` on [0, 1]."""

    n_intervals: int

    def __post_init__(self):
        if int(self.n_intervals) != self.n_intervals or self.n_intervals < 3:
            raise ValidationError("grid needs at least 3 intervals")

    @property
    def dx(self) -> float:
        return 1.0 / self.n_intervals

    @property
    def x(self) -> NDArray[np.float64]:
        return np.arange(self.n_intervals + 1) / self.n_intervals

    @property
    def vertex_count(self) -> int:
        return self.n_intervals + 1


@dataclass
class ValueFields:
    """Vertex samples of ``Phi_i`` and ``Phi_hat_i``, shape ``(regimes, L+1)``."""

    phi: NDArray[np.float64]
    phi_hat: NDArray[np.float64]
    grid: Grid

    @classmethod
    def zeros(cls, regime_count: int, grid: Grid) -> "ValueFields":
        shape = (regime_count, grid.vertex_count)
        return cls(np.zeros(shape), np.zeros(shape), grid)


@dataclass
class Policy:
    """Per-regime intervention rule.

    Regimes whose activation set is a prefix ``{0..l*}`` of the vertices are
    described by a threshold (``x <= threshold`` triggers an intervention);
    ``None`` means the regime never intervenes.  Other regimes keep their
    vertex-wise activation and decide by the nearest vertex.
    """

    thresholds: list
    activation: NDArray[np.bool_] | None = None
    prefix: list = field(default=None)

    def __post_init__(self):
        self.thresholds = [None if t is None else float(t) for t in self.thresholds]
        if self.prefix is None:
            self.prefix = [True] * len(self.thresholds)
        if self.activation is not None:
            self.activation = np.asarray(self.activation, dtype=bool)
            if self.activation.shape[0] != len(self.thresholds):
                raise ValidationError("activation rows must match the regime count")
        if not all(self.prefix) and self.activation is None:
            raise ValidationError("non-threshold regimes need an activation table")
        for t in self.thresholds:
            if t is not None and not 0.0 <= t <= 1.0:
                raise ValidationError(f"threshold {t} outside [0, 1]")

    @classmethod
    def from_thresholds(cls, thresholds) -> "Policy":
        return cls(list(thresholds))

    @property
    def mode(self) -> str:
        return "threshold" if all(self.prefix) else "activation-set"

    @property
    def regime_count(self) -> int:
        return len(self.thresholds)

    def decide(self, regime, x) -> NDArray[np.bool_]:
        """Whether an observation of ``(regime, x)`` triggers an intervention."""
        regime = np.asarray(regime, dtype=np.int64)
        x = np.asarray(x, dtype=np.float64)
        regime, x = np.broadcast_arrays(regime, x)
        thr = np.array([-1.0 if t is None else t for t in self.thresholds])
        out = x <= thr[regime]
        if not all(self.prefix):
            L = self.activation.shape[1] - 1
            nearest = np.clip(np.rint(x * L).astype(np.int64), 0, L)
            table = self.activation[regime, nearest]
            use_table = ~np.asarray(self.prefix)[regime]
            out = np.where(use_table, table, out)
        return out

    def cell_activation(self, n_intervals: int) -> NDArray[np.bool_]:
        """Activation of the cells centred at ``l / L`` for an FPE grid.

        Threshold regimes activate cells ``0..l_i`` where ``l_i`` is the last
        vertex not exceeding the threshold (none when no threshold).
        """
        L = int(n_intervals)
        out = np.zeros((self.regime_count, L + 1), dtype=bool)
        for i, t in enumerate(self.thresholds):
            if self.prefix[i]:
                li = threshold_cell(t, L)
                out[i, : li + 1] = True
            else:
                out[i] = self.decide(np.full(L + 1, i), np.arange(L + 1) / L)
        return out

    def to_dict(self) -> dict:
        out = {"mode": self.mode, "thresholds": self.thresholds, "prefix": list(self.prefix)}
        if self.activation is not None:
            out["activation"] = self.activation.astype(int).tolist()
            out["activation_runs"] = [_runs(a) for a in self.activation]
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "Policy":
        act = data.get("activation")
        return cls(
            thresholds=list(data["thresholds"]),
            activation=None if act is None else np.asarray(act, dtype=bool),
            prefix=data.get("prefix"),
        )


def _runs(active) -> list:
    """Index ranges ``[start, stop]`` of consecutive active vertices."""
    idx = np.flatnonzero(active)
    if idx.size == 0:
        return []
    breaks = np.flatnonzero(np.diff(idx) > 1)
    starts = np.concatenate(([idx[0]], idx[breaks + 1]))
    stops = np.concatenate((idx[breaks], [idx[-1]]))
    return [[int(a), int(b)] for a, b in zip(starts, stops)]


def threshold_cell(threshold, n_intervals: int) -> int:
    """Index of the last vertex ``l / L`` not exceeding ``threshold``; -1 for none.

    Cells are centred on vertices, so cells ``0..l`` are the ones whose
    vertex lies in the intervention region ``x <= threshold``.
    """
    if threshold is None:
        return -1
    L = int(n_intervals)
    return int(min(L, np.floor(threshold * L + 1e-9)))


def default_time_step(grid: Grid) -> float:
    """Pseudo-time step ``5 dx^{1.5}``."""
    return 5.0 * grid.dx ** 1.5


class _Stepper:
    """Fixed operators for one (model, chain, grid, dt) combination."""

    def __init__(self, model: ModelSpec, chain: RegimeChain, grid: Grid, dt: float, interpolation="weno"):
        if chain.regime_count != model.regime_count:
            raise ValidationError("chain and model disagree on the regime count")
        if not dt > 0:
            raise ValidationError("time step must be positive")
        self.model, self.chain, self.grid, self.dt = model, chain, grid, float(dt)
        x = grid.x
        R = model.regime_count
        regimes = np.repeat(np.arange(R)[:, None], grid.vertex_count, axis=1)
        speed = model.speed(regimes, x[None, :])
        foot = np.maximum(0.0, x[None, :] - speed * dt)
        self.plan = InterpolationPlan(grid.n_intervals, foot, method=interpolation)
        self.source = np.zeros(grid.vertex_count)
        self.source[0] = 1.0
        self.cost = model.mu * (model.c * (1.0 - x) + model.d)
        self.nu = chain.rates
        self.exit = chain.exit_rates[:, None]
        self.switching = bool(np.any(self.nu > 0))

    def _couple(self, f):
        if not self.switching:
            return 0.0
        return self.exit * f - self.nu @ f

    def step(self, phi, phi_hat):
        m, dt = self.model, self.dt
        foot_phi = self.plan(phi)
        foot_hat = self.plan(phi_hat)
        low = np.minimum(phi, phi_hat)
        new_phi = foot_phi - dt * (
            m.delta * phi + self._couple(phi) + m.lam * (phi - low) - self.source
        )
        new_hat = foot_hat - dt * (
            (m.mu + m.delta) * phi_hat
            + self._couple(phi_hat)
            - self.source
            - self.cost
            - m.mu * phi[:, -1:]
        )
        return new_phi, new_hat


def hjbe_pseudo_step(
    state: ValueFields, model: ModelSpec, chain: RegimeChain, grid: Grid, dt: float, interpolation="weno"
) -> ValueFields:
    """One explicit pseudo-time step from ``state``; both fields read the old iterate."""
    phi, hat = _Stepper(model, chain, grid, dt, interpolation).step(state.phi, state.phi_hat)
    if not (np.all(np.isfinite(phi)) and np.all(np.isfinite(hat))):
        raise SchemeViolation("non-finite value after pseudo-time step")
    return ValueFields(phi, hat, grid)


def solve_hjbe(
    model: ModelSpec,
    chain: RegimeChain | None,
    grid: Grid,
    dt: float | None = None,
    tol: float = 1e-14,
    max_iter: int = 10_000_000,
    interpolation: str = "weno",
    initial: ValueFields | None = None,
    record_every: int = 100,
) -> tuple[ValueFields, int, list]:
    """March the pseudo-time system from zero data to a stationary state.

    Stops when the max-norm change of both fields over one step is at most
    ``tol``.  Returns ``(fields, iterations, residual_history)`` where the
    history samples the step change every ``record_every`` iterations.
    """
    chain = RegimeChain.single() if chain is None else chain
    chain.check()
    if not tol > 0:
        raise ValidationError("tolerance must be positive")
    dt = default_time_step(grid) if dt is None else float(dt)
    stepper = _Stepper(model, chain, grid, dt, interpolation)
    if initial is None:
        phi = np.zeros((model.regime_count, grid.vertex_count))
        hat = np.zeros_like(phi)
    else:
        phi, hat = initial.phi.copy(), initial.phi_hat.copy()
    plan = stepper.plan
    shape = phi.shape
    edge = np.zeros(plan.j.size, dtype=np.bool_)
    edge[plan.edge] = True
    phi, hat, it, history, ok = _kernels.hjbe_iterate(
        phi,
        hat,
        plan.j.reshape(shape),
        plan.s.reshape(shape),
        edge.reshape(shape),
        np.ascontiguousarray(chain.rates),
        chain.exit_rates,
        stepper.cost,
        model.delta,
        model.lam,
        model.mu,
        dt,
        tol,
        int(max_iter),
        int(record_every),
    )
    history = history.tolist()
    if not (np.all(np.isfinite(phi)) and np.all(np.isfinite(hat))):
        raise SchemeViolation(f"non-finite values at pseudo-time iteration {it}")
    if not ok:
        raise ConvergenceError(f"HJBE did not converge in {max_iter} iterations", history)
    logger.debug("HJBE converged after %d iterations", it)
    return ValueFields(phi, hat, grid), int(it), history


def extract_policy(fields: ValueFields, grid: Grid | None = None) -> Policy:
    """Read the intervention rule ``Phi_i >= Phi_hat_i`` off converged fields.

    A prefix activation set ``{0..l*}`` becomes the threshold at the midpoint
    of ``x_{l*}`` and ``x_{l*+1}`` (1 when every vertex is active); an empty
    set means never intervene.
    """
    grid = fields.grid if grid is None else grid
    active = fields.phi >= fields.phi_hat
    x = grid.x
    thresholds, prefix = [], []
    for row in active:
        n_on = int(row.sum())
        if n_on == 0:
            thresholds.append(None)
            prefix.append(True)
        elif row[:n_on].all():
            thresholds.append(1.0 if n_on == row.size else 0.5 * (x[n_on - 1] + x[n_on]))
            prefix.append(True)
        else:
            thresholds.append(None)
            prefix.append(False)
    return Policy(thresholds, activation=active, prefix=prefix)


class HJBESolver(BaseEstimator):
    """Estimator front end for :func:`solve_hjbe`.

    ``fit(model, chain)`` computes the value fields and the optimal policy;
    ``predict(X)`` with rows ``(regime, x)`` returns intervention decisions.

    Parameters
    ----------
    n_intervals : int
        Number of grid intervals ``L``.
    dt : float or None
        Pseudo-time step; ``None`` uses ``5 dx^{1.5}``.
    tol : float
        Stopping tolerance on the per-step max-norm change.
    max_iter : int
    interpolation : {"weno", "linear"}
    """

    def __init__(self, n_intervals=50, dt=None, tol=1e-14, max_iter=10_000_000, interpolation="weno"):
        self.n_intervals = n_intervals
        self.dt = dt
        self.tol = tol
        self.max_iter = max_iter
        self.interpolation = interpolation

    def fit(self, model: ModelSpec, chain: RegimeChain | None = None):
        grid = Grid(self.n_intervals)
        fields, n_iter, history = solve_hjbe(
            model, chain, grid, dt=self.dt, tol=self.tol, max_iter=self.max_iter, interpolation=self.interpolation
        )
        self.grid_ = grid
        self.value_fields_ = fields
        self.n_iter_ = n_iter
        self.residual_history_ = history
        self.policy_ = extract_policy(fields, grid)
        return self

    def _check_fitted(self):
        if not hasattr(self, "policy_"):
            raise NotFittedError("HJBESolver is not fitted yet")

    def predict(self, X) -> NDArray[np.bool_]:
        self._check_fitted()
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != 2:
            raise ValidationError("X must have columns (regime, x)")
        return self.policy_.decide(X[:, 0].astype(np.int64), X[:, 1])

    def value(self, regime: int, x):
        """WENO-interpolated ``(Phi, Phi_hat)`` of one regime at points ``x``."""
        self._check_fitted()
        plan = InterpolationPlan(self.grid_.n_intervals, x, method=self.interpolation)
        return plan(self.value_fields_.phi[regime]), plan(self.value_fields_.phi_hat[regime])
