"""Monte-Carlo simulation of the observed, delayed impulse-controlled dynamics.

Each path alternates between the non-waiting phase, where observations
arrive at rate ``lam`` and the policy decides whether to order an
intervention, and the waiting phase, which ends after an ``Exp(mu)`` delay
with the state reset to 1.  The next observation is scheduled ``Exp(lam)``
after an execution or a decision not to intervene, so no decisions happen
while an order is pending.

Paths are split into fixed-size chunks.  Every chunk has its own seed
derived from the configuration seed, so results do not depend on how the
chunks are scheduled, and chunk-level estimates double as batch means for
the standard errors.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from joblib import Parallel, delayed
from numpy.typing import NDArray
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import _kernels
from .exceptions import ValidationError
from .hjbe import Policy
from .markov import RegimeChain, stationary_distribution
from .model import ModelSpec

__all__ = [
    "SimConfig",
    "SimulationResult",
    "CostEstimate",
    "Trajectory",
    "cost_horizon",
    "simulate_paths",
    "estimate_cost",
    "simulate_trajectory",
    "MonteCarloSimulator",
]


@dataclass(frozen=True)
class SimConfig:
    """Simulation settings.

    Parameters
    ----------
    path_count : int
        Number of independent paths.
    dt : float
        Euler step for state-dependent speeds; constant speeds are integrated
        exactly and only use ``dt`` for validation.
    horizon : float
        Simulated time per path for stationary statistics.
    burn_in : float
        Fraction of ``horizon`` discarded before inspections start.
    bin_width : float
        Histogram bin width; must divide 1.
    rng_seed : int
    inspection_rate : float
        Rate of the Poisson inspection times.
    chunk_size : int
        Paths per chunk (one batch for the batch-means errors).
    n_jobs : int
        Worker processes for the chunks.
    """

    path_count: int = 100_000
    dt: float = 0.0025
    horizon: float = 500.0
    burn_in: float = 0.2
    bin_width: float = 1.0 / 200.0
    rng_seed: int = 0
    inspection_rate: float = 1.0
    chunk_size: int = 1_000
    n_jobs: int = 1

    def __post_init__(self):
        if int(self.path_count) != self.path_count or self.path_count < 1:
            raise ValidationError("path_count must be a positive integer")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValidationError("dt must be positive")
        if not (self.horizon > 0 and math.isfinite(self.horizon)):
            raise ValidationError("horizon must be positive")
        if not 0 <= self.burn_in < 1:
            raise ValidationError("burn_in must be a fraction in [0, 1)")
        if not self.bin_width > 0 or abs(1.0 / self.bin_width - round(1.0 / self.bin_width)) > 1e-9:
            raise ValidationError("bin_width must divide 1 evenly")
        if not self.inspection_rate > 0:
            raise ValidationError("inspection_rate must be positive")
        if int(self.chunk_size) != self.chunk_size or self.chunk_size < 1:
            raise ValidationError("chunk_size must be a positive integer")
        if int(self.rng_seed) != self.rng_seed or self.rng_seed < 0:
            raise ValidationError("rng_seed must be a non-negative integer")

    @property
    def n_bins(self) -> int:
        return int(round(1.0 / self.bin_width))

    def check_against(self, model: ModelSpec, chain: RegimeChain) -> None:
        limit = 1.0 / (model.lam + model.mu + float(chain.exit_rates.max()))
        if not self.dt < limit:
            raise ValidationError(f"dt must be below {limit:.6g} for this model")

    def with_(self, **changes) -> "SimConfig":
        data = asdict(self)
        data.update(changes)
        return SimConfig(**data)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SimulationResult:
    """Stationary statistics with batch-means standard errors.

    Densities have shape ``(regimes, n_bins)`` and are normalized so that
    atoms plus integrated densities sum to 1 over regimes and phases.
    """

    bin_edges: NDArray[np.float64]
    p_N: NDArray[np.float64]
    p_W: NDArray[np.float64]
    p_N_se: NDArray[np.float64]
    p_W_se: NDArray[np.float64]
    dirac_weight_N: NDArray[np.float64]
    dirac_weight_W: NDArray[np.float64]
    dirac_weight_N_se: NDArray[np.float64]
    dirac_weight_W_se: NDArray[np.float64]
    mass_at_one_N: NDArray[np.float64]
    mass_at_one_W: NDArray[np.float64]
    waiting_mass: float
    waiting_mass_se: float
    P0_plus_P1_se: float
    inspections: int
    batches: int

    @property
    def bin_centers(self) -> NDArray[np.float64]:
        return 0.5 * (self.bin_edges[1:] + self.bin_edges[:-1])

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
            "dirac_weight_N_se": self.dirac_weight_N_se.tolist(),
            "dirac_weight_W_se": self.dirac_weight_W_se.tolist(),
            "mass_at_one_N": self.mass_at_one_N.tolist(),
            "mass_at_one_W": self.mass_at_one_W.tolist(),
            "waiting_mass": self.waiting_mass,
            "waiting_mass_se": self.waiting_mass_se,
            "P0": self.P0,
            "P1": self.P1,
            "P0_plus_P1": self.P0 + self.P1,
            "P0_plus_P1_se": self.P0_plus_P1_se,
            "inspections": self.inspections,
            "batches": self.batches,
        }


@dataclass(frozen=True)
class CostEstimate:
    regime: int
    x0: float
    mean: float
    stderr: float
    paths: int


@dataclass
class Trajectory:
    """Event log of one path: state just after each event."""

    times: NDArray[np.float64]
    states: NDArray[np.float64]
    regimes: NDArray[np.int64]
    waiting: NDArray[np.bool_]
    events: list
    replenished: NDArray[np.float64]


def cost_horizon(delta: float, tail: float = 1e-6) -> float:
    """Smallest ``T`` with ``exp(-delta T) / delta <= tail``."""
    return max(0.0, math.log(1.0 / (tail * delta)) / delta)


def _policy_arrays(policy: Policy, regime_count: int):
    if policy.regime_count != regime_count:
        raise ValidationError("policy and model disagree on the regime count")
    thr = np.array([-1.0 if t is None else t for t in policy.thresholds])
    prefix = np.asarray(policy.prefix, dtype=np.bool_)
    if policy.activation is None:
        act = np.zeros((regime_count, 2), dtype=np.bool_)
    else:
        act = np.ascontiguousarray(policy.activation, dtype=np.bool_)
    return thr, prefix, act


def _speed_arrays(model: ModelSpec):
    speeds = np.asarray(model.speeds, dtype=np.float64)
    if model.speed_table is None:
        return speeds, np.zeros(1), np.zeros((model.regime_count, 1)), False
    table = np.ascontiguousarray(model.speed_table, dtype=np.float64)
    return speeds, np.linspace(0.0, 1.0, table.shape[1]), table, True


def _chunk_seeds(seed: int, sizes: list) -> list:
    children = np.random.SeedSequence(int(seed)).spawn(len(sizes))
    return [int(c.generate_state(1, dtype=np.uint32)[0]) for c in children]


def _chunks(total: int, size: int) -> list:
    full, rest = divmod(int(total), int(size))
    return [int(size)] * full + ([rest] if rest else [])


def _prepare(model: ModelSpec, chain: RegimeChain | None, policy: Policy, cfg: SimConfig):
    chain = RegimeChain.single() if chain is None else chain
    chain.check()
    if chain.regime_count != model.regime_count:
        raise ValidationError("chain and model disagree on the regime count")
    if policy is None:
        raise ValidationError("policy required")
    cfg.check_against(model, chain)
    return chain


def simulate_paths(model: ModelSpec, chain: RegimeChain | None, policy: Policy, cfg: SimConfig) -> SimulationResult:
    """Stationary histograms and boundary masses from inspected paths.

    Every path starts non-waiting at ``x = 1`` in a regime drawn from the
    stationary law of the chain and is inspected at Poisson times after the
    burn-in.
    """
    chain = _prepare(model, chain, policy, cfg)
    thr, prefix, act = _policy_arrays(policy, model.regime_count)
    speeds, tx, ts, use_table = _speed_arrays(model)
    pi = stationary_distribution(chain)
    cdf = np.cumsum(pi)
    cdf[-1] = 1.0
    sizes = _chunks(cfg.path_count, cfg.chunk_size)
    seeds = _chunk_seeds(cfg.rng_seed, sizes)
    burn = cfg.burn_in * cfg.horizon
    args = (cdf, speeds, tx, ts, use_table, cfg.dt, np.ascontiguousarray(chain.rates), chain.exit_rates,
            model.lam, model.mu, thr, prefix, act, float(cfg.horizon), float(burn), float(cfg.inspection_rate), cfg.n_bins)
    jobs = (delayed(_kernels.mc_stationary_chunk)(n, s, *args) for n, s in zip(sizes, seeds))
    parts = Parallel(n_jobs=cfg.n_jobs)(jobs)
    return _reduce_stationary(parts, cfg)


def _reduce_stationary(parts, cfg: SimConfig) -> SimulationResult:
    h = cfg.bin_width
    hist = np.stack([p[0] for p in parts]).astype(np.float64)
    a0 = np.stack([p[1] for p in parts]).astype(np.float64)
    a1 = np.stack([p[2] for p in parts]).astype(np.float64)
    counts = np.array([p[3] for p in parts], dtype=np.float64)
    if counts.sum() == 0:
        raise ValidationError("no inspections fell inside the horizon; increase horizon or path_count")
    total = counts.sum()
    B = len(parts)
    with np.errstate(invalid="ignore", divide="ignore"):
        dens_b = hist / (counts[:, None, None, None] * h)
        a0_b = a0 / counts[:, None, None]
        wait_b = (hist[:, :, 1].sum(axis=(1, 2)) + a0[:, :, 1].sum(axis=1) + a1[:, :, 1].sum(axis=1)) / counts
        p01_b = (a0.sum(axis=(1, 2)) + a1.sum(axis=(1, 2))) / counts

    def se(batch, mean):
        # ratio-estimator variance over batches of unequal size
        if B < 2:
            return np.full(np.shape(mean), np.nan)
        w = (counts / counts.mean()).reshape((-1,) + (1,) * (np.ndim(batch) - 1))
        return np.sqrt(np.sum((w * (batch - mean)) ** 2, axis=0) / (B * (B - 1)))

    dens = hist.sum(axis=0) / (total * h)
    atom0 = a0.sum(axis=0) / total
    atom1 = a1.sum(axis=0) / total
    wait = float((hist[:, :, 1].sum() + a0[:, :, 1].sum() + a1[:, :, 1].sum()) / total)
    p01 = float((a0.sum() + a1.sum()) / total)
    dens_se = se(dens_b, dens)
    a0_se = se(a0_b, atom0)
    return SimulationResult(
        bin_edges=np.linspace(0.0, 1.0, cfg.n_bins + 1),
        p_N=dens[:, 0],
        p_W=dens[:, 1],
        p_N_se=dens_se[:, 0],
        p_W_se=dens_se[:, 1],
        dirac_weight_N=atom0[:, 0],
        dirac_weight_W=atom0[:, 1],
        dirac_weight_N_se=a0_se[:, 0],
        dirac_weight_W_se=a0_se[:, 1],
        mass_at_one_N=atom1[:, 0],
        mass_at_one_W=atom1[:, 1],
        waiting_mass=wait,
        waiting_mass_se=float(se(wait_b, wait)),
        P0_plus_P1_se=float(se(p01_b, p01)),
        inspections=int(total),
        batches=B,
    )


def estimate_cost(
    model: ModelSpec,
    chain: RegimeChain | None,
    policy: Policy,
    start: tuple,
    cfg: SimConfig,
) -> CostEstimate:
    """Discounted cost from ``start = (regime, x0)`` in the non-waiting phase.

    Paths run to the horizon of :func:`cost_horizon`; time spent at the
    depleted state is discounted exactly between events.
    """
    chain = _prepare(model, chain, policy, cfg)
    regime, x0 = int(start[0]), float(start[1])
    if not 0 <= regime < model.regime_count:
        raise ValidationError("start regime out of range")
    if not 0.0 <= x0 <= 1.0:
        raise ValidationError("start state must lie in [0, 1]")
    thr, prefix, act = _policy_arrays(policy, model.regime_count)
    speeds, tx, ts, use_table = _speed_arrays(model)
    sizes = _chunks(cfg.path_count, cfg.chunk_size)
    seeds = _chunk_seeds(cfg.rng_seed, sizes)
    T = cost_horizon(model.delta)
    args = (regime, x0, speeds, tx, ts, use_table, cfg.dt, np.ascontiguousarray(chain.rates), chain.exit_rates,
            model.lam, model.mu, model.delta, model.c, model.d, thr, prefix, act, T)
    jobs = (delayed(_kernels.mc_cost_chunk)(n, s, *args) for n, s in zip(sizes, seeds))
    costs = np.concatenate(Parallel(n_jobs=cfg.n_jobs)(jobs))
    n = costs.size
    mean = math.fsum(costs) / n
    stderr = float(np.std(costs, ddof=1) / math.sqrt(n)) if n > 1 else float("nan")
    return CostEstimate(regime, x0, mean, stderr, n)


def simulate_trajectory(
    model: ModelSpec,
    chain: RegimeChain | None,
    policy: Policy,
    start: tuple,
    horizon: float,
    rng_seed: int = 0,
) -> Trajectory:
    """Event log of a single path (constant speeds only), for inspection and tests."""
    chain = RegimeChain.single() if chain is None else chain
    if model.speed_table is not None:
        raise ValidationError("trajectory logging supports constant speeds only")
    rng = np.random.default_rng(rng_seed)
    exp = lambda rate: rng.exponential(1.0 / rate) if rate > 0 else math.inf  # noqa: E731
    exit_rates = chain.exit_rates
    i, x = int(start[0]), float(start[1])
    waiting = False
    t = 0.0
    t_clock, t_jump = exp(model.lam), exp(exit_rates[i])
    rec = {"t": [0.0], "x": [x], "i": [i], "w": [False], "e": ["start"], "r": [0.0]}
    while True:
        te = min(t_clock, t_jump, horizon)
        x = max(0.0, x - model.speeds[i] * (te - t)) if x > 0 else 0.0
        t = te
        replenished = 0.0
        if te == t_jump:
            probs = chain.rates[i] / exit_rates[i]
            i = int(rng.choice(chain.regime_count, p=probs))
            t_jump = te + exp(exit_rates[i])
            event = "switch"
        elif te == t_clock:
            if waiting:
                replenished = 1.0 - x
                x, waiting = 1.0, False
                t_clock = te + exp(model.lam)
                event = "execute"
            elif bool(policy.decide(i, x)):
                waiting = True
                t_clock = te + exp(model.mu)
                event = "order"
            else:
                t_clock = te + exp(model.lam)
                event = "observe"
        else:
            event = "end"
        for key, val in zip("txiwer", (t, x, i, waiting, event, replenished)):
            rec[key].append(val)
        if event == "end":
            break
    return Trajectory(
        np.array(rec["t"]), np.array(rec["x"]), np.array(rec["i"]), np.array(rec["w"]), rec["e"], np.array(rec["r"])
    )


class MonteCarloSimulator(BaseEstimator):
    """Estimator front end: ``fit`` runs the stationary simulation.

    ``predict(X)`` returns Monte-Carlo cost estimates for rows ``(regime, x0)``.
    """

    def __init__(self, path_count=100_000, dt=0.0025, horizon=500.0, burn_in=0.2, bin_width=1.0 / 200.0,
                 rng_seed=0, chunk_size=1_000, n_jobs=1):
        self.path_count = path_count
        self.dt = dt
        self.horizon = horizon
        self.burn_in = burn_in
        self.bin_width = bin_width
        self.rng_seed = rng_seed
        self.chunk_size = chunk_size
        self.n_jobs = n_jobs

    def _config(self) -> SimConfig:
        return SimConfig(path_count=self.path_count, dt=self.dt, horizon=self.horizon, burn_in=self.burn_in,
                         bin_width=self.bin_width, rng_seed=self.rng_seed, chunk_size=self.chunk_size, n_jobs=self.n_jobs)

    def fit(self, model: ModelSpec, chain: RegimeChain | None = None, policy: Policy | None = None):
        self.config_ = self._config()
        self.result_ = simulate_paths(model, chain, policy, self.config_)
        self.model_, self.chain_, self.policy_ = model, chain, policy
        return self

    def predict(self, X) -> NDArray[np.float64]:
        if not hasattr(self, "result_"):
            raise NotFittedError("MonteCarloSimulator is not fitted yet")
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return np.array([
            estimate_cost(self.model_, self.chain_, self.policy_, (int(r), x), self.config_).mean for r, x in X
        ])
