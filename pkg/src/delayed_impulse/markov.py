"""Continuous-time Markov chain that modulates the degradation speed.

The chain is stored by its off-diagonal switching rates ``rates[i, j]``
(1/time).  Diagonal entries are never used: they are zeroed on
construction, so matrices whose diagonal holds anything (including the
usual ``-sum`` of the row) are accepted unchanged.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.typing import NDArray
from scipy.sparse.csgraph import connected_components

from .exceptions import ValidationError

__all__ = [
    "RegimeChain",
    "RegimePath",
    "validate_chain",
    "stationary_distribution",
    "sample_regime_path",
    "load_chain_csv",
    "birth_death_chain",
]


@dataclass(frozen=True, eq=False)
class RegimeChain:
    """Switching-rate matrix of a finite continuous-time Markov chain.

    Parameters
    ----------
    rates : (I+1, I+1) array_like
        Off-diagonal switching rates.  The diagonal is discarded.
    """

    rates: NDArray[np.float64]
    regime_count: int = field(init=False)

    def __post_init__(self):
        nu = np.array(self.rates, dtype=np.float64, copy=True)
        if nu.ndim == 0:
            nu = nu.reshape(1, 1)
        if nu.ndim != 2 or nu.shape[0] != nu.shape[1]:
            raise ValidationError(f"rate matrix must be square, got shape {nu.shape}")
        if nu.shape[0] < 1:
            raise ValidationError("rate matrix must have at least one regime")
        if not np.all(np.isfinite(nu)):
            raise ValidationError("rate matrix contains non-finite entries")
        np.fill_diagonal(nu, 0.0)
        nu.setflags(write=False)
        object.__setattr__(self, "rates", nu)
        object.__setattr__(self, "regime_count", nu.shape[0])

    @classmethod
    def single(cls) -> "RegimeChain":
        """The trivial one-regime chain."""
        return cls(np.zeros((1, 1)))

    @property
    def exit_rates(self) -> NDArray[np.float64]:
        """Total rate of leaving each regime."""
        return self.rates.sum(axis=1)

    @property
    def generator(self) -> NDArray[np.float64]:
        """Generator matrix Q with rows summing to zero."""
        q = self.rates.copy()
        np.fill_diagonal(q, -self.exit_rates)
        return q

    def check(self) -> "RegimeChain":
        """Raise :class:`ValidationError` listing every violation, else return self."""
        problems = validate_chain(self)
        if problems:
            raise ValidationError("; ".join(problems))
        return self

    def __eq__(self, other):
        if not isinstance(other, RegimeChain):
            return NotImplemented
        return np.array_equal(self.rates, other.rates)

    def __hash__(self):
        return hash(self.rates.tobytes())

    def to_list(self) -> list[list[float]]:
        return self.rates.tolist()


@dataclass(frozen=True)
class RegimePath:
    """A sampled trajectory of the chain on ``[0, horizon]``.

    ``regimes[k]`` is the regime held on ``[jump_times[k-1], jump_times[k])``
    with ``jump_times[-1]`` understood as 0, so ``len(regimes) ==
    len(jump_times) + 1``.
    """

    jump_times: NDArray[np.float64]
    regimes: NDArray[np.int64]
    horizon: float

    def __post_init__(self):
        t = np.asarray(self.jump_times, dtype=np.float64)
        r = np.asarray(self.regimes, dtype=np.int64)
        if len(r) != len(t) + 1:
            raise ValidationError("need exactly one regime per inter-jump interval")
        if t.size and (np.any(np.diff(t) <= 0) or t[0] <= 0 or t[-1] > self.horizon):
            raise ValidationError("jump times must be strictly increasing inside (0, horizon]")
        if np.any(np.diff(r) == 0):
            raise ValidationError("consecutive regimes must differ")
        object.__setattr__(self, "jump_times", t)
        object.__setattr__(self, "regimes", r)

    def occupancy(self, regime_count: int) -> NDArray[np.float64]:
        """Fraction of ``[0, horizon]`` spent in each regime."""
        edges = np.concatenate(([0.0], self.jump_times, [self.horizon]))
        return np.bincount(self.regimes, weights=np.diff(edges), minlength=regime_count) / self.horizon

    def regime_at(self, t) -> NDArray[np.int64]:
        """Regime held at time(s) ``t`` (right-continuous)."""
        k = np.searchsorted(self.jump_times, np.asarray(t, dtype=np.float64), side="right")
        return self.regimes[k]

    def to_csv(self, path) -> None:
        """Write rows ``(t_jump, regime)``; the first row is ``(0, initial regime)``."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t_jump", "regime"])
            w.writerow([repr(0.0), int(self.regimes[0])])
            for t, r in zip(self.jump_times, self.regimes[1:]):
                w.writerow([repr(float(t)), int(r)])


def validate_chain(chain: RegimeChain) -> list[str]:
    """Return the invariant violations of ``chain``; an empty list means valid.

    Checks non-negativity of every off-diagonal rate and strong
    connectivity of the digraph of positive-rate edges.
    """
    nu = chain.rates
    problems = []
    neg = np.argwhere(nu < 0)
    for i, j in neg:
        problems.append(f"negative rate nu[{i},{j}] = {nu[i, j]:g}")
    if chain.regime_count > 1:
        n_comp, _ = connected_components(nu > 0, directed=True, connection="strong")
        if n_comp != 1:
            problems.append(f"chain is not irreducible ({n_comp} strongly connected components)")
    return problems


def stationary_distribution(chain: RegimeChain) -> NDArray[np.float64]:
    """Stationary law π of the chain: π Q = 0, Σ π = 1.

    Solves the augmented system ``[Qᵀ; 1ᵀ] π = [0; 1]`` in the least-squares
    sense (it is consistent for an irreducible chain) and renormalizes.
    """
    chain.check()
    n = chain.regime_count
    if n == 1:
        return np.ones(1)
    q = chain.generator
    a = np.vstack([q.T, np.ones(n)])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(a, b, rcond=None)
    scale = max(1.0, float(np.abs(q).max()))
    if np.any(pi <= 0) or np.abs(pi @ q).max() > 1e-9 * scale:
        raise ValidationError("stationary distribution solve is ill-conditioned")
    return pi / pi.sum()


def sample_regime_path(chain: RegimeChain, initial_regime: int, horizon: float, rng_seed=None) -> RegimePath:
    """Simulate the chain from ``initial_regime`` up to ``horizon``.

    Holding times are exponential with the regime's exit rate and the next
    regime is drawn proportionally to the outgoing rates.  Deterministic for
    a fixed ``rng_seed``.
    """
    if not 0 <= initial_regime < chain.regime_count:
        raise ValidationError(f"initial regime {initial_regime} out of range")
    if not horizon > 0:
        raise ValidationError("horizon must be positive")
    rng = np.random.default_rng(rng_seed)
    exit_rates = chain.exit_rates
    t = 0.0
    i = int(initial_regime)
    times, regimes = [], [i]
    while exit_rates[i] > 0:
        t += rng.exponential(1.0 / exit_rates[i])
        if t > horizon:
            break
        i = int(rng.choice(chain.regime_count, p=chain.rates[i] / exit_rates[i]))
        times.append(t)
        regimes.append(i)
    return RegimePath(np.array(times), np.array(regimes), float(horizon))


def load_chain_csv(path) -> RegimeChain:
    """Read a square comma-separated rate matrix; a non-numeric first line is a header.

    Raises :class:`ValidationError` with the offending row/column (1-based,
    counting data rows only) on parse failures and negative rates.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(cell.strip() for cell in r)]
    if rows:
        try:
            [float(cell) for cell in rows[0]]
        except ValueError:
            rows = rows[1:]
    if not rows:
        raise ValidationError(f"{path}: empty rate matrix")
    n = len(rows)
    values = np.empty((n, n))
    for r, row in enumerate(rows, start=1):
        if len(row) != n:
            raise ValidationError(f"{path}: dimension mismatch, row {r} has {len(row)} columns, expected {n}")
        for col, cell in enumerate(row, start=1):
            try:
                v = float(cell)
            except ValueError:
                raise ValidationError(f"{path}: cannot parse {cell!r} at row {r} col {col}") from None
            if r != col and v < 0:
                raise ValidationError(f"{path}: negative rate {v:g} at row {r} col {col}")
            values[r - 1, col - 1] = v
    return RegimeChain(values).check()


def birth_death_chain(regime_count: int, up: float, down: float) -> RegimeChain:
    """Nearest-neighbour chain: ``i -> i+1`` at rate ``up``, ``i -> i-1`` at rate ``down``."""
    n = int(regime_count)
    if n < 1:
        raise ValidationError("regime_count must be positive")
    rates = np.zeros((n, n))
    idx = np.arange(n - 1)
    rates[idx, idx + 1] = up
    rates[idx + 1, idx] = down
    chain = RegimeChain(rates)
    chain.check()
    return chain
