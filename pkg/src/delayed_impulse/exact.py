"""Closed-form benchmark for the single-regime problem with constant speed.

With one regime and ``S(x) = S * 1{x > 0}`` the post-decision value is an
explicit exponential-affine function and the value function is known up to
two scalars, the threshold ``xbar`` and ``Phi(1)``, fixed by smooth pasting.
The stationary density of the controlled state under a threshold policy is
also explicit (two Dirac atoms at 0 plus exponential profiles).

These formulas are the reference the PDE solvers and the Monte-Carlo engine
are checked against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .exceptions import NoInteriorThreshold, ValidationError
from .model import ModelSpec

__all__ = [
    "PhiHatCoefficients",
    "ExactSolution",
    "ExactPdf",
    "phi_hat_coefficients",
    "value_coefficients",
    "solve_smooth_pasting",
    "eval_value",
    "eval_value_derivative",
    "pasting_residuals",
    "ergodic_threshold",
    "exact_stationary_pdf",
    "ExactSingleRegime",
]

_EDGE = 1e-8


@dataclass(frozen=True)
class PhiHatCoefficients:
    alpha: float
    beta: float
    gamma: float


@dataclass(frozen=True)
class ExactSolution:
    """Smooth-pasting solution.

    On ``[0, xbar]`` the value is ``D e^{-(delta+lam) x/S} + A + B x +
    C e^{-(delta+mu) x/S}``; on ``(xbar, 1]`` it is ``Phi(1) e^{delta (1-x)/S}``.
    """

    A: float
    B: float
    C: float
    D: float
    phi_at_one: float
    threshold: float
    model: ModelSpec
    hat: PhiHatCoefficients


@dataclass(frozen=True)
class ExactPdf:
    """Stationary law under a threshold policy: atoms at 0 plus densities on (0, 1]."""

    resetting_mass: float
    dirac_weight_N: float
    dirac_weight_W: float
    E: float
    F: float
    threshold: float
    lam: float
    mu: float
    S: float

    def density_N(self, x):
        """Continuous part of the non-waiting density on (0, 1]; 0 elsewhere.

        The value at ``x = 1`` is the left limit.
        """
        x = np.asarray(x, dtype=np.float64)
        c, xb = self.resetting_mass, self.threshold
        base = self.mu / self.S * c
        out = np.where(x <= xb, base * np.exp(self.lam / self.S * (x - xb)), base)
        return np.where((x > 0) & (x <= 1), out, 0.0)

    def density_W(self, x):
        """Continuous part of the waiting density on (0, 1]."""
        x = np.asarray(x, dtype=np.float64)
        xb = self.threshold
        val = self.F * self.resetting_mass * (
            np.exp(self.lam / self.S * (x - xb)) - np.exp(self.mu / self.S * (x - xb))
        )
        return np.where((x > 0) & (x <= xb), val, 0.0)

    def mass_N(self, a, b):
        """Integral of the continuous non-waiting density over ``[a, b] ∩ (0, 1]``."""
        a, b = np.clip(a, 0.0, 1.0), np.clip(b, 0.0, 1.0)
        c, xb, k = self.resetting_mass, self.threshold, self.lam / self.S
        base = self.mu / self.S * c
        lo, hi = np.minimum(a, xb), np.minimum(b, xb)
        left = base / k * (np.exp(k * (hi - xb)) - np.exp(k * (lo - xb)))
        right = base * (np.maximum(b, xb) - np.maximum(a, xb))
        return left + right

    def mass_W(self, a, b):
        """Integral of the continuous waiting density over ``[a, b] ∩ (0, 1]``."""
        xb = self.threshold
        lo = np.clip(a, 0.0, xb)
        hi = np.clip(b, 0.0, xb)
        kl, km = self.lam / self.S, self.mu / self.S
        fc = self.F * self.resetting_mass
        return fc * (
            (np.exp(kl * (hi - xb)) - np.exp(kl * (lo - xb))) / kl
            - (np.exp(km * (hi - xb)) - np.exp(km * (lo - xb))) / km
        )

    def total_mass(self) -> float:
        return float(self.dirac_weight_N + self.dirac_weight_W + self.mass_N(0.0, 1.0) + self.mass_W(0.0, 1.0))


def _single_speed(model: ModelSpec) -> float:
    if model.regime_count != 1 or not model.is_constant_speed:
        raise ValidationError("exact solution requires a single regime with constant speed")
    S = model.speeds[0]
    if not S > 0:
        raise ValidationError("exact solution requires a positive speed")
    return S


def phi_hat_coefficients(model: ModelSpec) -> PhiHatCoefficients:
    """Coefficients of ``Phi_hat(x) = alpha - c beta x + gamma e^{-(delta+mu)x/S} + beta Phi(1)``."""
    S = _single_speed(model)
    mu, dl, c, d = model.mu, model.delta, model.c, model.d
    r = dl + mu
    return PhiHatCoefficients(
        alpha=mu / r * (c + d + c * S / r),
        beta=mu / r,
        gamma=1.0 / r - mu * c * S / r ** 2,
    )


def _raw_coefficients(model: ModelSpec, hat: PhiHatCoefficients, c: float, d: float):
    """(A0, A1, B, C, D) with the constant term ``A = A0 + A1 * Phi(1)``."""
    S = model.speeds[0]
    lam, mu, dl = model.lam, model.mu, model.delta
    if mu == lam:
        raise ValidationError("mu == lam is degenerate")
    al, be, ga = hat.alpha, hat.beta, hat.gamma
    rl = dl + lam
    A0 = lam * al / rl + lam * c * S * be / rl ** 2
    A1 = lam * be / rl
    B = -lam * c * be / rl
    C = -lam * ga / (mu - lam)
    D = (1.0 - lam * c * S * be / rl + lam * (dl + mu) * ga / (mu - lam)) / rl
    return A0, A1, B, C, D


def value_coefficients(model: ModelSpec, phi_at_one: float) -> tuple[float, float, float, float]:
    """Return ``(A, B, C, D)`` for a candidate ``Phi(1)``.

    ``A`` is the constant term (affine in ``Phi(1)``) and ``B`` the slope of
    the linear part; ``C`` and ``D`` weight the two exponentials.
    """
    hat = phi_hat_coefficients(model)
    A0, A1, B, C, D = _raw_coefficients(model, hat, model.c, model.d)
    return A0 + A1 * phi_at_one, B, C, D


def _branch_parts(model, coeffs, x):
    """Value and derivative of the lower branch without the ``A1 Phi(1)`` part."""
    S = model.speeds[0]
    A0, _, B, C, D = coeffs
    kl = (model.delta + model.lam) / S
    km = (model.delta + model.mu) / S
    el, em = math.exp(-kl * x), math.exp(-km * x)
    return D * el + A0 + B * x + C * em, -kl * D * el + B - km * C * em


def _pasting_residual(model, coeffs, x):
    """Derivative mismatch at ``x`` once ``Phi(1)`` is eliminated by continuity.

    Returns ``(residual, Phi(1))``.
    """
    S, dl = model.speeds[0], model.delta
    A1 = coeffs[1]
    g, dg = _branch_parts(model, coeffs, x)
    decay = math.exp(-dl * (1.0 - x) / S)
    v = g / (1.0 - A1 * decay)
    return dg + dl / S * v, v * decay


def solve_smooth_pasting(model: ModelSpec, samples: int = 2000) -> ExactSolution:
    """Threshold and ``Phi(1)`` from value and slope continuity at the threshold.

    Both matching conditions are affine in ``Phi(1)``; eliminating it leaves
    one scalar equation in the threshold, bracketed on a sample grid of
    ``(1e-8, 1 - 1e-8)`` and polished with Brent's method.  Several sign
    changes are reported as an error rather than resolved.
    """
    _single_speed(model)
    hat = phi_hat_coefficients(model)
    coeffs = _raw_coefficients(model, hat, model.c, model.d)
    xs = np.linspace(_EDGE, 1.0 - _EDGE, samples)
    r = np.array([_pasting_residual(model, coeffs, x)[0] for x in xs])
    sign_change = np.nonzero(np.sign(r[:-1]) * np.sign(r[1:]) < 0)[0]
    exact_zero = np.nonzero(r == 0.0)[0]
    roots = [float(xs[k]) for k in exact_zero]
    for k in sign_change:
        roots.append(
            brentq(lambda x: _pasting_residual(model, coeffs, x)[0], xs[k], xs[k + 1], xtol=1e-15, rtol=4 * np.finfo(float).eps)
        )
    if not roots:
        raise NoInteriorThreshold("no interior threshold: smooth-pasting equation has no root in (0, 1)")
    if len(roots) > 1:
        raise NoInteriorThreshold(f"smooth-pasting equation has several roots {sorted(roots)}")
    xbar = roots[0]
    _, p1 = _pasting_residual(model, coeffs, xbar)
    A0, A1, B, C, D = coeffs
    return ExactSolution(A=A0 + A1 * p1, B=B, C=C, D=D, phi_at_one=p1, threshold=xbar, model=model, hat=hat)


def pasting_residuals(sol: ExactSolution) -> tuple[float, float]:
    """Value and slope mismatch across the threshold."""
    lo, dlo = _lower(sol, sol.threshold)
    S, dl = sol.model.speeds[0], sol.model.delta
    up = sol.phi_at_one * math.exp(dl * (1.0 - sol.threshold) / S)
    return lo - up, dlo + dl / S * up


def _lower(sol, x):
    S = sol.model.speeds[0]
    kl = (sol.model.delta + sol.model.lam) / S
    km = (sol.model.delta + sol.model.mu) / S
    el, em = np.exp(-kl * x), np.exp(-km * x)
    return sol.D * el + sol.A + sol.B * x + sol.C * em, -kl * sol.D * el + sol.B - km * sol.C * em


def eval_value(x, sol: ExactSolution):
    """``(Phi(x), Phi_hat(x))`` for ``x`` in [0, 1] (scalars or arrays)."""
    x = np.asarray(x, dtype=np.float64)
    if np.any((x < 0) | (x > 1)):
        raise ValidationError("x must lie in [0, 1]")
    m = sol.model
    S = m.speeds[0]
    lower, _ = _lower(sol, x)
    upper = sol.phi_at_one * np.exp(m.delta * (1.0 - x) / S)
    phi = np.where(x <= sol.threshold, lower, upper)
    h = sol.hat
    phi_hat = h.alpha - m.c * h.beta * x + h.gamma * np.exp(-(m.delta + m.mu) * x / S) + h.beta * sol.phi_at_one
    if phi.ndim == 0:
        return float(phi), float(phi_hat)
    return phi, phi_hat


def eval_value_derivative(x, sol: ExactSolution):
    """Derivatives ``(Phi'(x), Phi_hat'(x))``."""
    x = np.asarray(x, dtype=np.float64)
    m = sol.model
    S = m.speeds[0]
    _, dlower = _lower(sol, x)
    dupper = -m.delta / S * sol.phi_at_one * np.exp(m.delta * (1.0 - x) / S)
    dphi = np.where(x <= sol.threshold, dlower, dupper)
    h = sol.hat
    dhat = -m.c * h.beta - (m.delta + m.mu) / S * h.gamma * np.exp(-(m.delta + m.mu) * x / S)
    return dphi, dhat


def ergodic_threshold(lam: float, S: float, c: float, d: float) -> tuple[float, float]:
    """Small-discount, no-delay threshold and long-run average cost.

    The threshold solves ``(1 - x) e^{-lam x / S} = d S / (1 - c S)`` and the
    average cost is ``u = c S + d S / (1 - x)``.
    """
    if not (lam > 0 and S > 0 and c > 0 and d > 0):
        raise ValidationError("lam, S, c, d must be positive")
    if (c + d) * S >= 1:
        raise NoInteriorThreshold("no ergodic threshold: (c + d) S >= 1")
    rhs = d * S / (1.0 - c * S)

    def f(x):
        return (1.0 - x) * math.exp(-lam * x / S) - rhs

    lo, hi = 0.0, 1.0
    # f strictly decreasing from 1 - rhs > 0 to -rhs < 0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if f(mid) > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-15:
            break
    x = 0.5 * (lo + hi)
    if not 0 < x < 1:
        raise NoInteriorThreshold("ergodic threshold is not interior")
    return x, c * S + d * S / (1.0 - x)


def exact_stationary_pdf(lam: float, mu: float, S: float, threshold: float) -> ExactPdf:
    """Stationary law of the controlled state under the threshold rule."""
    if not (mu > lam > 0 and S > 0):
        raise ValidationError("need mu > lam > 0 and S > 0")
    if not 0 < threshold < 1:
        raise ValidationError("threshold must lie in (0, 1)")
    xb = threshold
    el, em = math.exp(-lam * xb / S), math.exp(-mu * xb / S)
    E = (mu * el - lam * em) / (mu - lam)
    F = lam * mu / (S * (mu - lam))
    c = 1.0 / (1.0 + mu / lam + mu * (1.0 - xb) / S)
    return ExactPdf(
        resetting_mass=c,
        dirac_weight_N=mu / lam * c * el,
        dirac_weight_W=E * c,
        E=E,
        F=F,
        threshold=xb,
        lam=lam,
        mu=mu,
        S=S,
    )


class ExactSingleRegime:
    """Estimator-style wrapper around the closed forms.

    ``fit(model)`` solves the smooth-pasting system; afterwards
    ``predict(x)`` returns the intervention decision at observed states and
    ``value(x)`` the value pair.
    """

    def __init__(self, samples: int = 2000):
        self.samples = samples

    def get_params(self, deep=True):
        return {"samples": self.samples}

    def set_params(self, **params):
        for k, v in params.items():
            setattr(self, k, v)
        return self

    def fit(self, model: ModelSpec, chain=None):
        self.solution_ = solve_smooth_pasting(model, samples=self.samples)
        self.threshold_ = self.solution_.threshold
        self.pdf_ = exact_stationary_pdf(model.lam, model.mu, model.speeds[0], self.threshold_)
        return self

    def _check(self):
        if not hasattr(self, "solution_"):
            from sklearn.exceptions import NotFittedError

            raise NotFittedError("call fit first")

    def predict(self, x):
        self._check()
        return np.asarray(x) <= self.threshold_

    def value(self, x):
        self._check()
        return eval_value(x, self.solution_)
