from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from delayed_impulse.exact import (
    ExactSingleRegime,
    eval_value,
    eval_value_derivative,
    ergodic_threshold,
    exact_stationary_pdf,
    pasting_residuals,
    phi_hat_coefficients,
    solve_smooth_pasting,
    value_coefficients,
)
from delayed_impulse.exceptions import NoInteriorThreshold, ValidationError
from delayed_impulse.model import ModelSpec

from conftest import XBAR, unchecked_model

LAM, MU, DELTA, C, D, S = 1 / 7, 1.0, 0.1, 0.3, 0.2, 0.07


def test_phi_hat_coefficients(fig_model):
    h = phi_hat_coefficients(fig_model)
    assert h.alpha == pytest.approx(0.47190, abs=1e-5)
    assert h.beta == pytest.approx(0.90909, abs=1e-5)
    assert h.gamma == pytest.approx(0.89174, abs=1e-5)


def test_phi_hat_coefficient_limits(fig_model):
    assert phi_hat_coefficients(unchecked_model(c=0.0, d=0.0)).alpha == 0.0
    assert abs(phi_hat_coefficients(fig_model.with_(mu=1e6)).beta - 1.0) < 1e-5


def test_value_coefficients(fig_model):
    A0, B0, C0, D0 = value_coefficients(fig_model, 0.0)
    A1, B1, C1, D1 = value_coefficients(fig_model, 1.0)
    beta = MU / (DELTA + MU)
    # direct substitution gives -0.160428
    assert B0 == pytest.approx(-LAM * C * beta / (DELTA + LAM), rel=1e-14)
    assert B0 == pytest.approx(-0.160428, abs=1e-6)
    assert (B0, C0, D0) == (B1, C1, D1)
    assert A1 - A0 == pytest.approx(LAM * beta / (DELTA + LAM), rel=1e-13)


def test_degenerate_mu_equals_lambda():
    with pytest.raises(ValidationError):
        value_coefficients(ModelSpec(0.5, 0.5, 0.1, 0.3, 0.2, speeds=(0.07,)), 0.0)


def test_threshold_value(fig_exact):
    assert abs(fig_exact.threshold - XBAR) < 1e-6
    r0, r1 = pasting_residuals(fig_exact)
    assert abs(r0) <= 1e-10 and abs(r1) <= 1e-10
    assert fig_exact.phi_at_one > 0


def test_value_decreasing_and_convex(fig_exact):
    x = np.linspace(0, 1, 1000)
    phi, _ = eval_value(x, fig_exact)
    assert np.all(np.diff(phi) < 0)
    assert np.all(np.diff(phi, 2) > -1e-12)


def test_eval_value_endpoints_and_continuity(fig_exact):
    assert eval_value(1.0, fig_exact)[0] == pytest.approx(fig_exact.phi_at_one, rel=1e-14)
    xb = fig_exact.threshold
    lo = eval_value(xb, fig_exact)[0]
    hi = eval_value(np.nextafter(xb, 2.0), fig_exact)[0]
    assert abs(lo - hi) <= 1e-10
    with pytest.raises(ValidationError):
        eval_value(1.5, fig_exact)


def test_decision_region_matches_threshold(fig_exact):
    x = np.linspace(0, 1, 1000)
    phi, hat = eval_value(x, fig_exact)
    xb = fig_exact.threshold
    assert np.all(phi[x <= xb] >= hat[x <= xb] - 1e-12)
    assert np.all(phi[x > xb] < hat[x > xb])
    # exactly one sign change of phi - hat on (0, 1)
    sign = np.sign(phi - hat)[1:-1]
    assert np.count_nonzero(np.diff(sign[sign != 0])) == 1


def test_derivative_matches_finite_differences(fig_exact):
    x = np.linspace(0.01, 0.99, 500)
    x = x[np.abs(x - fig_exact.threshold) > 1e-3]
    h = 1e-6
    fd_phi = (eval_value(x + h, fig_exact)[0] - eval_value(x - h, fig_exact)[0]) / (2 * h)
    fd_hat = (eval_value(x + h, fig_exact)[1] - eval_value(x - h, fig_exact)[1]) / (2 * h)
    dphi, dhat = eval_value_derivative(x, fig_exact)
    assert np.max(np.abs(fd_phi - dphi)) < 1e-6
    assert np.max(np.abs(fd_hat - dhat)) < 1e-6


def test_value_solves_branch_equations(fig_exact):
    x = np.linspace(1e-6, 1.0, 1000)
    phi, hat = eval_value(x, fig_exact)
    dphi, dhat = eval_value_derivative(x, fig_exact)
    p1 = fig_exact.phi_at_one
    below = x <= fig_exact.threshold
    res_phi = np.where(
        below,
        DELTA * phi + S * dphi - LAM * (hat - phi),
        DELTA * phi + S * dphi,
    )
    res_hat = DELTA * hat + S * dhat - MU * (p1 + C * (1 - x) + D - hat)
    assert np.max(np.abs(res_phi)) <= 1e-8
    assert np.max(np.abs(res_hat)) <= 1e-8


def test_balance_at_origin(fig_exact):
    # S(0) = 0: delta Phi(0) = 1 + lam (min(Phi, Phi_hat) - Phi) at x = 0
    phi0, hat0 = eval_value(0.0, fig_exact)
    assert DELTA * phi0 == pytest.approx(1 + LAM * (min(phi0, hat0) - phi0), abs=1e-12)
    assert DELTA * hat0 == pytest.approx(1 + MU * (fig_exact.phi_at_one + C + D - hat0), abs=1e-12)


def test_no_interior_threshold():
    # cheap waiting, expensive action: never worth acting on (0, 1)
    with pytest.raises(NoInteriorThreshold):
        solve_smooth_pasting(ModelSpec(LAM, MU, DELTA, 5.0, 50.0, speeds=(S,)))


def test_exact_requires_single_regime():
    with pytest.raises(ValidationError):
        solve_smooth_pasting(ModelSpec(LAM, MU, DELTA, C, D, speeds=(S, S)))


def test_ergodic_threshold():
    x, u = ergodic_threshold(LAM, S, C, D)
    assert x == pytest.approx(0.909, abs=1e-3)
    assert u == pytest.approx(0.175, abs=1e-3)
    assert abs((1 - x) * math.exp(-LAM * x / S) - D * S / (1 - C * S)) <= 1e-12
    assert u > C * S


def test_ergodic_threshold_limits():
    assert ergodic_threshold(LAM, S, C, 1e-10)[0] > 0.999
    # d S / (1 - c S) = 1 puts the root at 0
    d_edge = (1 - C * S) / S
    with pytest.raises(NoInteriorThreshold):
        ergodic_threshold(LAM, S, C, d_edge)
    with pytest.raises(NoInteriorThreshold):
        ergodic_threshold(LAM, S, 10.0, 10.0)


def test_ergodic_limit_of_discounted_problem():
    xe, u = ergodic_threshold(LAM, S, C, D)
    for delta in (1e-2, 1e-3, 1e-4):
        sol = solve_smooth_pasting(ModelSpec(LAM, 1e6, delta, C, D, speeds=(S,)))
        phi, _ = eval_value(np.linspace(0, 1, 101), sol)
        assert np.max(np.abs(delta * phi - u)) <= 5 * delta
        assert abs(sol.threshold - xe) <= 1.5 * delta * 10
    assert abs(sol.threshold - xe) < 5e-3


def test_stationary_pdf_values():
    pdf = exact_stationary_pdf(LAM, MU, S, 0.807)
    # printed to four digits; the value at 0.807182 is 0.12534
    assert pdf.dirac_weight_N == pytest.approx(0.1253, abs=1e-4)
    assert exact_stationary_pdf(LAM, MU, S, XBAR).dirac_weight_N == pytest.approx(0.12534, abs=5e-6)
    assert pdf.dirac_weight_W == pytest.approx(0.02089, abs=5e-6)
    assert pdf.resetting_mass == pytest.approx(0.09296, abs=1e-5)
    assert pdf.E > 0 and pdf.F > 0
    assert abs(pdf.total_mass() - 1.0) <= 1e-12


def test_stationary_pdf_mass_by_quadrature():
    pdf = exact_stationary_pdf(LAM, MU, S, XBAR)
    mn = quad(lambda x: float(pdf.density_N(x)), 0, 1, points=[XBAR], epsabs=1e-14, epsrel=1e-13)[0]
    mw = quad(lambda x: float(pdf.density_W(x)), 0, 1, points=[XBAR], epsabs=1e-14, epsrel=1e-13)[0]
    assert mn == pytest.approx(float(pdf.mass_N(0, 1)), abs=1e-12)
    assert mw == pytest.approx(float(pdf.mass_W(0, 1)), abs=1e-12)
    assert pdf.dirac_weight_N + pdf.dirac_weight_W + mn + mw == pytest.approx(1.0, abs=1e-11)


def test_stationary_pdf_shape():
    pdf = exact_stationary_pdf(LAM, MU, S, XBAR)
    x = np.linspace(1e-9, 1, 2001)
    assert np.all(pdf.density_N(x) >= 0) and np.all(pdf.density_W(x) >= 0)
    assert np.all(pdf.density_W(x[x > XBAR]) == 0)


@pytest.mark.parametrize("args", [(1.0, 0.5, S, 0.5), (LAM, MU, S, 1.0), (LAM, MU, S, 0.0), (LAM, MU, 0.0, 0.5)])
def test_stationary_pdf_rejects(args):
    with pytest.raises(ValidationError):
        exact_stationary_pdf(*args)


def test_estimator_wrapper(fig_model):
    est = ExactSingleRegime().fit(fig_model)
    assert est.threshold_ == pytest.approx(XBAR, abs=1e-6)
    assert est.predict([0.5, 0.9]).tolist() == [True, False]
    assert est.value(1.0)[0] == pytest.approx(est.solution_.phi_at_one)


@given(
    lam=st.floats(0.05, 1.0),
    ratio=st.floats(1.5, 20.0),
    delta=st.floats(0.02, 0.5),
    c=st.floats(0.05, 1.0),
    d=st.floats(0.05, 1.0),
    S=st.floats(0.02, 0.3),
)
@settings(max_examples=40, deadline=None)
def test_pasting_residuals_small_whenever_solved(lam, ratio, delta, c, d, S):
    model = ModelSpec(lam, lam * ratio, delta, c, d, speeds=(S,))
    try:
        sol = solve_smooth_pasting(model)
    except NoInteriorThreshold:
        assume(False)
    r0, r1 = pasting_residuals(sol)
    scale = max(1.0, abs(sol.phi_at_one) * math.exp(delta / S))
    assert abs(r0) <= 1e-10 * scale and abs(r1) <= 1e-10 * scale / S
    assert 0 < sol.threshold < 1
    pdf = exact_stationary_pdf(lam, lam * ratio, S, sol.threshold)
    assert abs(pdf.total_mass() - 1) <= 1e-12
