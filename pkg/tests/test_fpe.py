from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.exceptions import NotFittedError

from delayed_impulse.exact import exact_stationary_pdf
from delayed_impulse.exceptions import ConvergenceError, SchemeViolation, ValidationError
from delayed_impulse.fpe import (
    CellGrid,
    DensityFields,
    FokkerPlanckSolver,
    extract_boundary_weights,
    fpe_step,
    initial_density,
    resetting_mass,
    solve_fpe_stationary,
    stability_bound,
)
from delayed_impulse.hjbe import Policy, threshold_cell
from delayed_impulse.markov import RegimeChain, stationary_distribution
from delayed_impulse.model import ModelSpec
from delayed_impulse.studies import fpe_errors

from conftest import unchecked_model

LAM, MU, S = 1 / 7, 1.0, 0.07
SINGLE = RegimeChain.single()


def fields_from(pn, pw, grid, thresholds):
    pol = Policy(list(thresholds))
    act = pol.cell_activation(grid.n_intervals)
    return DensityFields(np.atleast_2d(pn).astype(float), np.atleast_2d(pw).astype(float), grid, act,
                         [threshold_cell(t, grid.n_intervals) for t in thresholds])


def test_cell_grid():
    g = CellGrid(50)
    assert g.cell_count == 51
    assert g.sizes[0] == g.sizes[-1] == pytest.approx(0.01)
    assert np.allclose(g.sizes[1:-1], 0.02)
    assert g.sizes.sum() == pytest.approx(1.0, abs=1e-15)
    assert g.faces.size == 50 and g.faces[0] == pytest.approx(0.01)


def test_resetting_mass_examples():
    g = CellGrid(20)
    zero = fields_from(np.ones(21), np.zeros(21), g, [0.5])
    assert resetting_mass(zero, 0) == 0.0
    pw = np.zeros(21)
    pw[:11] = 1.0
    rect = fields_from(np.zeros(21), pw, g, [0.5])
    assert resetting_mass(rect, 0) == pytest.approx(g.sizes[:11].sum())
    assert resetting_mass(rect, 0) == pytest.approx(0.5 + 0.5 * g.dx)


def test_resetting_mass_of_sampled_exact_density():
    xb = 0.807182
    pdf = exact_stationary_pdf(LAM, MU, S, xb)
    exact_c = float(pdf.mass_W(0, 1))
    errs = []
    for L in (50, 100, 200):
        g = CellGrid(L)
        pw = pdf.density_W(g.centers)
        f = fields_from(np.zeros(L + 1), pw, g, [xb])
        errs.append(abs(resetting_mass(f, 0) - exact_c))
    assert errs[0] < 2 * pdf.F * pdf.resetting_mass / 50
    assert errs[2] < errs[0]


def test_stability_bound_formula(fig_model):
    g = CellGrid(50)
    chain = RegimeChain([[0, 2.0], [0.5, 0]])
    m = ModelSpec(LAM, MU, 0.1, 0.3, 0.2, speeds=(0.07, 0.3))
    assert stability_bound(m, chain, g) == pytest.approx(0.5 / (0.3 / 0.01 + LAM + MU + 2.0))
    with pytest.raises(ValidationError, match="stability"):
        solve_fpe_stationary(m, chain, Policy([0.5, 0.5]), g, dt=1.0)


@st.composite
def random_state(draw):
    R = draw(st.integers(1, 3))
    L = draw(st.integers(4, 30))
    seed = draw(st.integers(0, 2 ** 32 - 1))
    rng = np.random.default_rng(seed)
    speeds = tuple(rng.uniform(0, 0.5, R))
    rates = rng.uniform(0.1, 3.0, (R, R))
    lam = rng.uniform(0.05, 1.0)
    mu = lam + rng.uniform(0.05, 3.0)
    model = ModelSpec(lam, mu, 0.1, 0.3, 0.2, speeds=speeds)
    chain = RegimeChain(rates)
    thresholds = [float(t) for t in rng.uniform(0, 1, R)]
    g = CellGrid(L)
    pn = rng.uniform(0, 1, (R, L + 1))
    pw = rng.uniform(0, 1, (R, L + 1))
    f = fields_from(pn, pw, g, thresholds)
    m = f.total_mass()
    f.p_N /= m
    f.p_W /= m
    return model, chain, f


@given(random_state(), st.sampled_from(["upwind", "weno"]))
@settings(max_examples=60, deadline=None)
def test_step_conserves_mass_and_positivity(state, recon):
    model, chain, f = state
    dt = stability_bound(model, chain, f.grid)
    new = fpe_step(f, model, chain, dt, recon)
    assert abs(new.total_mass() - f.total_mass()) <= 1e-14
    assert new.p_N.min() >= -1e-12 and new.p_W.min() >= -1e-12


@given(random_state(), st.sampled_from(["upwind", "weno"]))
@settings(max_examples=25, deadline=None)
def test_kernel_step_matches_reference(state, recon):
    model, chain, f = state
    dt = stability_bound(model, chain, f.grid)
    ref = fpe_step(f, model, chain, dt, recon)
    pol = Policy([None if c < 0 else (c / f.grid.n_intervals) for c in f.threshold_cells])
    out, _, info = solve_fpe_stationary(model, chain, pol, f.grid, dt=dt, reconstruction=recon, tol=1e300, initial=f)
    assert info["iterations"] == 1
    assert np.allclose(out.p_N, ref.p_N, rtol=0, atol=1e-15)
    assert np.allclose(out.p_W, ref.p_W, rtol=0, atol=1e-15)


def test_pure_advection_accumulates_at_origin():
    m = unchecked_model(lam=0.0, mu=0.0)
    g = CellGrid(20)
    pn = np.zeros(21)
    pn[10] = 1.0 / g.sizes[10]
    f = fields_from(pn, np.zeros(21), g, [None])
    dt = 0.5 * g.sizes.min() / S
    for _ in range(300):
        f = fpe_step(f, m, SINGLE, dt, "upwind")
    assert f.p_N[0, 0] * g.sizes[0] > 0.999
    assert abs(f.total_mass() - 1) < 1e-13


def test_decoupled_regimes_step_independently():
    g = CellGrid(25)
    rng = np.random.default_rng(5)
    two = ModelSpec(LAM, MU, 0.1, 0.3, 0.2, speeds=(0.07, 0.2))
    pn, pw = rng.uniform(0, 1, (2, 26)), rng.uniform(0, 1, (2, 26))
    zero_chain = RegimeChain([[0, 0], [0, 0]])
    both = fpe_step(fields_from(pn, pw, g, [0.4, 0.7]), two, zero_chain, 1e-3)
    for i, (sp, t) in enumerate(((0.07, 0.4), (0.2, 0.7))):
        one = fpe_step(fields_from(pn[i], pw[i], g, [t]), two.with_(speeds=(sp,)), SINGLE, 1e-3)
        assert np.array_equal(both.p_N[i], one.p_N[0]) and np.array_equal(both.p_W[i], one.p_W[0])


def test_never_intervene_depletes(fig_model):
    g = CellGrid(20)
    _, summary, _ = solve_fpe_stationary(fig_model, None, Policy([None]), g, reconstruction="upwind")
    assert summary.P0 == pytest.approx(1.0, abs=1e-10)
    assert summary.concentrated_at_zero[0]


def test_boundary_weights_flags():
    g = CellGrid(50)
    uniform = extract_boundary_weights(fields_from(np.ones(51), np.zeros(51), g, [None]))
    assert uniform.dirac_weight_N[0] == pytest.approx(g.sizes[0])
    assert not uniform.concentrated_at_zero[0]
    zero = extract_boundary_weights(fields_from(np.zeros(51), np.zeros(51), g, [None]))
    assert zero.P0 == 0 and zero.P1 == 0


def test_boundary_weights_of_injected_exact_solution():
    xb = 0.807182
    pdf = exact_stationary_pdf(LAM, MU, S, xb)
    g = CellGrid(50)
    pn = pdf.density_N(g.centers)
    pw = pdf.density_W(g.centers)
    pn[0] = pdf.dirac_weight_N / g.sizes[0]
    pw[0] = pdf.dirac_weight_W / g.sizes[0]
    s = extract_boundary_weights(fields_from(pn, pw, g, [xb]))
    assert s.dirac_weight_N[0] == pytest.approx(0.12534, abs=g.dx)
    assert s.dirac_weight_W[0] == pytest.approx(0.02089, abs=g.dx)
    assert s.concentrated_at_zero[0]
    assert 0 <= s.P0 + s.P1 <= 1


@pytest.fixture(scope="module")
def single_solution(fig_model):
    return solve_fpe_stationary(fig_model, None, Policy([0.807]), CellGrid(50))


def test_single_regime_stationary(single_solution):
    fields, summary, info = single_solution
    assert abs(fields.total_mass() - 1) < 1e-13
    assert info["max_step_mass_change"] <= 1e-14
    assert fields.p_N.min() >= 0 and fields.p_W.min() >= 0
    li = fields.threshold_cells[0]
    assert li == 40
    assert np.max(np.abs(fields.p_W[0, li + 2 :])) < 1e-12


def test_single_regime_against_closed_form(fig_model):
    # measured 1.10e-2 / 2.45e-3 / 4.08e-4: within 10% of the reference errors
    err, dn, dw, _ = fpe_errors(fig_model, 50, 0.807)
    assert err <= 1.1 * 1.02e-2
    assert dn <= 1.1 * 2.44e-3
    assert dw <= 1.1 * 4.07e-4


def test_marginals_match_stationary_chain():
    chain = RegimeChain([[0, 0.3, 0.1], [0.2, 0, 0.4], [0.5, 0.1, 0]])
    model = ModelSpec(LAM, MU, 0.1, 0.3, 0.2, speeds=(0.0, 0.05, 0.15))
    _, summary, _ = solve_fpe_stationary(model, chain, Policy([None, 0.6, 0.8]), CellGrid(30))
    assert np.allclose(summary.regime_marginals, stationary_distribution(chain), atol=1e-11)
    assert np.all(summary.waiting_mass >= 0)


def test_activation_set_policy():
    g = CellGrid(20)
    act = np.zeros((1, 21), dtype=bool)
    act[0, [2, 3, 4, 10, 11]] = True
    pol = Policy([None], activation=act, prefix=[False])
    fields, summary, _ = solve_fpe_stationary(ModelSpec(LAM, MU, 0.1, 0.3, 0.2, speeds=(S,)), None, pol, g)
    assert abs(fields.total_mass() - 1) < 1e-13
    assert summary.waiting_mass[0] > 0


def test_iteration_cap(fig_model):
    with pytest.raises(ConvergenceError):
        solve_fpe_stationary(fig_model, None, Policy([0.8]), CellGrid(20), max_iter=5)


def test_negative_density_rejected(fig_model):
    g = CellGrid(10)
    f = fields_from(np.full(11, 1.0), np.zeros(11), g, [0.5])
    f.p_N[0, 5] = -1e-6
    with pytest.raises(SchemeViolation):
        fpe_step(f, fig_model, SINGLE, 1e-4)


def test_policy_regime_mismatch(fig_model):
    with pytest.raises(ValidationError):
        initial_density(fig_model, Policy([0.5, 0.5]), CellGrid(10))


def test_estimator(fig_model):
    est = FokkerPlanckSolver(n_intervals=50)
    with pytest.raises(NotFittedError):
        est.transform([0.5])
    with pytest.raises(ValidationError):
        est.fit(fig_model)
    est.fit(fig_model, None, Policy([0.807182]))
    out = est.transform([0.0, 0.5])
    assert out.shape == (1, 2, 2)
    assert out[0, 0, 0] * 0.01 == pytest.approx(est.summary_.dirac_weight_N[0])
