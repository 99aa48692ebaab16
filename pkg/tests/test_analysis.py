import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mgtlab._numerics import ContractError
from mgtlab.analysis import (DEFAULT_BETAS, analyze_memory, analyze_memoryless, choose_alpha0,
                             fit_exponential, fit_power, history_weighted_gap, plateau_growth,
                             refinement_study, run_iteration_pipeline, verify_dominator_bound)
from mgtlab.decay_ode import iteration_schedule, solve_dominator
from mgtlab.energy import energy_series
from mgtlab.kernel import make_exponential, make_none, make_polynomial
from mgtlab.simulator import ModalOperator, run

from conftest import SPECTRUM, STANDARD

T_GRID = np.linspace(0.0, 10.0, 1001)


def test_fit_exponential_examples():
    fit = fit_exponential(T_GRID, np.exp(-2 * T_GRID))
    assert fit.omega == pytest.approx(2.0, abs=1e-8)
    assert fit.C == pytest.approx(1.0, abs=1e-8)
    assert fit.window == (1.0, 10.0)
    fit = fit_exponential(T_GRID, 3 * np.exp(-0.5 * T_GRID))
    assert (fit.omega, fit.C) == (pytest.approx(0.5), pytest.approx(3.0))


@pytest.mark.parametrize("omega", [0.1, 1.0, 10.0])
def test_fit_exponential_recovers_rate(omega):
    fit = fit_exponential(T_GRID, 2.5 * np.exp(-omega * T_GRID))
    assert abs(fit.omega - omega) <= 1e-6 * omega
    assert fit.goodness < 1e-10


def test_fit_power_examples():
    fit = fit_power(T_GRID, (1 + T_GRID) ** -2.0)
    assert fit.slope == pytest.approx(-2.0, abs=1e-10)
    fit = fit_power(T_GRID, 5 * (1 + T_GRID) ** -3.0)
    assert (fit.slope, fit.C) == (pytest.approx(-3.0), pytest.approx(5.0))


def test_fits_reject_bad_windows_and_values():
    with pytest.raises(ContractError):
        fit_exponential(T_GRID, np.cos(T_GRID))
    with pytest.raises(ContractError):
        fit_exponential(T_GRID, np.exp(-T_GRID), window=(20.0, 30.0))
    with pytest.raises(ContractError):
        fit_power(T_GRID, 1 + T_GRID, window=(0.0, 5.0))


def _exp_solution(T=60.0, y0=1.0):
    _, dom = make_exponential(0.1, 1.0)
    return solve_dominator(dom, y0, T, 0.01)


def test_bound_identity_gives_unit_constant():
    ysol = _exp_solution()
    E = ysol.at(T_GRID)
    res = verify_dominator_bound(T_GRID, E, ysol, beta_grid=(1.0,), kappa_grid=(0.0, 1.0))
    assert res.passed
    assert (res.C, res.beta, res.kappa) == (pytest.approx(1.0, rel=1e-12), 1.0, 0.0)
    assert verify_dominator_bound(T_GRID, E, ysol).C == pytest.approx(1.0, rel=1e-12)


def test_bound_exponential_energy_under_power_dominator():
    kernel, dom = make_polynomial(0.1, 2.0)
    ysol = solve_dominator(dom, kernel.g0, 40.0, 0.01)
    res = verify_dominator_bound(T_GRID, np.exp(-T_GRID), ysol)
    assert res.passed and math.isfinite(res.C)
    # closed form at beta = 1, kappa = 0: sup of 10 e^-t (1+t)^2 is at t = 1
    single = verify_dominator_bound(np.linspace(0, 10, 10001), np.exp(-np.linspace(0, 10, 10001)),
                                    ysol, beta_grid=(1.0,), kappa_grid=(0.0,))
    assert single.C == pytest.approx(40 * math.exp(-1), rel=1e-9)


def test_bound_negative_control_fails():
    # long enough that even y(0.01 t) has decayed well below 1/ln(e+t)
    ysol = _exp_solution(T=2100.0)
    t = np.linspace(0.0, 2000.0, 4001)
    res = verify_dominator_bound(t, 1 / np.log(math.e + t), ysol)
    assert not res.passed
    assert res.C == math.inf and res.beta is None


def test_bound_scales_with_energy():
    ysol = _exp_solution()
    E = np.exp(-1.5 * T_GRID)
    a = verify_dominator_bound(T_GRID, E, ysol)
    b = verify_dominator_bound(T_GRID, 2 * E, ysol)
    assert b.C == pytest.approx(2 * a.C, rel=1e-14)
    assert (a.beta, a.kappa) == (b.beta, b.kappa)


@settings(max_examples=30, deadline=None)
@given(st.floats(1.05, 4.0), st.floats(0.1, 10.0))
def test_bound_holds_pointwise_when_it_passes(rate, scale):
    ysol = _exp_solution()
    E = scale * np.exp(-rate * T_GRID)
    res = verify_dominator_bound(T_GRID, E, ysol)
    assert res.passed
    assert np.all(E <= res.C * ysol.at(res.beta * T_GRID + res.kappa) * (1 + 1e-12))


@pytest.mark.parametrize("maker,args", [(make_exponential, (0.1, 1.0)), (make_polynomial, (0.1, 2.0))])
def test_kernel_stays_below_dominator_solution(maker, args):
    kernel, dom = maker(*args)
    t = np.linspace(0.0, 100.0, 10001)
    y = solve_dominator(dom, kernel.g0, 100.0, 0.01).at(t)
    assert np.all(kernel.g(t) <= y * (1 + 1e-12))


def test_plateau_growth():
    assert plateau_growth(np.ones(10)) == 0.0
    assert plateau_growth(np.zeros(10)) == 0.0
    assert plateau_growth(np.linspace(0.0, 1.0, 101)) == pytest.approx(0.25)


def test_schedule_for_polynomial_alpha0():
    assert iteration_schedule(0.25) == [0.25, 0.5, 0.75, 1.0]


def test_ladder_on_zero_trajectory():
    kernel, _ = make_polynomial(0.1, 2.0)
    traj = run(STANDARD, kernel, ModalOperator(SPECTRUM), [], 2.0, 0.01)
    rep = run_iteration_pipeline(traj, 0.25)
    assert [r.sup for r in rep.rungs] == [0.0] * 4
    assert rep.passed


def test_weighted_gap_with_kernel_weight_is_pairing(short_memory_traj):
    traj = short_memory_traj
    g, _ = traj.kernel_samples()
    gap = history_weighted_gap(traj, g)
    assert np.allclose(gap, energy_series(traj).g_pair, rtol=0, atol=1e-13)


def test_ladder_values_increase_with_exponent(short_memory_traj):
    # g <= 1 here, so g^(1-a) grows with a
    rep = run_iteration_pipeline(short_memory_traj, 0.25)
    for lo, hi in zip(rep.rungs, rep.rungs[1:]):
        assert np.all(lo.series <= hi.series * (1 + 1e-12) + 1e-300)


def test_choose_alpha0():
    kernel, dom = make_polynomial(0.1, 2.0)
    assert choose_alpha0(dom, kernel.g0) == pytest.approx(0.45)
    kernel, dom = make_exponential(0.1, 1.0)
    assert choose_alpha0(dom, kernel.g0) == pytest.approx(0.95)


def test_refinement_study_shrinks_residual():
    kernel, _ = make_exponential(0.1, 1.0)
    study = refinement_study(STANDARD, kernel, ModalOperator(SPECTRUM), [(1.0, 0.0, 0.0)],
                             5.0, 0.004)
    assert study.monotone
    assert study.dts == [0.004, 0.002, 0.001]
    for r in study.ratios:
        assert r == pytest.approx(4.0, rel=0.15)


def test_memoryless_analysis_finds_positive_rate():
    traj = run(STANDARD, make_none(), ModalOperator(SPECTRUM), [(1.0, 0.0, 0.0)], 50.0, 0.01)
    rep = analyze_memoryless(energy_series(traj), "memoryless", "ok")
    assert rep.passed
    assert 0.2 < rep.fits[0].omega < 0.3
    assert "PASS" in rep.text()


def test_memoryless_conservative_case_is_reported(conservation_traj):
    rep = analyze_memoryless(energy_series(conservation_traj))
    assert not rep.passed
    assert any("conserved" in n for n in rep.notes)


def test_polynomial_scenario_analysis(polynomial_case):
    traj, series, _, dom = polynomial_case
    tail = fit_power(series.t, series.E, window=(50.0, 100.0))
    assert tail.slope <= -2 + 0.3
    rep = analyze_memory(traj, series, dom, 0.25, "polynomial", "ok")
    assert rep.passed, rep.text()
    assert rep.bound.beta == DEFAULT_BETAS[0] and rep.bound.kappa == 0.0
    assert rep.bound.C == pytest.approx(19.0, rel=0.05)
    assert [r.alpha for r in rep.iteration.rungs] == [0.25, 0.5, 0.75, 1.0]
    assert all(r.plateau for r in rep.iteration.rungs)
    assert "dominator bound: C=" in rep.text()
