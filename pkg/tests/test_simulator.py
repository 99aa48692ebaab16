import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mgtlab._numerics import ContractError
from mgtlab.kernel import MgtParams, check_assumptions, make_exponential, make_none, make_polynomial
from mgtlab.simulator import (AssumptionViolation, InstabilityError, ModalOperator, default_dt,
                              dirichlet_laplacian_1d, exponential_memory_update, memory_term,
                              run, step, write_history_csv)

from conftest import SPECTRUM, STANDARD

MIXED_IC = [(1.0, 0.0, 0.0), (0.2, -0.1, 0.3), (0.0, 0.05, 0.0)]


def test_dirichlet_spectrum():
    op = dirichlet_laplacian_1d(3, math.pi)
    assert np.allclose(op.eigenvalues, [1.0, 4.0, 9.0], rtol=1e-15)
    assert op.lambda0 == pytest.approx(1.0)
    one = dirichlet_laplacian_1d(1, 1.0)
    assert one.eigenvalues[0] == pytest.approx(math.pi**2)
    assert one.lambda0 == pytest.approx(1 / math.pi)
    assert one.preset == "dirichlet_laplacian_1d"
    with pytest.raises(ContractError):
        dirichlet_laplacian_1d(0, 1.0)


def test_operator_rejects_bad_spectra():
    for ev in ([0.0, 1.0], [2.0, 1.0], [1.0, 1.0], []):
        with pytest.raises(ContractError):
            ModalOperator(np.array(ev))


def test_poincare_equality_case():
    op = dirichlet_laplacian_1d(3, math.pi)
    assert op.poincare_gap([1.0, 0.0, 0.0]) == pytest.approx(0.0, abs=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 12), st.floats(0.1, 10.0),
       st.lists(st.floats(-10, 10), min_size=12, max_size=12))
def test_poincare_inequality(n, length, coeffs):
    op = dirichlet_laplacian_1d(n, length)
    c = np.array(coeffs[:n])
    assert op.poincare_gap(c) >= -1e-12 * max(1.0, float(np.sum(c * c)))


def test_memory_term_exponential_closed_form():
    kernel, _ = make_exponential(0.1, 1.0)
    ones = np.ones(1001)
    val = memory_term(ones, kernel, 1.0, 1e-3)
    assert val == pytest.approx(0.1 * (1 - math.exp(-1.0)), rel=1e-6)
    assert val == pytest.approx(0.063212, abs=1e-6)
    assert memory_term(ones, kernel, 0.0, 1e-3) == 0.0
    assert memory_term(ones, make_none(), 1.0, 1e-3) == 0.0
    with pytest.raises(ContractError):
        memory_term(ones, kernel, 2.0, 1e-3)


def test_memory_term_is_second_order():
    kernel, _ = make_polynomial(0.1, 2.0)
    exact = 0.1 * (1 - 1 / 2.0)  # int_0^1 0.1 (1+s)^-2 ds
    errs = []
    for n in (100, 200, 400):
        errs.append(abs(memory_term(np.ones(n + 1), kernel, 1.0, 1.0 / n) - exact))
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.02)
    assert errs[1] / errs[2] == pytest.approx(4.0, rel=0.02)


def test_exponential_update_matches_direct_quadrature():
    kernel, _ = make_exponential(0.3, 2.0)
    dt = 0.01
    t = dt * np.arange(301)
    u = np.cos(3 * t) + t
    M = 0.0
    for n in range(300):
        M = exponential_memory_update(M, u[n], u[n + 1], 0.3, 2.0, dt)
        direct = memory_term(u, kernel, t[n + 1], dt)
        assert abs(M - direct) <= 1e-13 * max(1.0, abs(direct))


def test_recursive_memory_agrees_along_trajectory(standard_traj):
    traj = standard_traj
    for j in range(3):
        direct = np.array([memory_term(traj.u[j], traj.kernel, traj.t[n], traj.dt)
                           for n in range(0, traj.n_steps + 1, 997)])
        rec = traj.memory[j, ::997]
        assert np.max(np.abs(rec - direct)) <= 1e-10 * np.max(np.abs(direct))


def test_stored_memory_matches_fft_aggregate(short_memory_traj):
    traj = short_memory_traj
    agg = traj.aggregates()
    assert np.allclose(traj.memory, agg["Mg"], rtol=0, atol=1e-13)


def test_conservative_mode_follows_cosine():
    params = MgtParams(1.0, 1.0, 1.0, 1.0)
    dt = math.pi / 3000
    traj = run(params, make_none(), ModalOperator(np.array([1.0])), [(1.0, 0.0, 0.0)], math.pi, dt)
    z = traj.u[0] + traj.v[0]
    assert z[-1] == pytest.approx(-1.0, abs=1e-9)
    assert np.max(np.abs(z - np.cos(traj.t))) < 1e-9


def test_zero_state_stays_zero():
    kernel, _ = make_polynomial(0.1, 2.0)
    traj = run(STANDARD, kernel, ModalOperator(SPECTRUM), [], 2.0, 0.01)
    assert not np.any(traj.u) and not np.any(traj.v) and not np.any(traj.w)


def test_zero_horizon_keeps_initial_snapshot():
    kernel, _ = make_exponential(0.1, 1.0)
    traj = run(STANDARD, kernel, ModalOperator(SPECTRUM), [(1.0, 0.0, 0.0)], 0.0, 1e-3)
    assert traj.t.tolist() == [0.0]
    assert traj.u[:, 0].tolist() == [1.0, 0.0, 0.0]


@pytest.mark.parametrize("maker,args", [(make_exponential, (0.1, 1.0)), (make_polynomial, (0.1, 2.0)),
                                        (make_exponential, (1.0, 2.0))])
def test_refinement_is_second_order(maker, args):
    kernel, _ = maker(*args)
    states = []
    for dt in (0.01, 0.005, 0.0025):
        traj = run(STANDARD, kernel, ModalOperator(SPECTRUM), MIXED_IC, 1.0, dt)
        n = traj.index(1.0)
        states.append(np.concatenate([traj.u[:, n], traj.v[:, n], traj.w[:, n]]))
    richardson = states[2] + (states[2] - states[1]) / 3
    e1 = np.max(np.abs(states[0] - richardson))
    e2 = np.max(np.abs(states[1] - richardson))
    assert e1 / e2 == pytest.approx(4.0, rel=0.1)


def test_step_reproduces_run(short_memory_traj):
    traj = short_memory_traj
    for n in (0, 5, 120):
        nxt = step(traj.state(n), traj, traj.params, traj.kernel, traj.op, traj.dt)
        assert nxt.t == pytest.approx(traj.t[n + 1])
        assert np.array_equal(nxt.u, traj.u[:, n + 1])
        assert np.array_equal(nxt.w, traj.w[:, n + 1])
    with pytest.raises(ContractError):
        step(traj.state(0), traj, traj.params, traj.kernel, traj.op, traj.dt / 2)


@pytest.mark.parametrize("maker,args", [(make_exponential, (0.1, 1.0)), (make_polynomial, (0.1, 2.0))])
def test_modes_decouple(maker, args):
    kernel, _ = maker(*args)
    joint = run(STANDARD, kernel, ModalOperator(SPECTRUM), MIXED_IC, 2.0, 0.01)
    for j, lam in enumerate(SPECTRUM):
        alone = run(STANDARD, kernel, ModalOperator(np.array([lam])), [MIXED_IC[j]], 2.0, 0.01)
        assert np.array_equal(alone.u[0], joint.u[j])
        assert np.array_equal(alone.w[0], joint.w[j])


@pytest.mark.parametrize("workers", [2, 3, 8])
def test_worker_count_does_not_change_results(workers):
    kernel, _ = make_polynomial(0.1, 2.0)
    op = dirichlet_laplacian_1d(7, 4.0)
    ic = [(0.1 * j, -0.05 * j, 0.01) for j in range(7)]
    a = run(STANDARD, kernel, op, ic, 1.0, 0.01)
    b = run(STANDARD, kernel, op, ic, 1.0, 0.01, workers=workers)
    for name in ("u", "v", "w", "memory"):
        assert np.array_equal(getattr(a, name), getattr(b, name))


def test_instability_reports_blow_up_time():
    kernel, _ = make_exponential(0.1, 1.0)
    op = ModalOperator(np.array([1.0, 25.0, 100.0]))
    with pytest.raises(InstabilityError) as info:
        run(STANDARD, kernel, op, [(1.0, 0, 0), (0.1, 0, 0), (0.01, 0, 0)], 50.0, 1.0)
    assert 0 < info.value.t <= 50.0


def test_dt_above_cap_warns(caplog):
    op = ModalOperator(SPECTRUM)
    assert default_dt(op) == 0.01
    assert default_dt(ModalOperator(np.array([1.0, 400.0]))) == pytest.approx(0.005)
    with caplog.at_level(logging.WARNING, logger="mgtlab.simulator"):
        run(STANDARD, make_none(), op, [(1.0, 0, 0)], 0.5, 0.05)
    assert any("stability cap" in r.getMessage() for r in caplog.records)


def test_strict_run_refuses_failed_report():
    kernel, dom = make_exponential(3.0, 10.0)
    rep = check_assumptions(STANDARD, kernel, dom, 0.5)
    with pytest.raises(AssumptionViolation):
        run(STANDARD, kernel, ModalOperator(SPECTRUM), [(1.0, 0, 0)], 1.0, 0.01,
            strict=True, admissibility=rep)


def test_rejects_bad_initial_data():
    op = ModalOperator(np.array([1.0]))
    with pytest.raises(ContractError):
        run(STANDARD, make_none(), op, [(1, 0, 0), (1, 0, 0)], 1.0, 0.01)
    with pytest.raises(ContractError):
        run(STANDARD, make_none(), op, [(1, 0)], 1.0, 0.01)


def test_trajectory_index_contract(short_memory_traj):
    traj = short_memory_traj
    assert traj.index(1.0) == 100
    with pytest.raises(ContractError):
        traj.index(1.0005)
    with pytest.raises(ContractError):
        traj.index(10.0)


def test_history_csv(tmp_path, short_memory_traj):
    path = tmp_path / "hist.csv"
    write_history_csv(short_memory_traj, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "t,mode,u,v,w"
    assert len(lines) == 1 + 3 * short_memory_traj.t.size
    t, mode, u, v, w = lines[1 + 3 * 7 + 1].split(",")
    assert int(mode) == 2
    assert float(u) == short_memory_traj.u[1, 7]
