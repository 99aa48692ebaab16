"""
Decay-rate fits, the dominator-bound search and the exponent-ladder pipeline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._numerics import ContractError, trapezoid_convolution
from .decay_ode import integrability_check, iteration_schedule, solve_dominator
from .energy import balance_residual, energy_series, monotonicity_excess

DEFAULT_BETAS = tuple(float(b) for b in np.geomspace(0.01, 1.0, 9))
DEFAULT_KAPPAS = (0.0, 1.0, 10.0)
C_MAX = 1e6
PLATEAU_TOL = 1e-2


@dataclass
class DecayFit:
    """Least-squares decay fit on a log scale.

    ``params`` holds ``C`` and ``omega`` (exponential), ``C`` and ``slope``
    (power) or ``C``, ``beta``, ``kappa`` (dominator bound). ``goodness`` is
    the RMS of the log residuals over ``window``.
    """

    model: str
    params: dict
    window: tuple
    goodness: float
    n_points: int = 0

    def __getattr__(self, name):
        try:
            return self.__dict__["params"][name]
        except KeyError:
            raise AttributeError(name) from None


def _window_mask(t, window, floor=None):
    t = np.asarray(t, dtype=float)
    if window is None:
        lo = t[0] + 0.1 * (t[-1] - t[0])
        if floor is not None:
            lo = max(lo, floor)
        window = (lo, t[-1])
    mask = (t >= window[0]) & (t <= window[1])
    if np.count_nonzero(mask) < 2:
        raise ContractError(f"fewer than two samples in window {window}")
    return mask, (float(window[0]), float(window[1]))


def _loglinear(x, logv):
    slope, intercept = np.polyfit(x, logv, 1)
    resid = logv - (intercept + slope * x)
    return float(slope), float(intercept), float(np.sqrt(np.mean(resid**2)))


def fit_exponential(times, values, window=None):
    """Fit ``values ~ C exp(-omega t)`` on ``window`` (default: drop the first 10%)."""
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    mask, window = _window_mask(t, window)
    if np.any(v[mask] <= 0):
        raise ContractError("values must be positive on the fit window")
    slope, intercept, rms = _loglinear(t[mask], np.log(v[mask]))
    return DecayFit("exponential", {"C": math.exp(intercept), "omega": -slope}, window, rms,
                    int(mask.sum()))


def fit_power(times, values, window=None):
    """Fit ``values ~ C (1+t)^slope``; the window is kept inside ``t >= 1``."""
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    mask, window = _window_mask(t, window, floor=1.0)
    if window[0] < 1.0:
        raise ContractError("power fits need a window inside t >= 1")
    if np.any(v[mask] <= 0):
        raise ContractError("values must be positive on the fit window")
    slope, intercept, rms = _loglinear(np.log1p(t[mask]), np.log(v[mask]))
    return DecayFit("power", {"C": math.exp(intercept), "slope": slope}, window, rms,
                    int(mask.sum()))


@dataclass
class BoundResult:
    C: float
    beta: Optional[float]
    kappa: Optional[float]
    passed: bool
    table: list = field(default_factory=list, repr=False)

    @property
    def fit(self):
        return DecayFit("dominator-bound", {"C": self.C, "beta": self.beta, "kappa": self.kappa},
                        (None, None), math.nan)


def verify_dominator_bound(times, energy, ysol, beta_grid=DEFAULT_BETAS,
                           kappa_grid=DEFAULT_KAPPAS, c_max=C_MAX, tail_fraction=0.1):
    """Search ``(beta, kappa)`` for the smallest ``C`` with ``E(t) <= C y(beta t + kappa)``.

    A candidate counts as finite when ``C <= c_max`` and the sup of
    ``E / y(beta t + kappa)`` is not reached in the final ``tail_fraction`` of
    the window; a ratio still climbing at the end of the data has not shown a
    finite sup. Ties go to the lexicographically smallest ``(beta, kappa)``.
    """
    t = np.asarray(times, dtype=float)
    E = np.asarray(energy, dtype=float)
    head = max(1, int(math.floor((1.0 - tail_fraction) * t.size)))
    best = None
    table = []
    for beta in sorted(beta_grid):
        for kappa in sorted(kappa_grid):
            y = np.asarray(ysol.at(beta * t + kappa), dtype=float)
            if not (np.all(np.isfinite(y)) and np.all(y > 0)):
                table.append((beta, kappa, math.inf, False))
                continue
            ratio = E / y
            C = float(np.max(ratio))
            settled = t.size == 1 or float(np.max(ratio[head:])) <= float(np.max(ratio[:head]))
            ok = bool(math.isfinite(C) and C <= c_max and settled)
            table.append((beta, kappa, C, ok))
            if ok and (best is None or C < best[0]):
                best = (C, beta, kappa)
    if best is None:
        return BoundResult(math.inf, None, None, False, table)
    return BoundResult(best[0], best[1], best[2], True, table)


@dataclass
class IterationRung:
    alpha: float
    sup: float
    growth: float
    plateau: bool
    series: np.ndarray = field(repr=False, default=None)


@dataclass
class IterationReport:
    rungs: list
    schedule: list

    @property
    def passed(self):
        return all(r.plateau for r in self.rungs)


def history_weighted_gap(traj, weight):
    """``int_0^t weight(t-s) sum_j lam_j (u_j(t) - u_j(s))^2 ds`` at every grid time."""
    lam = traj.op.eigenvalues[:, None]
    u = traj.u
    dt = traj.dt
    W = trapezoid_convolution(weight, np.ones(traj.t.size), dt)
    Mu = trapezoid_convolution(weight, u, dt)
    Mu2 = trapezoid_convolution(weight, u * u, dt)
    c = np.sum(lam * (u * u * W - 2.0 * u * Mu + Mu2), axis=0)
    return np.maximum(c, 0.0)


def plateau_growth(running_sup, start_fraction=0.75):
    """Relative growth of a running sup over the final quarter of the window."""
    s_end = float(running_sup[-1])
    if s_end <= 0:
        return 0.0
    i = int(math.floor(start_fraction * (running_sup.size - 1)))
    return (s_end - float(running_sup[i])) / s_end


def run_iteration_pipeline(traj, alpha0, schedule=None, tol=PLATEAU_TOL):
    """Running sups of ``c(a, t) = int_0^t g^(1-a)(t-s) f^2(t,s) ds`` for each rung ``a``.

    ``f^2(t,s) = |A^(1/2)(u(t) - u(s))|^2``. A rung plateaus when its running
    sup grows by at most ``tol`` (relative) over the last quarter of the run.
    """
    if schedule is None:
        schedule = iteration_schedule(alpha0)
    g, _ = traj.kernel_samples()
    rungs = []
    for a in schedule:
        weight = np.ones_like(g) if a >= 1.0 else np.power(np.maximum(g, 0.0), 1.0 - a)
        c = history_weighted_gap(traj, weight)
        run_sup = np.maximum.accumulate(c)
        growth = plateau_growth(run_sup)
        rungs.append(IterationRung(float(a), float(run_sup[-1]), growth, growth <= tol, c))
    return IterationReport(rungs, list(schedule))


def choose_alpha0(dom, y0, grid=None):
    """Largest ``alpha0`` on ``grid`` for which ``y^(1-alpha0)`` is integrable."""
    if grid is None:
        grid = np.round(np.arange(0.05, 0.951, 0.05), 10)
    for a in sorted(grid, reverse=True):
        ok, _, _ = integrability_check(dom, y0, float(a))
        if ok:
            return float(a)
    raise ContractError("no alpha0 on the grid makes y^(1-alpha0) integrable")


@dataclass
class RefinementStudy:
    dts: list
    residuals: list
    monotone: bool
    ratios: list


def refinement_study(params, kernel, op, ic, T, dt, levels=3, k=None, workers=1):
    """Relative balance residual at ``dt, dt/2, ...``; flags non-decreasing residuals."""
    from .simulator import run

    dts = [dt / 2**i for i in range(levels)]
    res = []
    for h in dts:
        series = energy_series(run(params, kernel, op, ic, T, h, workers=workers), k=k)
        res.append(balance_residual(series)[1])
    ratios = [res[i] / res[i + 1] if res[i + 1] > 0 else math.inf for i in range(levels - 1)]
    monotone = all(res[i + 1] < res[i] for i in range(levels - 1)) or all(r == 0 for r in res)
    return RefinementStudy(dts, res, monotone, ratios)


# verdicts ---------------------------------------------------------------------------

@dataclass
class Verdict:
    name: str
    passed: bool
    detail: str


@dataclass
class AnalysisReport:
    scenario: str
    assumptions: str
    fits: list
    verdicts: list
    bound: Optional[BoundResult] = None
    iteration: Optional[IterationReport] = None
    notes: list = field(default_factory=list)

    @property
    def passed(self):
        return all(v.passed for v in self.verdicts)

    def text(self):
        lines = [f"scenario: {self.scenario}", "assumptions:"]
        lines += ["  " + s for s in self.assumptions.splitlines()]
        lines.append("fits:")
        for f in self.fits:
            params = ", ".join(f"{k}={v!r}" for k, v in f.params.items())
            lines.append(f"  {f.model}: {params}; window={f.window}; log-rms={f.goodness!r}")
        if self.bound is not None:
            b = self.bound
            lines.append(f"dominator bound: C={b.C!r} beta={b.beta!r} kappa={b.kappa!r} "
                         f"{'PASS' if b.passed else 'FAIL'}")
        if self.iteration is not None:
            lines.append("iteration ladder:")
            lines.append("  alpha_k  sup c(alpha_k,t)  growth  plateau")
            for r in self.iteration.rungs:
                lines.append(f"  {r.alpha!r}  {r.sup!r}  {r.growth!r}  {'yes' if r.plateau else 'no'}")
        lines.append("verdicts:")
        for v in self.verdicts:
            lines.append(f"  [{'PASS' if v.passed else 'FAIL'}] {v.name}: {v.detail}")
        for n in self.notes:
            lines.append(f"note: {n}")
        lines.append(f"overall: {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines) + "\n"


def _tail_window(t, fraction=0.5):
    return (float(t[0] + (1 - fraction) * (t[-1] - t[0])), float(t[-1]))


def analyze_memoryless(series, scenario="", assumptions=""):
    """Verdict for a run without memory: exponential decay of the memoryless energy."""
    p = series.params
    t = series.t
    fits, verdicts, notes = [], [], []
    if t.size < 3:
        raise ContractError("need at least three grid points to analyse decay")
    hat = series.hatE
    if np.all(hat[t >= 0.1 * t[-1]] > 0):
        fit = fit_exponential(t, hat)
        fits.append(fit)
        omega = fit.params["omega"]
    else:
        omega = math.inf if np.all(hat == 0) else math.nan
    head = max(1, int(0.9 * t.size))
    tail_max = float(np.max(hat[head:]))
    omega = float(omega)
    decays = bool(omega > 1e-4 and tail_max < 0.5 * hat[0])
    verdicts.append(Verdict("memoryless exponential decay", decays,
                            f"omega={omega!r}, max tail hatE / hatE(0) = "
                            f"{float(tail_max / hat[0]) if hat[0] > 0 else 0.0!r}"))
    if p.gamma <= 0:
        drift = float(np.max(np.abs(series.hatE1 - series.hatE1[0])) / max(series.hatE1[0], 1e-300))
        notes.append(f"gamma = {p.gamma!r} <= 0: hatE1 is conserved (relative drift {drift!r}); "
                     "no decay is expected")
    return AnalysisReport(scenario, assumptions, fits, verdicts, notes=notes)


def analyze_memory(traj, series, dom, alpha0, scenario="", assumptions="", balance_tol=1e-3):
    """Fits, dominator bound, ladder plateaus and energy bookkeeping for a memory run."""
    t = series.t
    if t.size < 3:
        raise ContractError("need at least three grid points to analyse decay")
    fits, verdicts = [], []
    E = series.E
    abs_res, rel_res = balance_residual(series)
    verdicts.append(Verdict("energy balance", rel_res <= balance_tol,
                            f"relative residual {rel_res!r} (tolerance {balance_tol!r})"))
    excess = monotonicity_excess(series)
    mono_tol = float(10 * abs_res + 1e-14 * abs(E[0]))
    verdicts.append(Verdict("E nonincreasing", excess <= mono_tol,
                            f"largest step increase {excess!r} (tolerance {mono_tol!r})"))
    if np.all(E[t >= 0.1 * t[-1]] > 0):
        fits.append(fit_exponential(t, E))
        if t[-1] > 2:
            fits.append(fit_power(t, E, _tail_window(t)))
    ysol = solve_dominator(dom, traj.kernel.g0, float(t[-1]) * DEFAULT_BETAS[-1] + 2 * DEFAULT_KAPPAS[-1],
                           traj.dt)
    bound = verify_dominator_bound(t, E, ysol)
    verdicts.append(Verdict("dominator bound", bound.passed,
                            f"C={bound.C!r} at beta={bound.beta!r}, kappa={bound.kappa!r}"))
    ladder = run_iteration_pipeline(traj, alpha0)
    worst = max(r.growth for r in ladder.rungs)
    verdicts.append(Verdict("ladder plateaus", ladder.passed,
                            f"{len(ladder.rungs)} rungs, worst growth {worst!r}"))
    return AnalysisReport(scenario, assumptions, fits, verdicts, bound=bound, iteration=ladder)
