"""
Abstract decay machinery driven by a dominator ``H``.

Covers the dominator ODE ``y' + H(y) = 0``, the integral ``calH(y) = int_y dx/H``
used to compare decay profiles, the convexified transform
``H_{1,a}(s) = a s**(1-1/a) H(s**(1/a))`` with its rescaled and
``I - (I + .)^{-1}`` variants, the discrete sequence bound, the comparison
bound, a quadrature Jensen check and the fractional-exponent convolution
integrals used when the exponent is iterated up to one.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate, optimize

from ._numerics import (ContractError, bisect_increasing, cumulative_trapezoid,
                        trapezoid_convolution)
from .kernel import DecayDominator

_EPS = np.finfo(float).eps


def _power_closed_form(K, q, y0, t):
    t = np.asarray(t, dtype=float)
    if q == 1:
        return y0 * np.exp(-K * t)
    base = y0 ** (1.0 - q) + (q - 1.0) * K * t
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(base > 0, np.power(np.where(base > 0, base, 1.0), -1.0 / (q - 1.0)), np.nan)


@dataclass
class DominatorSolution:
    """Samples of ``y`` solving ``y' + H(y) = 0`` from ``y(0) = y0``."""

    t: np.ndarray
    y: np.ndarray
    closed_form: bool
    dom: DecayDominator
    y0: float
    truncated: bool = False

    def at(self, t):
        """Evaluate ``y`` anywhere the solution is known (NaN elsewhere)."""
        t = np.asarray(t, dtype=float)
        if self.closed_form:
            K, q = self.dom.power
            return _power_closed_form(K, q, self.y0, t)
        inside = (t >= self.t[0]) & (t <= self.t[-1])
        logy = np.interp(np.where(inside, t, self.t[0]), self.t, np.log(self.y))
        return np.where(inside, np.exp(logy), np.nan)

    def residual(self):
        """Max ``|y' + H(y)|`` at interior points, ``y'`` by central differences."""
        if self.t.size < 3:
            return 0.0
        dt = np.diff(self.t)
        dy = (self.y[2:] - self.y[:-2]) / (dt[1:] + dt[:-1])
        return float(np.max(np.abs(dy + self.dom.H(self.y[1:-1]))))

    def power_integral(self, exponent):
        """``int_0^inf y**exponent dt`` (closed form, or grid plus tail law)."""
        if self.closed_form:
            K, q = self.dom.power
            if q == 1:
                return self.y0**exponent / (K * exponent)
            r = exponent / (q - 1.0)
            if r <= 1:
                return math.inf
            A = self.y0 ** (1.0 - q)
            B = (q - 1.0) * K
            return A ** (1.0 - r) / (B * (r - 1.0))
        tail = self.dom.solution_tail
        if tail is None:
            return math.nan
        body = float(integrate.trapezoid(self.y**exponent, self.t))
        end = self.y[-1] ** exponent
        kind, rate = tail
        if kind == "exponential":
            return body + end / (exponent * rate)
        if rate * exponent <= 1:
            return math.inf
        return body + end * (1.0 + self.t[-1]) / (rate * exponent - 1.0)


def solve_dominator(dom, y0, T, dt):
    """Solve ``y' + H(y) = 0``, ``y(0) = y0`` on ``[0, T]`` with output step ``dt``.

    Power-law dominators use the closed form. Anything else goes through a
    classical RK4 with step halving whenever a step would leave ``y > 0``;
    if the substep underflows the solution is returned truncated.
    """
    if not y0 > 0:
        raise ContractError("y0 must be positive")
    if not (dt > 0 and T >= 0):
        raise ContractError("need dt > 0 and T >= 0")
    n = int(round(T / dt)) + 1
    t = np.linspace(0.0, dt * (n - 1), n)
    if dom.power is not None:
        K, q = dom.power
        return DominatorSolution(t, _power_closed_form(K, q, y0, t), True, dom, float(y0))

    H = dom.H

    def f(y):
        return -float(H(np.array([y]))[0])

    ys = [float(y0)]
    y = float(y0)
    truncated = False
    h_min = 1e-14 * max(T, 1.0)
    for i in range(n - 1):
        remaining = dt
        h = dt
        while remaining > 0:
            h = min(h, remaining)
            k1 = f(y)
            k2 = f(y + 0.5 * h * k1)
            k3 = f(y + 0.5 * h * k2)
            k4 = f(y + h * k3)
            y_new = y + h * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0
            if not (math.isfinite(y_new) and y_new > 0):
                h *= 0.5
                if h < h_min:
                    truncated = True
                    break
                continue
            y = y_new
            remaining -= h
        if truncated:
            break
        ys.append(y)
    ys = np.array(ys)
    return DominatorSolution(t[: ys.size], ys, False, dom, float(y0), truncated)


def integrability_check(dom, y0, alpha0, t_tail=100.0, n=20001):
    """Decide whether ``y**(1 - alpha0)`` is integrable on the half line.

    Combines a trapezoid integral over ``[0, t_tail]`` with the analytic tail
    of the solution's decay law; without a tail law the answer is "no", since
    a finite window cannot establish integrability.

    Returns ``(ok, message, value)``.
    """
    e = 1.0 - alpha0
    tail = dom.solution_tail
    if tail is None:
        return False, "dominator has no tail law; integrability not established", math.nan
    t = np.linspace(0.0, t_tail, n)
    if dom.power is not None:
        y = _power_closed_form(*dom.power, y0, t)
    else:
        y = solve_dominator(dom, y0, t_tail, t[1] - t[0]).at(t)
    if not np.all(np.isfinite(y)):
        return False, "dominator solution could not be resolved on the window", math.nan
    body = float(integrate.trapezoid(y**e, t))
    kind, rate = tail
    if kind == "exponential":
        tail_value = y[-1] ** e / (e * rate)
    elif rate * e > 1:
        tail_value = y[-1] ** e * (1.0 + t_tail) / (rate * e - 1.0)
    else:
        return (False, f"y^(1-alpha0) ~ t^-{rate * e:.6g} is not integrable (exponent <= 1)",
                math.inf)
    value = body + tail_value
    return True, f"int y^(1-alpha0) ~= {value:.6g}", value


def _calH_raw(dom, lo, hi):
    # int_lo^hi dx / H(x) in the variable u = ln x
    if lo == hi:
        return 0.0

    def integrand(u):
        x = math.exp(u)
        return x / float(dom.H(np.array([x]))[0])

    sign = 1.0
    if lo > hi:
        lo, hi, sign = hi, lo, -1.0
    val = integrate.quad(integrand, math.log(lo), math.log(hi), epsabs=0.0, epsrel=1e-13,
                         limit=400)[0]
    return sign * val


def _calH_tail(dom, y_ref):
    if dom.power is not None:
        K, q = dom.power
        return y_ref ** (1.0 - q) / (K * (q - 1.0)) if q > 1 else 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val = integrate.quad(lambda x: 1.0 / float(dom.H(np.array([x]))[0]), y_ref, np.inf,
                                 epsrel=1e-12, limit=400)[0]
        except integrate.IntegrationWarning:
            return 0.0
    return val if math.isfinite(val) else 0.0


def calH(dom, y, y_ref=1.0):
    """``int_y^{y_ref} dx/H(x)`` plus the convergent tail beyond ``y_ref``.

    When ``int^inf dx/H`` diverges (linear ``H``) the tail is dropped, which
    normalizes ``calH(y_ref) = 0``. Differences ``calH(a) - calH(b)`` do not
    depend on the normalization.
    """
    if not (y > 0 and y_ref > 0):
        if y == 0:
            raise ContractError("calH diverges at 0 because H(0) = 0")
        raise ContractError("calH needs positive arguments")
    if dom.power is not None:
        K, q = dom.power
        if q == 1:
            return math.log(y_ref / y) / K
        return y ** (1.0 - q) / (K * (q - 1.0))
    return _calH_raw(dom, y, y_ref) + _calH_tail(dom, y_ref)


def dominator_value(dom, y0, tau, y_ref=1.0):
    """``y(tau)`` for the dominator ODE from ``y0``, via ``calH`` inversion.

    Negative ``tau`` runs the ODE backwards; NaN if that leaves the domain.
    """
    tau = np.asarray(tau, dtype=float)
    if dom.power is not None:
        return _power_closed_form(*dom.power, y0, tau)
    target = calH(dom, y0, y_ref) + tau
    out = np.empty_like(tau)
    for idx, val in np.ndenumerate(target):
        # calH decreases in y, so -calH(exp(z)) increases in z
        z = bisect_increasing(lambda z: np.array([-calH(dom, math.exp(float(z[0])), y_ref)]),
                              np.array([-val]), -700.0, math.log(y0) + 1.0, xtol=1e-13)
        out[idx] = math.exp(float(z[0]))
    return out


@dataclass(frozen=True)
class ConvexTransform:
    """``H_{1,a}(s) = a s**(1 - 1/a) H(s**(1/a))`` for ``a = alpha0`` in (0, 1]."""

    alpha0: float
    dom: DecayDominator

    def __post_init__(self):
        if not 0 < self.alpha0 <= 1:
            raise ContractError(f"alpha0 must lie in (0, 1], got {self.alpha0!r}")

    def __call__(self, s):
        return h_one_alpha(self, s)

    def derivative(self, s):
        x = np.power(np.asarray(s, dtype=float), 1.0 / self.alpha0)
        return self.dom.Hprime(x) - (1.0 - self.alpha0) * self.dom.H(x) / x

    def second_derivative(self, s):
        s = np.asarray(s, dtype=float)
        k = 1.0 / self.alpha0
        x = np.power(s, k)
        h, hp, hpp = self.dom.H(x), self.dom.Hprime(x), self.dom.Hsecond(x)
        return ((k - 1.0) * (x**2 * hpp - x * hp + h) + x**2 * hpp) / s ** (k + 1.0)

    def inverse(self, y):
        """Numeric inverse on the increasing range (closed form for power ``H``)."""
        y = np.asarray(y, dtype=float)
        if self.dom.power is not None:
            K, q = self.dom.power
            e = 1.0 + (q - 1.0) / self.alpha0
            return np.power(y / (self.alpha0 * K), 1.0 / e)
        return bisect_increasing(lambda s: h_one_alpha(self, s), y, 0.0,
                                 np.maximum(y, self.dom.delta_bar), xtol=0.0)


def h_one_alpha(ct, s):
    """Evaluate ``alpha0 s**(1 - 1/alpha0) H(s**(1/alpha0))``; zero at ``s = 0``."""
    s = np.asarray(s, dtype=float)
    a = ct.alpha0
    if a == 1:
        return np.asarray(ct.dom.H(s), dtype=float)
    pos = s > 0
    safe = np.where(pos, s, 1.0)
    val = a * np.power(safe, 1.0 - 1.0 / a) * ct.dom.H(np.power(safe, 1.0 / a))
    return np.where(pos, val, 0.0)


def check_h1_convexity(ct, delta, n=1000):
    """Check that ``H_{1,alpha0}`` is increasing and convex on ``(0, delta]``.

    Uses the closed-form derivative identities when the dominator supplies
    ``H'`` and ``H''``, otherwise second differences on a geometric grid.

    Returns
    -------
    ok : bool
    witness : float or None
        First grid point where monotonicity or convexity fails.
    """
    s = np.geomspace(delta * 1e-8, delta, n)
    if ct.dom.Hprime is not None and ct.dom.Hsecond is not None:
        k = 1.0 / ct.alpha0
        x = np.power(s, k)
        h = np.asarray(ct.dom.H(x), dtype=float)
        hp = np.asarray(ct.dom.Hprime(x), dtype=float)
        hpp = np.asarray(ct.dom.Hsecond(x), dtype=float)
        d1 = hp - (1.0 - ct.alpha0) * h / x
        d1_scale = np.abs(hp) + np.abs(h / x)
        d2 = ((k - 1.0) * (x**2 * hpp - x * hp + h) + x**2 * hpp)
        d2_scale = (k - 1.0) * (np.abs(x**2 * hpp) + np.abs(x * hp) + np.abs(h)) + np.abs(x**2 * hpp)
        bad = (d1 < -1e-10 * d1_scale) | (d2 < -1e-10 * d2_scale)
    else:
        v = h_one_alpha(ct, s)
        slopes = np.diff(v) / np.diff(s)
        scale = np.abs(slopes).max() or 1.0
        bad = np.zeros_like(s, dtype=bool)
        bad[1:] |= slopes < 0
        bad[1:-1] |= np.diff(slopes) < -1e-9 * scale
    if np.any(bad):
        return False, float(s[int(np.argmax(bad))])
    return True, None


@dataclass(frozen=True)
class HatTransform:
    """Rescaled convex function defined through its inverse

    ``Hhat^{-1}(x) = (C1/theta) T0 H_{1,a}^{-1}(a theta x / (C_sigma T0)) + C2 x``.

    The constants are existential in the decay argument; they default to 1.
    """

    ct: ConvexTransform
    C1: float = 1.0
    C2: float = 1.0
    C_sigma: float = 1.0
    theta: float = 1.0
    T0: float = 1.0

    def inverse(self, x):
        x = np.asarray(x, dtype=float)
        scale = self.ct.alpha0 * self.theta / (self.C_sigma * self.T0)
        return self.C1 / self.theta * self.T0 * self.ct.inverse(scale * x) + self.C2 * x

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        return bisect_increasing(self.inverse, y, 0.0, y / self.C2, xtol=0.0)

    def under(self, x):
        """``(I - (I + Hhat)^{-1})(x)``, equal to ``Hhat((I + Hhat)^{-1}(x))``."""
        x = np.asarray(x, dtype=float)
        # with z = Hhat^{-1}(w): z + Hhat(z) = x  <=>  Hhat^{-1}(w) + w = x
        return bisect_increasing(lambda w: self.inverse(w) + w, x, 0.0, x, xtol=0.0)


@dataclass
class SequenceBound:
    """Continuous majorant ``S`` of sequences with ``s_{m+1} + p(s_{m+1}) <= s_m``."""

    p: Callable
    s0: float
    q: Callable
    S: Callable
    samples: np.ndarray
    converges: bool = True


def _inverse_identity_plus(p):
    """``(I + p)^{-1}`` on ``x >= 0`` by Brent's method bracketed in ``[0, x]``."""
    def one(xi):
        if xi <= 0.0:
            return 0.0
        return optimize.brentq(lambda z: z + float(p(np.array(z))) - xi, 0.0, xi,
                               xtol=1e-300, rtol=4 * np.finfo(float).eps)

    def inv(x):
        x = np.asarray(x, dtype=float)
        return np.array([one(float(xi)) for xi in x.ravel()]).reshape(x.shape)
    return inv


def lt_bound(p, s0, m_max, probe_points=1000):
    """Sequence bound from ``S' + q(S) = 0``, ``q = I - (I + p)^{-1}``, ``S(0) = s0``.

    ``(I + p)^{-1}`` is computed by Brent's method to a few ulps.
    Any positive sequence with ``s_{m+1} + p(s_{m+1}) <= s_m`` and
    ``s_0 <= s0`` stays below ``S(m)``.
    """
    if not s0 > 0:
        raise ContractError("s0 must be positive")
    probe = np.linspace(0.0, s0, probe_points)
    pv = np.asarray(p(probe), dtype=float)
    if abs(pv[0]) > 1e-14:
        raise ContractError(f"p(0) = {pv[0]!r} must vanish")
    if np.any(np.diff(pv) < -1e-14 * max(1.0, np.abs(pv).max())):
        raise ContractError("p is not increasing on [0, s0]")
    converges = bool(np.all(pv[1:] > 0))
    if not converges:
        warnings.warn("p(x) > 0 fails for some x > 0: S need not tend to zero", RuntimeWarning,
                      stacklevel=2)
    inv = _inverse_identity_plus(p)

    def q(x):
        x = np.asarray(x, dtype=float)
        return x - inv(x)

    sol = integrate.solve_ivp(lambda t, S: -q(S), (0.0, float(m_max)), [float(s0)],
                              method="DOP853", rtol=1e-12, atol=1e-300, dense_output=True)
    if not sol.success:
        raise ContractError(f"sequence-bound ODE failed: {sol.message}")

    def S(t):
        return sol.sol(np.asarray(t, dtype=float))[0]

    samples = S(np.arange(m_max + 1, dtype=float))
    samples[0] = s0
    return SequenceBound(p, float(s0), q, S, samples, converges)


@dataclass
class ComparisonResult:
    """Dominating curve ``y**alpha0(beta t + kappa)`` and the integrated ``s``."""

    kappa: float
    bound: Callable
    t: np.ndarray
    s: np.ndarray
    bound_values: np.ndarray
    t_start: float
    ok: bool
    shifted: bool = False
    max_excess: float = 0.0


def comparison_bound(dom, alpha0, beta, s0, y0, T=100.0, n=2001, y_ref=1.0, rtol=1e-11):
    """Bound ``s(t) <= y**alpha0(beta t + kappa)`` for ``s' = -beta H_{1,alpha0}(s)``.

    ``kappa = calH(s0**(1/alpha0)) - calH(y0)``. The ODE for ``s`` is
    integrated numerically on ``[0, T]`` and compared pointwise with the
    bound; when ``kappa < 0`` the comparison starts at ``-kappa/beta``.
    """
    if not (s0 > 0 and y0 > 0 and beta > 0):
        raise ContractError("s0, y0 and beta must be positive")
    ct = ConvexTransform(alpha0, dom)
    kappa = calH(dom, s0 ** (1.0 / alpha0), y_ref) - calH(dom, y0, y_ref)

    def bound(t):
        return np.power(dominator_value(dom, y0, beta * np.asarray(t, dtype=float) + kappa, y_ref),
                        alpha0)

    t = np.linspace(0.0, T, n)
    sol = integrate.solve_ivp(lambda _t, s: -beta * ct(s), (0.0, T), [float(s0)],
                              method="DOP853", rtol=rtol, atol=1e-300, t_eval=t)
    if not sol.success:
        raise ContractError(f"comparison ODE failed: {sol.message}")
    s = sol.y[0]
    t_start = max(0.0, -kappa / beta)
    mask = t >= t_start
    b = np.full_like(t, np.nan)
    b[mask] = bound(t[mask])
    excess = (s[mask] - b[mask]) / s0
    max_excess = float(np.nanmax(excess)) if excess.size else 0.0
    ok = bool(np.all(np.isfinite(b[mask])) and max_excess <= 1e-8)
    return ComparisonResult(kappa, bound, t, s, b, t_start, ok, shifted=t_start > 0,
                            max_excess=max_excess)


def jensen_check(phi, f, g, x, tol=1e-12):
    """Quadrature check of ``phi(int g f / k) <= int phi(g) f / k``, ``k = int f``.

    Returns ``(lhs, rhs, ok)``.
    """
    x = np.asarray(x, dtype=float)
    fx = np.asarray(f(x), dtype=float)
    gx = np.asarray(g(x), dtype=float)
    if np.any(fx < 0):
        raise ContractError("weight must be nonnegative")
    k = integrate.trapezoid(fx, x)
    if not k > 0:
        raise ContractError("total weight must be positive")
    lhs = float(phi(integrate.trapezoid(gx * fx, x) / k))
    rhs = float(integrate.trapezoid(np.asarray(phi(gx), dtype=float) * fx, x) / k)
    return lhs, rhs, lhs <= rhs + tol * max(1.0, abs(rhs))


def iteration_schedule(alpha0):
    """Exponent ladder ``[alpha0, 2 alpha0, ..., m alpha0, 1]`` with ``m alpha0 < 1 <= (m+1) alpha0``."""
    if not 0 < alpha0 < 1:
        raise ContractError(f"alpha0 must lie in (0, 1), got {alpha0!r}")
    ladder = []
    k = 1
    while k * alpha0 < 1.0 - 1e-12:
        ladder.append(k * alpha0)
        k += 1
    ladder.append(1.0)
    return ladder


@dataclass
class AlphaSequenceResult:
    exponents: list
    sups: list
    majorant: float
    bounded: list
    checked: bool
    t: np.ndarray = field(repr=False, default=None)
    series: list = field(repr=False, default_factory=list)


def alpha_sequence_integrals(ysol, alpha0, beta, kappa, T, n=4001, m=None):
    """Running suprema of the convolution integrals ``I_1 .. I_{m+1}``.

    ``I_k(t) = int_0^t y**(1 - k a)(t - s) y**((k-1) a)(beta s + kappa) ds`` for
    ``k <= m`` and ``I_{m+1}(t) = int_0^t y**(m a)(beta s + kappa) ds``, with
    ``m`` the largest integer such that ``m a < 1``. When ``y(0) <= 1`` each sup
    is checked against ``2 L`` (``L`` for ``I_{m+1}``), ``L = int_0^inf y**(1-a)``.
    """
    ladder = iteration_schedule(alpha0)
    m_auto = len(ladder) - 1
    if m is None:
        m = m_auto
    elif not (m * alpha0 < 1 <= (m + 1) * alpha0 + 1e-12):
        raise ContractError(f"m = {m} inconsistent with alpha0 = {alpha0}: need m a < 1 <= (m+1) a")
    if not beta > 1:
        raise ContractError("the sequence integrals need beta > 1")
    if kappa < 0:
        raise ContractError("the sequence integrals need kappa >= 0")
    t = np.linspace(0.0, T, n)
    dt = t[1] - t[0]
    y_direct = np.asarray(ysol.at(t), dtype=float)
    y_shift = np.asarray(ysol.at(beta * t + kappa), dtype=float)
    if not (np.all(np.isfinite(y_direct)) and np.all(np.isfinite(y_shift))):
        raise ContractError("dominator solution does not cover beta*T + kappa")
    series = []
    for k in range(1, m + 1):
        a = np.power(y_direct, 1.0 - k * alpha0)
        b = np.power(y_shift, (k - 1) * alpha0)
        series.append(trapezoid_convolution(a, b, dt))
    series.append(cumulative_trapezoid(np.power(y_shift, m * alpha0), dt))
    sups = [float(np.max(s)) for s in series]
    L = float(ysol.power_integral(1.0 - alpha0))
    checked = bool(y_direct[0] <= 1.0 and math.isfinite(L))
    bounded = []
    for k, sup in enumerate(sups, start=1):
        limit = L if k == m + 1 else 2.0 * L
        bounded.append(bool(sup <= limit + 1e-6) if checked else None)
    exponents = [k * alpha0 for k in range(1, m + 1)] + [m * alpha0]
    return AlphaSequenceResult(exponents, sups, L, bounded, checked, t, series)


def write_curve_csv(t, values, path, header=("t", "value")):
    """Write a bound curve as ``(t, value)`` rows in round-trip precision."""
    t = np.asarray(t, dtype=float)
    values = np.asarray(values, dtype=float)
    if t.shape != values.shape:
        raise ContractError("t and values must have the same shape")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for a, b in zip(t, values):
            writer.writerow([repr(float(a)), repr(float(b))])
