"""
Memory kernels, decay dominators and the standing admissibility checks.

A memory kernel ``g`` enters the hereditary term of the equation; a decay
dominator ``H`` is a convex increasing function with ``g' + H(g) <= 0``.
The two built-in families (exponential and polynomial) satisfy that
differential inequality with equality, so their dominator ODE is solved by
``g`` itself.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate
from scipy.interpolate import PchipInterpolator

from ._numerics import ContractError

Evaluator = Callable[[np.ndarray], np.ndarray]

#: sampling horizon for the kernel and dominator checks
T_TAIL = 100.0
GRID_POINTS = 1000


class ParameterError(ValueError):
    """Invalid physical or kernel parameters."""


class InfeasibleError(RuntimeError):
    """No admissible multiplier pair (k, sigma) was found."""


@dataclass(frozen=True)
class MgtParams:
    """Physical constants of the third-order equation.

    ``gamma = alpha - c2 * tau / b`` is derived, never stored.
    """

    tau: float
    alpha: float
    b: float
    c2: float

    def __post_init__(self):
        for name in ("tau", "alpha", "b", "c2"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                raise ParameterError(f"{name} must be a positive finite number, got {value!r}")

    @property
    def gamma(self) -> float:
        return self.alpha - self.c2 * self.tau / self.b

    @property
    def g0_bound(self) -> float:
        """Upper bound ``b*alpha*gamma/tau**2`` on the kernel value at zero."""
        return self.b * self.alpha * self.gamma / self.tau**2


@dataclass(frozen=True)
class MemoryKernel:
    """Kernel ``g`` with derivative and cumulative integral ``G``.

    ``tail`` records the asymptotic law of ``g`` when known: ``("exponential",
    rate)`` or ``("power", p)`` meaning ``g ~ t**-p``.
    """

    g: Evaluator
    gprime: Evaluator
    G: Evaluator
    g0: float
    G_inf: float
    family: str
    params: dict = field(default_factory=dict)
    tail: Optional[tuple] = None

    @property
    def memoryless(self) -> bool:
        return self.family == "none"

    def samples(self, n, dt):
        """Return ``(g, g')`` sampled at ``0, dt, ..., (n-1)*dt``."""
        t = dt * np.arange(n)
        return np.asarray(self.g(t), dtype=float), np.asarray(self.gprime(t), dtype=float)


@dataclass(frozen=True)
class DecayDominator:
    """Convex increasing ``H`` with ``H(0) = 0``.

    ``power = (K, q)`` flags the closed-form family ``H(s) = K s**q`` used by
    the dominator ODE and the comparison machinery. ``tail`` optionally gives
    the decay law of the dominator solution for non-power ``H`` (same
    convention as :attr:`MemoryKernel.tail`).
    """

    H: Evaluator
    Hprime: Evaluator
    Hsecond: Evaluator
    delta_bar: float
    power: Optional[tuple] = None
    tail: Optional[tuple] = None

    @property
    def solution_tail(self):
        if self.power is not None:
            K, q = self.power
            if q == 1:
                return ("exponential", K)
            return ("power", 1.0 / (q - 1.0))
        return self.tail


def power_dominator(K, q, delta_bar=1.0):
    """Dominator ``H(s) = K s**q`` with ``q >= 1``."""
    if not (K > 0 and q >= 1):
        raise ParameterError(f"power dominator needs K > 0 and q >= 1, got K={K}, q={q}")
    K = float(K)
    q = float(q)

    def H(s):
        return K * np.power(np.asarray(s, dtype=float), q)

    def Hp(s):
        s = np.asarray(s, dtype=float)
        return K * q * np.power(s, q - 1.0) if q != 1 else np.full_like(s, K)

    def Hpp(s):
        s = np.asarray(s, dtype=float)
        if q == 1:
            return np.zeros_like(s)
        with np.errstate(divide="ignore"):
            return K * q * (q - 1.0) * np.power(s, q - 2.0)

    return DecayDominator(H, Hp, Hpp, float(delta_bar), power=(K, q))


def make_exponential(a, rate):
    """``g(t) = a exp(-rate t)`` with the linear dominator ``H(s) = rate s``."""
    if not (a > 0 and rate > 0):
        raise ParameterError(f"exponential kernel needs a > 0 and rate > 0, got a={a}, rate={rate}")
    a = float(a)
    rate = float(rate)

    def g(t):
        return a * np.exp(-rate * np.asarray(t, dtype=float))

    def gprime(t):
        return -rate * a * np.exp(-rate * np.asarray(t, dtype=float))

    def G(t):
        return (a / rate) * -np.expm1(-rate * np.asarray(t, dtype=float))

    kernel = MemoryKernel(g, gprime, G, a, a / rate, "exponential",
                          {"a": a, "rate": rate}, tail=("exponential", rate))
    return kernel, power_dominator(rate, 1.0, delta_bar=a)


def make_polynomial(a, p):
    """``g(t) = a (1+t)**-p`` with ``H(s) = p a**(-1/p) s**(1+1/p)``.

    The dominator ODE started at ``g(0)`` is solved exactly by ``g``.
    """
    if not a > 0:
        raise ParameterError(f"polynomial kernel needs a > 0, got a={a}")
    if not p > 1:
        raise ParameterError(f"polynomial kernel needs p > 1 (G diverges for p <= 1), got p={p}")
    a = float(a)
    p = float(p)

    def g(t):
        return a * np.power(1.0 + np.asarray(t, dtype=float), -p)

    def gprime(t):
        return -p * a * np.power(1.0 + np.asarray(t, dtype=float), -p - 1.0)

    def G(t):
        return a / (p - 1.0) * (1.0 - np.power(1.0 + np.asarray(t, dtype=float), 1.0 - p))

    kernel = MemoryKernel(g, gprime, G, a, a / (p - 1.0), "polynomial",
                          {"a": a, "p": p}, tail=("power", p))
    return kernel, power_dominator(p * a ** (-1.0 / p), 1.0 + 1.0 / p, delta_bar=a)


def make_none():
    """The memoryless kernel ``g = 0``; it has no dominator."""

    def zero(t):
        return np.zeros_like(np.asarray(t, dtype=float))

    return MemoryKernel(zero, zero, zero, 0.0, 0.0, "none")


def _tail_integral(value_at_end, t_end, tail):
    # integral of the tail law from t_end to infinity, matched at t_end
    kind, rate = tail
    if kind == "exponential":
        return value_at_end / rate
    if kind == "power":
        if rate <= 1:
            return math.inf
        return value_at_end * (1.0 + t_end) / (rate - 1.0)
    raise ParameterError(f"unknown tail law {kind!r}")


def make_custom(g, gprime, G=None, tail=None, G_inf=None, params=None):
    """Kernel from user callables.

    ``G`` defaults to adaptive quadrature of ``g``; ``G_inf`` to quadrature
    over the half line to absolute tolerance 1e-10.
    """
    g0 = float(np.asarray(g(np.array([0.0])))[0])
    if G is None:
        def G(t):
            t = np.atleast_1d(np.asarray(t, dtype=float))
            out = np.array([integrate.quad(lambda s: float(g(np.array([s]))[0]), 0.0, ti,
                                           epsabs=1e-12, epsrel=1e-12, limit=200)[0]
                            for ti in t.ravel()])
            return out.reshape(t.shape)
    if G_inf is None:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            G_inf = integrate.quad(lambda s: float(g(np.array([s]))[0]), 0.0, np.inf,
                                   epsabs=1e-10, epsrel=1e-10, limit=500)[0]
    return MemoryKernel(g, gprime, G, g0, float(G_inf), "custom", dict(params or {}), tail=tail)


def make_tabulated(times, values, tail=None):
    """Kernel interpolated (monotone cubic) from a table of ``(t, g)`` samples.

    Beyond the last sample the kernel follows ``tail`` (``("power", p)`` or
    ``("exponential", rate)``) matched in value; without a tail law, evaluating
    past the table is an error.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if times.ndim != 1 or times.shape != values.shape or times.size < 2:
        raise ParameterError("tabulated kernel needs matching 1-D arrays with at least two samples")
    if times[0] != 0.0 or np.any(np.diff(times) <= 0):
        raise ParameterError("tabulated kernel times must start at 0 and increase strictly")
    if np.any(values <= 0):
        raise ParameterError("tabulated kernel values must be positive")
    interp = PchipInterpolator(times, values, extrapolate=False)
    deriv = interp.derivative()
    t_end = times[-1]
    g_end = values[-1]

    def _tail_value(t):
        kind, rate = tail
        if kind == "power":
            return g_end * np.power((1.0 + t) / (1.0 + t_end), -rate)
        return g_end * np.exp(-rate * (t - t_end))

    def _tail_slope(t):
        kind, rate = tail
        if kind == "power":
            return -rate * _tail_value(t) / (1.0 + t)
        return -rate * _tail_value(t)

    def _split(t, inside, outside):
        t = np.asarray(t, dtype=float)
        beyond = t > t_end
        if np.any(beyond) and tail is None:
            raise ContractError(f"kernel evaluated at t={t.max()} beyond the table end {t_end} "
                                "and no tail law was given")
        out = np.asarray(inside(np.minimum(t, t_end)), dtype=float)
        if np.any(beyond):
            out = np.where(beyond, outside(t), out)
        return out

    def g(t):
        return _split(t, interp, _tail_value)

    def gprime(t):
        return _split(t, deriv, _tail_slope)

    antideriv = interp.antiderivative()
    G_table = float(antideriv(t_end))
    G_inf = G_table if tail is None else G_table + _tail_integral(g_end, t_end, tail)

    def G(t):
        t = np.asarray(t, dtype=float)
        if tail is None and np.any(t > t_end):
            raise ContractError(f"G evaluated beyond the table end {t_end} without a tail law")
        inside = np.asarray(antideriv(np.minimum(t, t_end)), dtype=float)
        if tail is None:
            return inside
        kind, rate = tail
        past = np.maximum(t, t_end)
        if kind == "power":
            extra = g_end * (1.0 + t_end) / (rate - 1.0) * (
                1.0 - np.power((1.0 + past) / (1.0 + t_end), 1.0 - rate))
        else:
            extra = g_end / rate * -np.expm1(-rate * (past - t_end))
        return inside + extra

    return MemoryKernel(g, gprime, G, float(values[0]), float(G_inf), "custom",
                        {"table_points": int(times.size)}, tail=tail)


@dataclass
class AdmissibilityReport:
    """Per-item verdicts for the standing assumptions.

    ``flags`` maps ``"item1"`` .. ``"item6"`` and ``"k_sigma"`` to ``True``,
    ``False`` or ``None`` (not applicable / deferred).
    """

    flags: dict
    k: Optional[float]
    sigma: Optional[float]
    alpha0: Optional[float]
    messages: list
    witnesses: dict = field(default_factory=dict)
    memoryless: bool = False

    @property
    def passed(self) -> bool:
        return all(flag is not False for flag in self.flags.values())

    @property
    def failed_items(self):
        return [name for name, flag in self.flags.items() if flag is False]

    def summary(self) -> str:
        lines = []
        for name, flag in self.flags.items():
            state = {True: "pass", False: "FAIL", None: "n/a"}[flag]
            lines.append(f"{name}: {state}")
        if self.k is not None:
            lines.append(f"k = {self.k!r}, sigma = {self.sigma!r}")
        if self.alpha0 is not None:
            lines.append(f"alpha0 = {self.alpha0!r}")
        if self.memoryless:
            lines.append("memoryless run: kernel checks bypassed")
        lines.extend(self.messages)
        return "\n".join(lines)


def admissible_k_sigma(params, g0, margin=1e-6, max_iter=200):
    """Pick a multiplier ``k`` and slack ``sigma`` with ``g0 < (k - sigma)(b k - c2)``.

    Starts at ``k = c2/b + 0.9 (alpha/tau - c2/b)``, ``sigma = k/100`` and
    bisects ``k`` towards ``alpha/tau`` and ``sigma`` towards zero until the
    inequality holds with the given margin and ``c2/b < k - sigma``.
    """
    lo = params.c2 / params.b
    hi = params.alpha / params.tau
    if not hi > lo:
        raise InfeasibleError(f"gamma = {params.gamma!r} <= 0 leaves no multiplier interval")
    k = lo + 0.9 * (hi - lo)
    sigma = k / 100.0
    for _ in range(max_iter):
        if (k - sigma) > lo and (k - sigma) * (params.b * k - params.c2) - g0 >= margin:
            return k, sigma
        k = 0.5 * (k + hi)
        sigma = 0.5 * sigma
    raise InfeasibleError(
        f"no (k, sigma) with g(0) = {g0!r} < (k - sigma)(b k - c2) after {max_iter} halvings; "
        f"bound b*alpha*gamma/tau^2 = {params.g0_bound!r}")


def _check_dominator_shape(dom, upper):
    # H(0) = 0, strictly increasing, convex on a sampled grid of [0, upper]
    x = np.concatenate([[0.0], np.geomspace(upper * 1e-9, upper, GRID_POINTS - 1)])
    h = np.asarray(dom.H(x), dtype=float)
    if abs(h[0]) > 1e-14:
        return False, f"H(0) = {float(h[0])!r} != 0", 0.0
    dh = np.diff(h)
    if np.any(dh <= 0):
        i = int(np.argmax(dh <= 0))
        return False, f"H not strictly increasing near x = {x[i + 1]!r}", float(x[i + 1])
    slopes = dh / np.diff(x)
    scale = np.abs(slopes).max()
    bad = np.diff(slopes) < -1e-9 * scale
    if np.any(bad):
        i = int(np.argmax(bad))
        return False, f"H not convex near x = {x[i + 1]!r}", float(x[i + 1])
    return True, "", None


def check_assumptions(params, kernel, dom, alpha0, op=None, t_tail=T_TAIL):
    """Evaluate every standing assumption on sampling grids.

    Failures are reported through flags and messages; nothing is raised for
    a mere violation.

    Parameters
    ----------
    params : MgtParams
    kernel : MemoryKernel
    dom : DecayDominator or None
        Must be ``None`` only for the memoryless kernel.
    alpha0 : float or None
        Integrability exponent in (0, 1); ``None`` skips item 3 with a message.
    op : ModalOperator, optional
        When given, item 5 (Poincare) is checked on its spectrum.
    """
    flags = {f"item{i}": None for i in range(1, 7)}
    flags["k_sigma"] = None
    messages = []
    witnesses = {}
    gamma = params.gamma

    flags["item6"] = gamma > 0
    if not flags["item6"]:
        messages.append(f"item6: gamma = alpha - c2*tau/b = {gamma!r} is not > 0")
        witnesses["item6"] = gamma

    if op is not None:
        ev = np.asarray(op.eigenvalues, dtype=float)
        ok = bool(ev.size > 0 and ev[0] > 0 and np.all(np.diff(ev) > 0))
        flags["item5"] = ok
        if not ok:
            messages.append("item5: operator spectrum must be positive and strictly ascending")

    if kernel.memoryless:
        k = sigma = None
        if flags["item6"]:
            k, sigma = admissible_k_sigma(params, 0.0)
            flags["k_sigma"] = True
        return AdmissibilityReport(flags, k, sigma, alpha0, messages, witnesses, memoryless=True)

    if dom is None:
        raise ContractError("a memory kernel needs a decay dominator")

    # item 1
    bound = params.g0_bound
    ok_g0 = kernel.g0 < bound
    ok_G = math.isfinite(kernel.G_inf) and kernel.G_inf < params.c2
    t_grid = np.concatenate([[0.0], np.geomspace(1e-6, t_tail, GRID_POINTS - 1)])
    g_vals = np.asarray(kernel.g(t_grid), dtype=float)
    # exact zeros far out are floating-point underflow, not a sign change
    ok_pos = bool(g_vals[0] > 0 and np.all(g_vals >= 0))
    flags["item1"] = bool(ok_g0 and ok_G and ok_pos)
    if not ok_g0:
        messages.append(f"item1: g(0) = {kernel.g0!r} is not < b*alpha*gamma/tau^2 = {bound!r}")
        witnesses["item1"] = kernel.g0
    if not ok_G:
        messages.append(f"item1: G(+inf) = {kernel.G_inf!r} is not < c2 = {params.c2!r}")
    if not ok_pos:
        i = int(np.argmax(g_vals < 0)) if g_vals[0] > 0 else 0
        messages.append(f"item1: g(t) > 0 fails at t = {float(t_grid[i])!r}")

    # item 2: H shape and g' + H(g) <= 0
    ok_shape, msg, wit = _check_dominator_shape(dom, max(kernel.g0, dom.delta_bar))
    gp = np.asarray(kernel.gprime(t_grid), dtype=float)
    hg = np.asarray(dom.H(g_vals), dtype=float)
    resid = gp + hg
    tol = 1e-10 * np.maximum(np.abs(gp), np.abs(hg))
    bad = resid > tol
    flags["item2"] = bool(ok_shape and not np.any(bad))
    if not ok_shape:
        messages.append(f"item2: {msg}")
        witnesses["item2"] = wit
    if np.any(bad):
        i = int(np.argmax(bad))
        messages.append(f"item2: g'(t) + H(g(t)) = {float(resid[i])!r} > 0 at t = {float(t_grid[i])!r}")
        witnesses["item2"] = float(t_grid[i])

    # item 3
    if alpha0 is None:
        messages.append("item3: no alpha0 supplied")
        flags["item3"] = False
    elif not 0 < alpha0 < 1:
        messages.append(f"item3: alpha0 = {alpha0!r} not in (0, 1)")
        flags["item3"] = False
    else:
        from .decay_ode import integrability_check

        ok, msg, _ = integrability_check(dom, kernel.g0, alpha0, t_tail)
        flags["item3"] = ok
        if not ok:
            messages.append(f"item3: {msg}")

    # item 4
    db = dom.delta_bar
    x = np.geomspace(db * 1e-9, db, GRID_POINTS)
    h, hp, hpp = (np.asarray(f(x), dtype=float) for f in (dom.H, dom.Hprime, dom.Hsecond))
    expr = x**2 * hpp - x * hp + h
    scale = np.abs(x**2 * hpp) + np.abs(x * hp) + np.abs(h)
    bad = expr < -1e-10 * scale
    flags["item4"] = bool(not np.any(bad) and abs(float(dom.H(np.array([0.0]))[0])) <= 1e-14)
    if np.any(bad):
        i = int(np.argmax(bad))
        messages.append(f"item4: x^2 H'' - x H' + H = {float(expr[i])!r} < 0 at x = {float(x[i])!r}")
        witnesses["item4"] = float(x[i])

    k = sigma = None
    if flags["item6"] and ok_g0:
        try:
            k, sigma = admissible_k_sigma(params, kernel.g0)
            flags["k_sigma"] = True
        except InfeasibleError as exc:
            flags["k_sigma"] = False
            messages.append(f"k_sigma: {exc}")
    else:
        flags["k_sigma"] = False
        messages.append("k_sigma: requires gamma > 0 and g(0) < b*alpha*gamma/tau^2")

    return AdmissibilityReport(flags, k, sigma, alpha0, messages, witnesses)
