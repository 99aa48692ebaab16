"""
Energy functionals along a modal trajectory.

Every functional is a sum over modes of exact modal terms plus trapezoid
memory pairings built from the simulator's stored history. Two evaluation
routes are provided: single-time functions that run the quadrature directly
at one grid index, and :func:`energy_series`, which evaluates all grid times
at once through FFT convolutions. Tests check the two against each other.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from ._numerics import ContractError, cumulative_trapezoid, trapezoid_weights
from .kernel import InfeasibleError, admissible_k_sigma

ALGEBRA_RTOL = 1e-8


class AlgebraRegressionError(ArithmeticError):
    """Two algebraically equal forms of an energy disagree."""


class EquivalenceError(ArithmeticError):
    """F vanished while E did not."""


def default_multiplier(params, kernel):
    """Admissible ``(k, sigma)`` or, when none exists, the fallback ``(alpha/tau, 0)``."""
    try:
        return admissible_k_sigma(params, kernel.g0)
    except InfeasibleError:
        return params.alpha / params.tau, 0.0


# single-time evaluation by direct quadrature ------------------------------------------

def _history_terms(traj, t):
    """Direct trapezoid memory terms at one grid time.

    Returns ``(G, g_pair, gp_pair, mem_v, cross_g, cross_gp)`` where ``mem_v``
    is ``int g(t-s) (A u(s), u_t(t)) ds``.
    """
    n = traj.index(t)
    if traj.kernel.memoryless or n == 0:
        return (0.0,) * 6
    s = traj.t[: n + 1]
    lag = traj.t[n] - s
    wts = trapezoid_weights(n + 1, traj.dt)
    g = np.asarray(traj.kernel.g(lag), dtype=float) * wts
    gp = np.asarray(traj.kernel.gprime(lag), dtype=float) * wts
    lam = traj.op.eigenvalues[:, None]
    hist = traj.u[:, : n + 1]
    diff = traj.u[:, n : n + 1] - hist
    v = traj.v[:, n : n + 1]
    sq = np.sum(lam * diff**2, axis=0)
    dv = np.sum(lam * diff * v, axis=0)
    hv = np.sum(lam * hist * v, axis=0)
    return (float(np.sum(g)), float(np.sum(g * sq)), float(np.sum(gp * sq)),
            float(np.sum(g * hv)), float(np.sum(g * dv)), float(np.sum(gp * dv)))


def _modal_terms(traj, n):
    lam = traj.op.eigenvalues
    u, v, w = traj.u[:, n], traj.v[:, n], traj.w[:, n]
    return {"w2": float(np.sum(w * w)), "v2": float(np.sum(v * v)),
            "Av2": float(np.sum(lam * v * v)), "Au2": float(np.sum(lam * u * u)),
            "Auv": float(np.sum(lam * u * v)), "wv": float(np.sum(w * v))}


def pair_g(traj, t):
    """``g o A^(1/2)u = int g(t-s) sum_j lam_j (u_j(t)-u_j(s))^2 ds``."""
    return max(_history_terms(traj, t)[1], 0.0)


def e1(traj, t):
    p = traj.params
    m = _modal_terms(traj, traj.index(t))
    mem_v = _history_terms(traj, t)[3]
    return p.tau * m["w2"] + p.b * m["Av2"] + 2 * p.c2 * m["Auv"] - 2 * mem_v


def e2(traj, t):
    p = traj.params
    m = _modal_terms(traj, traj.index(t))
    G, gpair = _history_terms(traj, t)[:2]
    return (p.c2 * m["Au2"] + p.alpha * m["v2"] + 2 * p.tau * m["wv"]
            + max(gpair, 0.0) - G * m["Au2"])


def _expanded_energy(p, m, k, G, gpair, cross_g):
    """Natural energy from its expanded sum-of-squares form."""
    return (p.b * m["Av2"] + 2 * p.c2 * m["Auv"] + p.c2 * k * m["Au2"]
            + p.tau * (m["w2"] + 2 * k * m["wv"] + k * k * m["v2"])
            + k * p.tau * (p.alpha / p.tau - k) * m["v2"]
            + k * gpair - k * G * m["Au2"] + 2 * cross_g - 2 * G * m["Auv"])


def _check_algebra(direct, expanded, scale):
    if abs(direct - expanded) > ALGEBRA_RTOL * max(abs(direct), abs(expanded), scale, 1e-300):
        raise AlgebraRegressionError(f"E1 + kE2 = {direct!r} but expansion gives {expanded!r}")


def natural_energy(traj, t, k):
    """``E = E1 + k E2``, cross-checked against the expanded form."""
    direct = e1(traj, t) + k * e2(traj, t)
    p = traj.params
    m = _modal_terms(traj, traj.index(t))
    G, gpair, _, _, cross_g, _ = _history_terms(traj, t)
    expanded = _expanded_energy(p, m, k, G, max(gpair, 0.0), cross_g)
    _check_algebra(direct, expanded, standard_energy(traj, t))
    return direct


def damper(traj, t, k):
    """Dissipation rate ``R`` with ``dE/dt + R = 0``; bare ``g`` factors are ``g(t)``."""
    p = traj.params
    m = _modal_terms(traj, traj.index(t))
    _, _, gppair, _, _, cross_gp = _history_terms(traj, t)
    gt = float(traj.kernel.g(t))
    return (2 * (p.alpha - k * p.tau) * m["w2"] + 2 * (p.b * k - p.c2) * m["Av2"]
            + 2 * gt * m["Auv"] + k * gt * m["Au2"] - 2 * cross_gp - k * min(gppair, 0.0))


def standard_energy(traj, t):
    m = _modal_terms(traj, traj.index(t))
    return m["w2"] + m["Av2"] + m["Au2"] + pair_g(traj, t)


def _hat(p, lam, u, v, w):
    r = p.c2 / p.b
    h1 = (p.b * np.sum(lam * (v + r * u) ** 2, axis=0) + p.tau * np.sum((w + r * v) ** 2, axis=0)
          + r * p.gamma * np.sum(v * v, axis=0))
    h2 = p.alpha * np.sum(v * v, axis=0) + p.c2 * np.sum(lam * u * u, axis=0)
    return h1, h2


def hat_energies(traj, t):
    """Memoryless energies ``(hatE1, hatE2, hatE1 + hatE2)``."""
    n = traj.index(t)
    h1, h2 = _hat(traj.params, traj.op.eigenvalues, traj.u[:, n], traj.v[:, n], traj.w[:, n])
    return float(h1), float(h2), float(h1 + h2)


# whole-trajectory evaluation ----------------------------------------------------------

@dataclass
class EnergySeries:
    """All functionals on the trajectory grid. Arrays have one entry per grid time."""

    t: np.ndarray
    E1: np.ndarray
    E2: np.ndarray
    E: np.ndarray
    E_expanded: np.ndarray
    F: np.ndarray
    R: np.ndarray
    hatE1: np.ndarray
    hatE2: np.ndarray
    hatE: np.ndarray
    g_pair: np.ndarray
    gprime_pair: np.ndarray
    cross_c2: np.ndarray
    cross_G: np.ndarray
    cross_mem: np.ndarray
    cross_mem_prime: np.ndarray
    w2: np.ndarray
    Av2: np.ndarray
    Au2: np.ndarray
    g_t: np.ndarray
    k: float
    sigma: float
    params: object = None

    @property
    def dt(self):
        return float(self.t[1] - self.t[0]) if self.t.size > 1 else 0.0

    @property
    def residual(self):
        """Signed balance defect ``E(t) - E(0) + int_0^t R``."""
        return self.E - self.E[0] + cumulative_trapezoid(self.R, self.dt)


def energy_series(traj, k=None, sigma=None, check_algebra=True):
    """Evaluate every functional along ``traj``.

    ``k`` defaults to the admissible multiplier for the trajectory's
    parameters and kernel. With ``check_algebra`` the two forms of the
    natural energy are compared at every grid point.
    """
    p = traj.params
    if k is None:
        k, sig0 = default_multiplier(p, traj.kernel)
        sigma = sig0 if sigma is None else sigma
    sigma = 0.0 if sigma is None else sigma
    lam = traj.op.eigenvalues[:, None]
    u, v, w = traj.u, traj.v, traj.w
    agg = traj.aggregates()
    g_pair, gp_pair, cross_g = traj.memory_pairings()
    cross_gp = np.sum(lam * v * (u * agg["Gp"] - agg["Mp"]), axis=0)
    G = agg["G"]
    mem_v = np.sum(lam * v * agg["Mg"], axis=0)

    w2 = np.sum(w * w, axis=0)
    v2 = np.sum(v * v, axis=0)
    wv = np.sum(w * v, axis=0)
    Av2 = np.sum(lam * v * v, axis=0)
    Au2 = np.sum(lam * u * u, axis=0)
    Auv = np.sum(lam * u * v, axis=0)
    g_t = np.zeros_like(traj.t) if traj.kernel.memoryless else np.asarray(traj.kernel.g(traj.t), float)

    E1 = p.tau * w2 + p.b * Av2 + 2 * p.c2 * Auv - 2 * mem_v
    E2 = p.c2 * Au2 + p.alpha * v2 + 2 * p.tau * wv + g_pair - G * Au2
    E = E1 + k * E2
    modal = {"w2": w2, "v2": v2, "wv": wv, "Av2": Av2, "Au2": Au2, "Auv": Auv}
    E_exp = _expanded_energy(p, modal, k, G, g_pair, cross_g)
    F = w2 + Av2 + Au2 + g_pair
    if check_algebra:
        scale = np.maximum(np.maximum(np.abs(E), np.abs(E_exp)), F)
        bad = np.abs(E - E_exp) > ALGEBRA_RTOL * np.maximum(scale, 1e-300)
        if np.any(bad):
            i = int(np.argmax(bad))
            raise AlgebraRegressionError(
                f"E1 + kE2 = {E[i]!r} but expansion gives {E_exp[i]!r} at t = {traj.t[i]!r}")
    R = (2 * (p.alpha - k * p.tau) * w2 + 2 * (p.b * k - p.c2) * Av2 + 2 * g_t * Auv
         + k * g_t * Au2 - 2 * cross_gp - k * gp_pair)
    h1, h2 = _hat(p, lam, u, v, w)
    return EnergySeries(
        t=traj.t.copy(), E1=E1, E2=E2, E=E, E_expanded=E_exp, F=F, R=R,
        hatE1=h1, hatE2=h2, hatE=h1 + h2, g_pair=g_pair, gprime_pair=gp_pair,
        cross_c2=2 * p.c2 * Auv, cross_G=G * Auv, cross_mem=cross_g, cross_mem_prime=cross_gp,
        w2=w2, Av2=Av2, Au2=Au2, g_t=g_t, k=float(k), sigma=float(sigma), params=p)


def balance_residual(series):
    """``(absolute, relative)`` max over t of ``|E(t) - E(0) + int_0^t R|``.

    The relative form divides by ``E(0)``; it is 0 for a zero trajectory.
    """
    res = float(np.max(np.abs(series.residual)))
    e0 = abs(float(series.E[0]))
    return res, (res / e0 if e0 > 0 else (0.0 if res == 0 else math.inf))


def monotonicity_excess(series):
    """Largest one-step increase ``max_n E(t_{n+1}) - E(t_n)`` (0 if never increasing)."""
    if series.E.size < 2:
        return 0.0
    return max(float(np.max(np.diff(series.E))), 0.0)


def derivative_identity_errors(series):
    """Central-difference ``dE1/dt`` and ``dE2/dt`` minus their closed-form rates.

    Returns two arrays over the interior grid points.
    """
    p = series.params
    h = series.dt
    s = slice(1, -1)
    dE1 = (series.E1[2:] - series.E1[:-2]) / (2 * h)
    dE2 = (series.E2[2:] - series.E2[:-2]) / (2 * h)
    Auv = series.cross_c2[s] / (2 * p.c2)
    rate1 = (-2 * p.alpha * series.w2[s] + 2 * p.c2 * series.Av2[s]
             - 2 * series.g_t[s] * Auv + 2 * series.cross_mem_prime[s])
    rate2 = (2 * p.tau * series.w2[s] - 2 * p.b * series.Av2[s]
             + series.gprime_pair[s] - series.g_t[s] * series.Au2[s])
    return dE1 - rate1, dE2 - rate2


def equivalence_ratio(series, window=None):
    """Empirical ``(min E/F, max E/F)`` over grid times with ``F > 0``."""
    mask = np.ones(series.t.size, bool)
    if window is not None:
        mask &= (series.t >= window[0]) & (series.t <= window[1])
    if not np.any(mask):
        raise ContractError("empty window")
    E, F = series.E[mask], series.F[mask]
    zero = F <= 0
    if np.any(zero & (np.abs(E) > 0)):
        raise EquivalenceError("F = 0 where E != 0")
    if np.all(zero):
        raise ContractError("F vanishes on the whole window")
    r = E[~zero] / F[~zero]
    return float(np.min(r)), float(np.max(r))


def square_lemma_constants(C0):
    """Constants with ``C1 (|f|^2+|g|^2) <= |f+g|^2 + C0|g|^2 <= C2 (|f|^2+|g|^2)``."""
    if not C0 > 0:
        raise ContractError("C0 must be positive")
    return min(1 - 1 / (1 + C0 / 2), C0 / 2), 2 + C0


def square_lemma_ratio(f, g, C0):
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    num = np.sum((f + g) ** 2) + C0 * np.sum(g * g)
    den = np.sum(f * f) + np.sum(g * g)
    if den == 0:
        raise ContractError("f = g = 0")
    return float(num / den)


def dissipation_norm(series):
    """``|u_tt|^2 + |A^(1/2)u_t|^2 - g' o A^(1/2)u``, the quantity the damper controls."""
    return series.w2 + series.Av2 - series.gprime_pair


def damper_lower_constant(series):
    """Largest ``C`` with ``R >= C (|u_tt|^2 + |A^(1/2)u_t|^2 - g' o A^(1/2)u)`` on the grid."""
    d = dissipation_norm(series)
    mask = d > 1e-300
    if not np.any(mask):
        return math.inf
    return float(np.min(series.R[mask] / d[mask]))


def integral_domination(series, window_fraction=0.9):
    """``sup_t int_t^T (|u_tt|^2+|A^(1/2)u_t|^2+|A^(1/2)u|^2-g' o A^(1/2)u) ds / E(t)``.

    The sup runs over the first ``window_fraction`` of the grid where ``E > 0``.
    """
    d = dissipation_norm(series) + series.Au2
    cum = cumulative_trapezoid(d, series.dt)
    tail = cum[-1] - cum
    n = max(1, int(window_fraction * series.t.size))
    E = series.E[:n]
    mask = E > 0
    if not np.any(mask):
        return 0.0
    return float(np.max(tail[:n][mask] / E[mask]))


CSV_COLUMNS = ("t", "E1", "E2", "E", "F", "R", "hatE1", "hatE2", "hatE",
               "g_pair", "gprime_pair", "residual")


def write_energy_csv(series, path):
    """One row per grid point, floats written with ``repr`` so they round-trip."""
    cols = [series.t, series.E1, series.E2, series.E, series.F, series.R, series.hatE1,
            series.hatE2, series.hatE, series.g_pair, series.gprime_pair, series.residual]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for row in zip(*cols):
            writer.writerow([repr(float(x)) for x in row])


def read_energy_csv(path):
    """Read a CSV written by :func:`write_energy_csv` into a dict of arrays."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(x) for x in r] for r in reader]
    data = np.array(rows, dtype=float).reshape(-1, len(header))
    return {name: data[:, i] for i, name in enumerate(header)}
