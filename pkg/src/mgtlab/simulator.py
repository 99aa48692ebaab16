"""
Modal integration of the third-order equation with memory.

In the eigenbasis of the operator each mode obeys the scalar
integro-differential equation

    tau u''' + alpha u'' + c2 lam u + b lam u' - lam int_0^t g(t-s) u(s) ds = 0,

integrated here with classical RK4 on ``(u, u', u'')``. The memory integral is
evaluated by the trapezoid rule over the stored history and held at a linear
interpolation inside each step, so the scheme is second order overall.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._numerics import ContractError, trapezoid_convolution
from .kernel import MemoryKernel, MgtParams

log = logging.getLogger(__name__)

BLOWUP = 1e12


class InstabilityError(RuntimeError):
    """The integration produced NaN or exceeded the blow-up threshold."""

    def __init__(self, t, message=None):
        self.t = float(t)
        super().__init__(message or f"numerical instability at t = {self.t!r}")


class AssumptionViolation(RuntimeError):
    """Raised by strict runs whose admissibility report failed."""


@dataclass(frozen=True)
class ModalOperator:
    """Ascending positive spectrum of the self-adjoint operator."""

    eigenvalues: np.ndarray
    preset: str = "custom"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        ev = np.asarray(self.eigenvalues, dtype=float)
        if ev.ndim != 1 or ev.size == 0:
            raise ContractError("operator needs a non-empty 1-D spectrum")
        if ev[0] <= 0 or np.any(np.diff(ev) <= 0):
            raise ContractError("eigenvalues must be positive and strictly ascending")
        object.__setattr__(self, "eigenvalues", ev)

    @property
    def n_modes(self) -> int:
        return int(self.eigenvalues.size)

    @property
    def lambda0(self) -> float:
        """Poincare constant: ``||u|| <= lambda0 ||A^(1/2) u||``."""
        return float(self.eigenvalues[0] ** -0.5)

    def poincare_gap(self, coeffs):
        """``lambda0^2 ||A^(1/2) u||^2 - ||u||^2`` for modal coefficients (never negative)."""
        coeffs = np.asarray(coeffs, dtype=float)
        return float(self.lambda0**2 * np.sum(self.eigenvalues * coeffs**2) - np.sum(coeffs**2))


def dirichlet_laplacian_1d(n_modes, length):
    """Spectrum ``(j pi / length)^2`` of the Dirichlet Laplacian on an interval."""
    if n_modes < 1:
        raise ContractError("n_modes must be >= 1")
    if not length > 0:
        raise ContractError("length must be positive")
    j = np.arange(1, n_modes + 1, dtype=float)
    return ModalOperator((j * math.pi / length) ** 2, "dirichlet_laplacian_1d",
                         {"n_modes": int(n_modes), "length": float(length)})


def default_dt(op):
    """Stability cap ``min(0.1/sqrt(lam_max), 0.01)``."""
    return min(0.1 / math.sqrt(float(op.eigenvalues[-1])), 0.01)


@dataclass
class ModalState:
    u: np.ndarray
    v: np.ndarray
    w: np.ndarray
    t: float

    def __post_init__(self):
        for name in ("u", "v", "w"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise InstabilityError(self.t, f"non-finite {name} at t = {self.t!r}")


@dataclass
class Trajectory:
    """Full per-mode history on a uniform grid plus the simulator's memory values.

    ``u, v, w, memory`` have shape ``(n_modes, N + 1)``; ``memory[j, n]`` is the
    trapezoid value of ``int_0^{t_n} g(t_n - s) u_j(s) ds``.
    """

    t: np.ndarray
    dt: float
    u: np.ndarray
    v: np.ndarray
    w: np.ndarray
    memory: np.ndarray
    params: MgtParams
    kernel: MemoryKernel
    op: ModalOperator
    _aggregates: Optional[dict] = field(default=None, repr=False)

    @property
    def n_steps(self) -> int:
        return self.t.size - 1

    def index(self, t):
        """Grid index of time ``t``; contract error if ``t`` is off the stored grid."""
        n = int(round(t / self.dt)) if self.dt > 0 else 0
        if n < 0 or n > self.n_steps or abs(n * self.dt - t) > 1e-9 * max(1.0, abs(t)):
            raise ContractError(f"t = {t!r} is not on the stored grid [0, {self.t[-1]!r}]")
        return n

    def state(self, n):
        return ModalState(self.u[:, n].copy(), self.v[:, n].copy(), self.w[:, n].copy(),
                          float(self.t[n]))

    def kernel_samples(self):
        return self.kernel.samples(self.t.size, self.dt)

    def aggregates(self):
        """Trapezoid convolutions of the history with ``g`` and ``g'``.

        Keys: ``G`` and ``Gp`` (discrete integrals of ``g`` and ``g'`` over
        ``[0, t_n]``), ``Mg = g*u``, ``Qg = g*u^2``, ``Mp = g'*u``, ``Qp = g'*u^2``
        per mode. Computed once, after all modes have been integrated.
        """
        if self._aggregates is None:
            n = self.t.size
            shape = self.u.shape
            if self.kernel.memoryless:
                zeros = np.zeros(shape)
                agg = {"G": np.zeros(n), "Gp": np.zeros(n), "Mg": zeros, "Qg": zeros,
                       "Mp": zeros, "Qp": zeros}
            else:
                g, gp = self.kernel_samples()
                ones = np.ones(n)
                u2 = self.u**2
                agg = {
                    "G": trapezoid_convolution(g, ones, self.dt),
                    "Gp": trapezoid_convolution(gp, ones, self.dt),
                    "Mg": trapezoid_convolution(g, self.u, self.dt),
                    "Qg": trapezoid_convolution(g, u2, self.dt),
                    "Mp": trapezoid_convolution(gp, self.u, self.dt),
                    "Qp": trapezoid_convolution(gp, u2, self.dt),
                }
            self._aggregates = agg
        return self._aggregates

    def memory_pairings(self):
        """Per-time ``g o A^(1/2)u``, ``g' o A^(1/2)u`` and the mixed memory term.

        The mixed term is ``int g(t-s) (A^(1/2)(u(t)-u(s)), A^(1/2)u_t(t)) ds``.
        """
        agg = self.aggregates()
        lam = self.op.eigenvalues[:, None]
        u = self.u
        g_pair = np.sum(lam * (u**2 * agg["G"] - 2.0 * u * agg["Mg"] + agg["Qg"]), axis=0)
        gp_pair = np.sum(lam * (u**2 * agg["Gp"] - 2.0 * u * agg["Mp"] + agg["Qp"]), axis=0)
        # the expanded squares cancel to roundoff when u(s) ~ u(t)
        g_pair = np.maximum(g_pair, 0.0)
        gp_pair = np.minimum(gp_pair, 0.0)
        cross = np.sum(lam * self.v * (u * agg["G"] - agg["Mg"]), axis=0)
        return g_pair, gp_pair, cross


def memory_term(history_j, kernel, t, dt):
    """Trapezoid value of ``int_0^t g(t-s) u_j(s) ds`` from stored samples.

    ``history_j[i]`` is ``u_j(i dt)``; ``t`` must be a grid time covered by it.
    """
    history_j = np.asarray(history_j, dtype=float)
    n = int(round(t / dt))
    if n < 0 or n >= history_j.size or abs(n * dt - t) > 1e-9 * max(1.0, abs(t)):
        raise ContractError(f"t = {t!r} beyond the stored history")
    if n == 0 or kernel.memoryless:
        return 0.0
    g = np.asarray(kernel.g(dt * np.arange(n + 1)), dtype=float)
    weights = g[::-1].copy()
    weights[0] *= 0.5
    weights[-1] *= 0.5
    return float(dt * np.sum(weights * history_j[: n + 1]))


def exponential_memory_update(M, u_now, u_next, a, rate, dt):
    """One-step recursion of the trapezoid memory for ``g = a exp(-rate t)``."""
    decay = math.exp(-rate * dt)
    return decay * M + 0.5 * dt * a * (decay * u_now + u_next)


class _ChunkIntegrator:
    """RK4 stepper for a block of modes sharing one kernel sample table."""

    def __init__(self, params, kernel, lam, dt, g=None):
        self.dt = dt
        self.lam = np.asarray(lam, dtype=float)
        tau = params.tau
        self.c_w = params.alpha / tau
        self.c_v = params.b * self.lam / tau
        self.c_u = params.c2 * self.lam / tau
        self.c_m = self.lam / tau
        self.memoryless = kernel.memoryless
        self.recursive = kernel.family == "exponential"
        if self.recursive:
            a, rate = kernel.params["a"], kernel.params["rate"]
            self.decay = math.exp(-rate * dt)
            self.half_a = 0.5 * dt * a
            self.g0 = a
        elif not self.memoryless:
            self.g = g
            self.g0 = float(g[0])
        else:
            self.g0 = 0.0
        self.end_weight = 0.5 * dt * self.g0

    def rhs(self, y, m):
        out = np.empty_like(y)
        out[0] = y[1]
        out[1] = y[2]
        out[2] = self.c_m * m - self.c_w * y[2] - self.c_v * y[1] - self.c_u * y[0]
        return out

    def history_part(self, U, n, M_n):
        """Known part ``P`` of the memory at ``t_{n+1}`` (all but the new endpoint)."""
        if self.memoryless:
            return np.zeros_like(M_n)
        if self.recursive:
            return self.decay * M_n + self.half_a * self.decay * U[:, n]
        g = self.g
        inner = np.sum(U[:, 1 : n + 1] * g[n:0:-1], axis=1)
        return self.dt * (0.5 * g[n + 1] * U[:, 0] + inner)

    def advance(self, y, M_n, P):
        """One RK4 step; memory at stage fraction c is ``(1-c) M_n + c (P + w0 u_stage)``."""
        h = self.dt
        ew = self.end_weight
        if self.memoryless:
            zero = 0.0
            k1 = self.rhs(y, zero)
            k2 = self.rhs(y + 0.5 * h * k1, zero)
            k3 = self.rhs(y + 0.5 * h * k2, zero)
            k4 = self.rhs(y + h * k3, zero)
        else:
            k1 = self.rhs(y, M_n)
            y2 = y + 0.5 * h * k1
            k2 = self.rhs(y2, 0.5 * M_n + 0.5 * (P + ew * y2[0]))
            y3 = y + 0.5 * h * k2
            k3 = self.rhs(y3, 0.5 * M_n + 0.5 * (P + ew * y3[0]))
            y4 = y + h * k3
            k4 = self.rhs(y4, P + ew * y4[0])
        y_new = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        M_new = P + ew * y_new[0] if not self.memoryless else np.zeros_like(M_n)
        return y_new, M_new


def step(state, traj, params, kernel, op, dt):
    """Advance ``state`` (which must sit on ``traj``'s grid) by one step ``dt``.

    The history up to the state's grid index is read from ``traj``; the
    stored memory value at that index is used as the current memory.
    """
    if abs(dt - traj.dt) > 1e-12 * traj.dt:
        raise ContractError("dt must equal the trajectory step")
    n = traj.index(state.t)
    g = None if kernel.memoryless else kernel.g(dt * np.arange(n + 2))
    integ = _ChunkIntegrator(params, kernel, op.eigenvalues, dt, g)
    M_n = traj.memory[:, n]
    P = integ.history_part(traj.u, n, M_n)
    y = np.stack([state.u, state.v, state.w])
    y_new, _ = integ.advance(y, M_n, P)
    t_new = (n + 1) * dt
    if not (np.all(np.isfinite(y_new)) and np.max(np.abs(y_new)) <= BLOWUP):
        raise InstabilityError(t_new)
    return ModalState(y_new[0], y_new[1], y_new[2], t_new)


def _integrate_chunk(rows, integ, U, V, W, Mem, n_steps):
    y = np.stack([U[rows, 0], V[rows, 0], W[rows, 0]])
    Uc = U[rows]  # view of a contiguous row block
    M = Mem[rows, 0].copy()
    dt = integ.dt
    for n in range(n_steps):
        P = integ.history_part(Uc, n, M)
        y, M = integ.advance(y, M, P)
        if not np.max(np.abs(y)) <= BLOWUP:
            raise InstabilityError((n + 1) * dt)
        Uc[:, n + 1] = y[0]
        V[rows, n + 1] = y[1]
        W[rows, n + 1] = y[2]
        Mem[rows, n + 1] = M


def run(params, kernel, op, ic, T, dt=None, workers=1, strict=False, admissibility=None):
    """Integrate all modes on ``[0, T]`` and return the full trajectory.

    Parameters
    ----------
    params : MgtParams
    kernel : MemoryKernel
    op : ModalOperator
    ic : sequence of (u, u', u'') triples
        One per mode, in ascending eigenvalue order; missing modes start at rest.
    T : float
        Final time; the grid has ``floor(T/dt) + 1`` points.
    dt : float, optional
        Defaults to :func:`default_dt`. Larger steps are allowed with a warning.
    workers : int
        Modes are split into contiguous blocks integrated concurrently. Every
        mode follows the same arithmetic whatever the split, so results are
        bit-identical across worker counts.
    strict : bool
        With ``admissibility`` given, refuse to run when it failed.
    """
    if strict and admissibility is not None and not admissibility.passed:
        raise AssumptionViolation("assumption check failed: " + ", ".join(admissibility.failed_items))
    if dt is None:
        dt = default_dt(op)
    if not (dt > 0 and T >= 0):
        raise ContractError("need dt > 0 and T >= 0")
    cap = default_dt(op)
    if dt > cap * (1 + 1e-12):
        log.warning("dt = %g exceeds the stability cap %g", dt, cap)
    m = op.n_modes
    ic = [tuple(map(float, triple)) for triple in ic]
    if len(ic) > m:
        raise ContractError(f"{len(ic)} initial triples for {m} modes")
    if any(len(triple) != 3 for triple in ic):
        raise ContractError("each initial condition must be a (u, u', u'') triple")
    n_steps = int(math.floor(T / dt + 1e-9))
    t = dt * np.arange(n_steps + 1)
    U = np.zeros((m, n_steps + 1))
    V = np.zeros_like(U)
    W = np.zeros_like(U)
    Mem = np.zeros_like(U)
    for j, (u0, v0, w0) in enumerate(ic):
        U[j, 0], V[j, 0], W[j, 0] = u0, v0, w0
    g = None
    if not kernel.memoryless and kernel.family != "exponential":
        g = np.asarray(kernel.g(dt * np.arange(n_steps + 2)), dtype=float)
    blocks = [b for b in np.array_split(np.arange(m), max(1, int(workers))) if b.size]
    slices = [slice(int(b[0]), int(b[-1]) + 1) for b in blocks]
    integrators = [_ChunkIntegrator(params, kernel, op.eigenvalues[s], dt, g) for s in slices]
    if len(slices) == 1:
        _integrate_chunk(slices[0], integrators[0], U, V, W, Mem, n_steps)
    else:
        with ThreadPoolExecutor(max_workers=len(slices)) as pool:
            futures = [pool.submit(_integrate_chunk, s, integ, U, V, W, Mem, n_steps)
                       for s, integ in zip(slices, integrators)]
            errors = []
            for fut in futures:
                exc = fut.exception()
                if exc is not None:
                    errors.append(exc)
            if errors:
                unstable = [e for e in errors if isinstance(e, InstabilityError)]
                if unstable:
                    raise min(unstable, key=lambda e: e.t)
                raise errors[0]
    return Trajectory(t, dt, U, V, W, Mem, params, kernel, op)


def write_history_csv(traj, path):
    """Dump the raw modal history as rows ``t, mode, u, v, w``."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "mode", "u", "v", "w"])
        for n, tn in enumerate(traj.t):
            for j in range(traj.op.n_modes):
                writer.writerow([repr(float(tn)), j + 1, repr(float(traj.u[j, n])),
                                 repr(float(traj.v[j, n])), repr(float(traj.w[j, n]))])
