"""Shared numerical helpers: monotone inversion and trapezoid convolution."""

from __future__ import annotations

import numpy as np
from scipy import fft as sfft


class ContractError(ValueError):
    """An operation was called outside its documented preconditions."""


def bisect_increasing(f, target, lo, hi, xtol=1e-12, maxiter=2000):
    """Invert an increasing function by bisection.

    Works elementwise on arrays: ``f`` must accept and return arrays of the
    broadcast shape of ``target``. ``hi`` is doubled until it brackets the
    target. Iteration stops once every bracket is narrower than ``xtol`` or
    has collapsed to adjacent floats, so ``xtol=0`` gives full relative
    precision even for tiny roots.
    """
    target = np.asarray(target, dtype=float)
    lo = np.broadcast_to(np.asarray(lo, dtype=float), target.shape).copy()
    hi = np.broadcast_to(np.asarray(hi, dtype=float), target.shape).copy()
    for _ in range(2100):
        short = f(hi) < target
        if not np.any(short):
            break
        hi = np.where(short, 2.0 * hi + 1.0, hi)
    else:
        raise ContractError("could not bracket the target; function may be bounded")
    for _ in range(maxiter):
        mid = 0.5 * (lo + hi)
        width = hi - lo
        done = (width <= xtol) | (mid <= lo) | (mid >= hi)
        if np.all(done):
            break
        below = f(mid) < target
        lo = np.where(~done & below, mid, lo)
        hi = np.where(~done & ~below, mid, hi)
    return 0.5 * (lo + hi)


def trapezoid_convolution(kernel, history, dt):
    r"""Trapezoid-rule convolution on a uniform grid.

    Returns ``c[..., n]`` approximating :math:`\int_0^{t_n} k(t_n-s)h(s)\,ds`
    for every grid index ``n``, computed by FFT over the last axis.

    Parameters
    ----------
    kernel : numpy.ndarray
        Samples ``k(n*dt)``, shape ``(N,)``.
    history : numpy.ndarray
        Samples ``h(n*dt)``, shape ``(..., N)``.
    dt : float
        Grid step.
    """
    kernel = np.asarray(kernel, dtype=float)
    history = np.asarray(history, dtype=float)
    n = kernel.shape[-1]
    if history.shape[-1] != n:
        raise ContractError("kernel and history lengths differ")
    if n == 0:
        return np.zeros_like(history)
    size = sfft.next_fast_len(2 * n - 1, real=True)
    full = sfft.irfft(sfft.rfft(kernel, size) * sfft.rfft(history, size, axis=-1),
                      size, axis=-1)[..., :n]
    full = full - 0.5 * kernel * history[..., :1] - 0.5 * kernel[0] * history
    out = dt * full
    out[..., 0] = 0.0
    return out


def trapezoid_weights(n, dt):
    """Composite trapezoid weights for ``n`` uniformly spaced samples."""
    if n < 2:
        return np.zeros(n)
    w = np.full(n, dt)
    w[0] = w[-1] = 0.5 * dt
    return w


def cumulative_trapezoid(values, dt):
    """Running trapezoid integral starting at zero, same length as ``values``."""
    values = np.asarray(values, dtype=float)
    out = np.zeros_like(values)
    if values.shape[-1] > 1:
        out[..., 1:] = np.cumsum(0.5 * dt * (values[..., 1:] + values[..., :-1]), axis=-1)
    return out
