"""Free-space heat kernel and its spatial derivatives.

``phi(y, s, x, t)`` is the fundamental solution with pole at ``(x, t)``
evaluated at ``(y, s)``; it is zero whenever ``s <= t``. All functions
broadcast over leading axes: points carry their coordinates in the last
axis.
"""

import numpy as np
from scipy.special import erfc, exp1, gammaln

__all__ = [
    "MAX_ORDER",
    "phi",
    "log_phi",
    "grad_phi",
    "normal_deriv_phi",
    "hermite",
    "directional_deriv_m",
    "directional_derivs",
    "log_factorial",
    "phi_time_integral",
    "grad_phi_time_integral",
    "normal_deriv_phi_time_integral",
]

MAX_ORDER = 60


def _split(y, s, x, t):
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    diff = y - x
    tau = np.asarray(s, dtype=float) - np.asarray(t, dtype=float)
    return diff, tau


def log_phi(y, s, x, t, d=2):
    """Natural log of the kernel; ``-inf`` where ``s <= t``."""
    diff, tau = _split(y, s, x, t)
    r2 = np.sum(diff * diff, axis=-1)
    r2, tau = np.broadcast_arrays(r2, tau)
    out = np.full(r2.shape, -np.inf)
    pos = tau > 0
    tp = tau[pos]
    out[pos] = -0.5 * d * np.log(4 * np.pi * tp) - r2[pos] / (4 * tp)
    return out


def phi(y, s, x, t, d=2):
    """Heat kernel ``(4 pi (s-t))^(-d/2) exp(-|y-x|^2 / (4 (s-t)))``."""
    if d not in (2, 3):
        raise ValueError("dimension must be 2 or 3")
    return np.exp(log_phi(y, s, x, t, d))


def grad_phi(y, s, x, t, d=2):
    """Gradient with respect to the first point ``y``."""
    diff, tau = _split(y, s, x, t)
    val = phi(y, s, x, t, d)
    safe = np.where(tau > 0, tau, 1.0)
    return (val / (2 * safe))[..., None] * (-diff)


def normal_deriv_phi(y, s, x, t, nu, d=2):
    """``nu . grad_y phi``; ``nu`` broadcasts like ``y``."""
    diff, tau = _split(y, s, x, t)
    val = phi(y, s, x, t, d)
    safe = np.where(tau > 0, tau, 1.0)
    return -val * np.sum(diff * np.asarray(nu, dtype=float), axis=-1) / (2 * safe)


def hermite(m, xi):
    """Physicists' Hermite polynomials ``H_0..H_m`` stacked on axis 0."""
    xi = np.asarray(xi, dtype=float)
    out = np.empty((m + 1,) + xi.shape)
    out[0] = 1.0
    if m >= 1:
        out[1] = 2 * xi
    for k in range(1, m):
        out[k + 1] = 2 * xi * out[k] - 2 * k * out[k - 1]
    return out


def _check_direction(h):
    h = np.asarray(h, dtype=float)
    if abs(np.linalg.norm(h) - 1.0) > 1e-12:
        raise ValueError("direction must be a unit vector")
    return h


def directional_derivs(h, m, z, s, x, t, d=2):
    """``(h . grad_z)^q phi(z, s; x, t)`` for ``q = 0..m`` on axis 0."""
    h = _check_direction(h)
    if m < 0:
        raise ValueError("order must be non-negative")
    if m > MAX_ORDER:
        raise ValueError(f"order {m} exceeds cap {MAX_ORDER}")
    if d not in (2, 3):
        raise ValueError("dimension must be 2 or 3")
    diff, tau = _split(z, s, x, t)
    logv = log_phi(z, s, x, t, d)
    pos = tau > 0
    scale = 2 * np.sqrt(np.where(pos, tau, 1.0))
    xi = np.sum(diff * h, axis=-1) / scale
    xi, scale, logv = np.broadcast_arrays(xi, scale, logv)
    # where the kernel underflows the result is 0; keep xi small there
    live = logv > -740.0
    xi = np.where(live, xi, 0.0)
    herm = hermite(m, xi)
    q = np.arange(m + 1).reshape((-1,) + (1,) * np.ndim(logv))
    with np.errstate(divide="ignore"):
        mag = np.log(np.abs(herm)) - q * np.log(scale) + np.where(live, logv, -np.inf)
    return (-1.0) ** q * np.sign(herm) * np.exp(mag)


def directional_deriv_m(h, m, z, s, x, t, d=2):
    """Order-``m`` directional derivative in ``z`` via the Hermite recurrence."""
    return directional_derivs(h, m, z, s, x, t, d)[m]


def log_factorial(q):
    return gammaln(np.asarray(q, dtype=float) + 1)


def _tau_pair(tau_lo, tau_hi):
    lo = np.maximum(np.asarray(tau_lo, dtype=float), 0.0)
    hi = np.maximum(np.asarray(tau_hi, dtype=float), 0.0)
    return lo, hi


def _time_factor(r2, tau, d):
    # antiderivative in tau of phi (up to the spatial prefactor), zero at tau=0
    pos = tau > 0
    arg = r2 / (4 * np.where(pos, tau, 1.0))
    if d == 2:
        # E1(r^2 / 4 tau) / (4 pi); E1(inf) = 0
        return np.where(pos, exp1(arg) / (4 * np.pi), 0.0)
    r = np.sqrt(r2)
    return np.where(pos, erfc(np.sqrt(arg)) / (4 * np.pi * np.where(r > 0, r, 1.0)), 0.0)


def phi_time_integral(y, x, tau_lo, tau_hi, d=2):
    """``int phi`` over lags ``s - t`` in ``[tau_lo, tau_hi]`` (negative lags clipped).

    Closed forms: exponential integral in 2D, complementary error function
    in 3D. Requires ``y != x``.
    """
    diff = np.asarray(y, dtype=float) - np.asarray(x, dtype=float)
    r2 = np.sum(diff * diff, axis=-1)
    lo, hi = _tau_pair(tau_lo, tau_hi)
    return _time_factor(r2, hi, d) - _time_factor(r2, lo, d)


def _grad_time_factor(diff, r2, tau, d):
    pos = tau > 0
    safe = np.where(pos, tau, 1.0)
    e = np.where(pos, np.exp(-r2 / (4 * safe)), 0.0)
    if d == 2:
        return -e[..., None] * diff / (2 * np.pi * r2[..., None])
    r = np.sqrt(r2)
    rho = r / (2 * np.sqrt(safe))
    ec = np.where(pos, erfc(rho), 0.0)
    dfdr = -ec / (4 * np.pi * r2) - e / (4 * np.pi * r) / np.sqrt(np.pi * safe)
    return (dfdr / r)[..., None] * diff


def grad_phi_time_integral(y, x, tau_lo, tau_hi, d=2):
    """Gradient in ``y`` of :func:`phi_time_integral`."""
    diff = np.asarray(y, dtype=float) - np.asarray(x, dtype=float)
    r2 = np.sum(diff * diff, axis=-1)
    lo, hi = _tau_pair(tau_lo, tau_hi)
    diff, r2, lo, hi = _bcast_with_points(diff, r2, lo, hi)
    return (_grad_time_factor(diff, r2, hi, d)
            - _grad_time_factor(diff, r2, lo, d))


def normal_deriv_phi_time_integral(y, x, tau_lo, tau_hi, nu, d=2):
    g = grad_phi_time_integral(y, x, tau_lo, tau_hi, d)
    return np.sum(g * np.asarray(nu, dtype=float), axis=-1)


def _bcast_with_points(diff, r2, lo, hi):
    shape = np.broadcast_shapes(r2.shape, lo.shape, hi.shape)
    diff = np.broadcast_to(diff, shape + diff.shape[-1:])
    return (diff, np.broadcast_to(r2, shape), np.broadcast_to(lo, shape),
            np.broadcast_to(hi, shape))
