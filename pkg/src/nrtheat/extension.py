"""Analytic-extension diagnostics for the flux data of ``w``.

``w~`` is the heat single layer of the measured flux on the outer boundary
(the double-layer term against the Dirichlet data is kept but vanishes
because ``w = 0`` there). It is caloric in all of Omega, whereas the true
``w`` stops being extendable at the cavity. Scaled Taylor coefficients

    C_q = rho^q |(h . grad)^q f(z, s)| / q!

stay bounded for a field that extends a distance ``rho`` around ``z`` and
blow up otherwise; they are handled in the log domain throughout.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from . import kernel
from .forward import CauchyData, ForwardResult, MFSBasis
from .geometry import clearance, contains, discretize, make_shape
from .operators import _lag_rule, assemble_K, assemble_boundary_K, fit_density

__all__ = [
    "ProbeSpec",
    "BlowupMap",
    "ProbeValue",
    "difference_basis",
    "data_basis",
    "wtilde",
    "wtilde_derivs",
    "probe_norm_N",
    "normalized_probe",
    "log_taylor_coefficients",
    "taylor_blowup_map",
    "make_E",
    "probe_functional",
    "boundary_green_term",
    "pairing_forms",
]


@dataclass(frozen=True)
class ProbeSpec:
    """Pole ``(z, s)``, direction ``h``, order ``m`` and normalization ``N`` of a probe."""

    z: tuple
    s: float
    h: tuple
    m: int
    N: float = 1.0

    def __post_init__(self):
        h = np.asarray(self.h, dtype=float)
        if abs(np.linalg.norm(h) - 1.0) > 1e-12:
            raise ValueError("probe direction must be a unit vector")
        if self.m < 0 or self.m > kernel.MAX_ORDER:
            raise ValueError(f"probe order must lie in [0, {kernel.MAX_ORDER}]")
        if not self.N > 0:
            raise ValueError("normalization must be positive")
        object.__setattr__(self, "z", tuple(float(v) for v in self.z))
        object.__setattr__(self, "h", tuple(float(v) for v in h))


def difference_basis(u, mu):
    """MFS basis of ``u - mu`` (both fields must share their source intervals)."""
    u = u.basis if isinstance(u, ForwardResult) else u
    mu = mu.basis if isinstance(mu, ForwardResult) else mu
    if not np.array_equal(u.edges, mu.edges):
        raise ValueError("bases use different source intervals")
    return MFSBasis(np.vstack([u.points, mu.points]), u.edges,
                    np.vstack([u.coefficients, -mu.coefficients]), u.d)


def data_basis(cauchy):
    """Single layer of the flux data written as interval sources on the boundary nodes.

    The flux is taken piecewise constant on the grid intervals, so
    ``w~(z, s) = sum_i w_i sum_k flux_ik int_{I_k} Phi(z, s; x_i, t) dt``.
    """
    bd, grid = cauchy.boundary, cauchy.grid
    coef = bd.weights[:, None] * cauchy.neumann
    return MFSBasis(bd.nodes, grid.edges, coef)


def _double_term(cauchy, z, s):
    bd, grid = cauchy.boundary, cauchy.grid
    if not np.any(cauchy.dirichlet):
        return np.zeros((len(z), len(s)))
    lo = s[None, :, None, None] - grid.edges[None, None, None, 1:]
    hi = s[None, :, None, None] - grid.edges[None, None, None, :-1]
    kern = kernel.normal_deriv_phi_time_integral(
        bd.nodes[None, None, :, None, :], z[:, None, None, None, :], lo, hi,
        bd.normals[None, None, :, None, :])
    return np.einsum("zsik,ik->zs", kern, bd.weights[:, None] * cauchy.dirichlet)


def wtilde(cauchy, z, s, return_terms=False):
    """Green representation of ``w`` from its Cauchy data on the outer boundary.

    ``z`` may be one point or an array of points, ``s`` one time or an
    array; the result has shape ``(n_points, n_times)`` (scalars collapse).
    With ``return_terms`` the single- and double-layer parts are returned
    separately; the second is identically zero for data of ``w``.
    """
    zz = np.atleast_2d(np.asarray(z, dtype=float))
    ss = np.atleast_1d(np.asarray(s, dtype=float))
    single = data_basis(cauchy).field(zz, ss)
    double = _double_term(cauchy, zz, ss)
    if return_terms:
        return single, double
    out = single - double
    return float(out[0, 0]) if np.ndim(z) == 1 and np.ndim(s) == 0 else out


def wtilde_derivs(cauchy, z, s, h, m_max):
    """``(h . grad)^q w~(z, s)`` for ``q = 0..m_max`` (zero Dirichlet data required)."""
    if np.any(cauchy.dirichlet):
        raise ValueError("derivatives are implemented for data with zero Dirichlet part")
    return data_basis(cauchy).directional_derivs(z, s, h, m_max)


def _polar_rule(shape, nr, nth, r_lo=None):
    """Points and weights of a polar rule on a star-shaped region.

    Without ``r_lo`` the full region is covered; otherwise the band between
    the radii ``r_lo(theta)`` and ``r(theta)``.
    """
    xg, wg = np.polynomial.legendre.leggauss(nr)
    theta = 2 * np.pi * np.arange(nth) / nth
    r_hi = shape.radius(theta)
    lo = np.zeros_like(r_hi) if r_lo is None else r_lo(theta)
    rad = lo[None, :] + (r_hi - lo)[None, :] * 0.5 * (xg[:, None] + 1)
    w = (r_hi - lo)[None, :] * 0.5 * wg[:, None] * rad * (2 * np.pi / nth)
    pts = np.asarray(shape.center) + np.stack([rad * np.cos(theta), rad * np.sin(theta)], -1)
    return pts.reshape(-1, 2), w.ravel()


def _norm_region(G, omega, eps, n_polar=32, n_collar=(4, 128)):
    pg, wg = _polar_rule(G, n_polar, n_polar)
    pc, wc = _polar_rule(omega, n_collar[0], n_collar[1],
                         r_lo=lambda th: omega.radius(th) - eps)
    return np.vstack([pg, pc]), np.concatenate([wg, wc])


def probe_norm_N(z, s, h, m, G, omega, eps=0.05, n_polar=32):
    """Norm of ``(h . grad_z)^m Phi(z, s; ., .)`` over ``(G u collar)_T``.

    The surrogate is the L2-in-time norm of value and spatial gradient
    (in ``x``), integrated over a polar rule on ``G`` and the collar of
    width ``eps`` inside the outer boundary.
    """
    z = np.asarray(z, dtype=float)
    h = np.asarray(h, dtype=float)
    if contains(G, z) or clearance(omega, z) <= eps:
        raise ValueError("probe point lies in the norm region")
    if s <= 0:
        raise ValueError("probe time must be positive")
    pts, w = _norm_region(G, omega, eps, n_polar)
    lag, lw = _lag_rule(s, 1e-8)
    t = s - lag
    dm = kernel.directional_derivs(h, m + 1, z, s, pts[:, None, :], t[None, :])
    hp = np.array([-h[1], h[0]])
    dperp = ((z - pts) @ hp)[:, None] / (2 * lag[None, :])
    dens = dm[m] ** 2 * (1 + dperp**2) + dm[m + 1] ** 2
    return float(np.sqrt(np.einsum("pl,p,l->", dens, w, lw)))


def normalized_probe(spec, points, times, c_norm=1.0):
    """``(c_norm / N) (h . grad_z)^m Phi(z, s; x, t)`` at ``points x times``."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    t = np.atleast_1d(np.asarray(times, dtype=float))
    vals = kernel.directional_derivs(np.asarray(spec.h), spec.m, np.asarray(spec.z), spec.s,
                                     pts[:, None, :], t[None, :])[spec.m]
    return (c_norm / spec.N) * vals


def _unit_dirs(ndirs):
    ang = np.pi * np.arange(ndirs) / ndirs
    return np.stack([np.cos(ang), np.sin(ang)], -1)


def log_taylor_coefficients(derivs_fn, z, s, rho, m_max=60, ndirs=8):
    """``log C_q`` maximised over ``ndirs`` directions in ``[0, pi)``.

    ``derivs_fn(z, s, h, m_max)`` returns ``(h . grad)^q f(z, s)`` for
    ``q = 0..m_max``. Opposite directions give the same magnitudes, so a
    half circle suffices.
    """
    if m_max > kernel.MAX_ORDER:
        raise ValueError(f"m_max exceeds {kernel.MAX_ORDER}")
    if ndirs < 8:
        raise ValueError("need at least 8 directions")
    q = np.arange(m_max + 1)
    best = np.full(m_max + 1, -np.inf)
    for h in _unit_dirs(ndirs):
        d = np.abs(np.asarray(derivs_fn(z, s, h, m_max), dtype=float))
        with np.errstate(divide="ignore"):
            lc = np.log(d) - kernel.log_factorial(q) + q * np.log(rho)
        best = np.maximum(best, lc)
    return best


@dataclass(eq=False)
class BlowupMap:
    """``log P`` (and optional probe magnitudes) at sample points and times.

    ``log_P`` is ``-inf`` where the field vanishes identically.
    """

    points: np.ndarray
    times: np.ndarray
    log_P: np.ndarray
    probe: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def P(self):
        return np.exp(self.log_P)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["x", "y", "t", "P_log", "probe_value"])
            for i, p in enumerate(self.points):
                for k, t in enumerate(self.times):
                    pv = "" if self.probe is None else f"{self.probe[i, k]:.17g}"
                    out.writerow([f"{p[0]:.17g}", f"{p[1]:.17g}", f"{t:.17g}",
                                  f"{self.log_P[i, k]:.17g}", pv])

    def to_pgm(self, path, shape, time_index=0):
        """Write ``log P`` at one time as a binary PGM; returns the sidecar dict."""
        vals = self.log_P[:, time_index].reshape(shape)
        finite = vals[np.isfinite(vals)]
        lo, hi = (float(finite.min()), float(finite.max())) if finite.size else (0.0, 0.0)
        span = hi - lo if hi > lo else 1.0
        img = np.where(np.isfinite(vals), (vals - lo) / span, 0.0)
        data = np.clip(np.round(255 * img), 0, 255).astype(np.uint8)[::-1]
        with open(path, "wb") as fh:
            fh.write(f"P5\n{shape[1]} {shape[0]}\n255\n".encode())
            fh.write(data.tobytes())
        side = {"min_log_P": lo, "max_log_P": hi, "time": float(self.times[time_index]),
                **{k: v for k, v in self.meta.items() if isinstance(v, (int, float, str))}}
        with open(str(path) + ".json", "w") as fh:
            json.dump(side, fh, indent=1)
        return side


def _derivs_fn(source):
    if isinstance(source, CauchyData):
        return data_basis(source).directional_derivs
    if isinstance(source, MFSBasis):
        return source.directional_derivs
    if callable(source):
        return source
    raise TypeError("field must be an MFSBasis, CauchyData or a derivative callable")


def taylor_blowup_map(source, points, times, rho=0.25, m_max=60, ndirs=8, omega=None,
                      probe=None):
    """``log P = max_q log C_q`` at every sample point and time.

    ``source`` is the synthetic ``w`` (an :class:`MFSBasis`), Cauchy data
    (evaluated through ``w~``) or a derivative callable. With ``omega``
    every point must lie farther than ``rho`` from its boundary.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    ts = np.atleast_1d(np.asarray(times, dtype=float))
    if omega is not None and np.any(clearance(omega, pts) <= rho):
        # clearance is radial; it bounds the distance for the star-shaped shapes used here
        raise ValueError("sample points must lie in Omega_rho")
    fn = _derivs_fn(source)
    out = np.empty((len(pts), len(ts)))
    for i, z in enumerate(pts):
        for k, s in enumerate(ts):
            out[i, k] = np.max(log_taylor_coefficients(fn, z, s, rho, m_max, ndirs))
    meta = {"rho": rho, "m_max": m_max, "ndirs": ndirs}
    return BlowupMap(pts, ts, out, probe, meta)


def make_E(G, z, omega=None, power=4, gap_fraction=0.25, nfit=256):
    """Domain containing ``G`` stretched towards ``z`` but stopping short of it.

    The radius about ``G``'s centre is ``r_G + A ((1 + cos(theta - theta_z)) / 2)^power``
    with ``A`` chosen so the boundary stops ``gap_fraction`` of the radial
    gap before ``z``. The result is a finite Fourier sum, hence a valid
    :class:`RadialShape`.
    """
    z = np.asarray(z, dtype=float)
    c = np.asarray(G.center)
    rz = np.linalg.norm(z - c)
    thz = np.arctan2(*(z - c)[::-1])
    gap = rz - float(G.radius(np.array([thz]))[0])
    if gap <= 0:
        raise ValueError("z must lie outside G")
    amp = (1 - gap_fraction) * gap
    theta = 2 * np.pi * np.arange(nfit) / nfit
    r = G.radius(theta) + amp * ((1 + np.cos(theta - thz)) / 2) ** power
    coef = np.fft.rfft(r) / nfit
    r0 = coef[0].real
    terms = []
    for k in range(1, nfit // 2):
        a, b = 2 * coef[k].real / r0, -2 * coef[k].imag / r0
        if abs(a) > 1e-14 or abs(b) > 1e-14:
            terms.append((k, a, b))
    E = make_shape(tuple(c), r0, terms)
    if omega is not None and not all(contains(omega, E.point(theta))):
        raise ValueError("stretched domain leaves Omega")
    return E


@dataclass(frozen=True)
class ProbeValue:
    synthetic: float | None
    data_side: float | None
    relative_gap: float | None
    fit_residual: float | None
    reliable: bool


def probe_functional(spec, cauchy_w, G, omega, w_basis=None, c_norm=1.0, n_E=32,
                     max_fit_residual=0.2, data_side=True, K_boundary=None):
    """``|I - I~|`` for one probe, synthetically and from the data.

    The synthetic value is ``(c_norm / N) |(h.grad)^m (w - w~)(z, s)|`` and
    needs the synthetic ``w``. The data-side value fits a density whose
    backward double layer matches the probe on ``dE(z)`` and pairs its
    boundary trace with the flux of ``w``. The fit is flagged unreliable
    above ``max_fit_residual``.
    """
    h = np.asarray(spec.h)
    z = np.asarray(spec.z)
    synth = None
    if w_basis is not None:
        dw = w_basis.directional_derivs(z, spec.s, h, spec.m)[spec.m]
        dwt = wtilde_derivs(cauchy_w, z, spec.s, h, spec.m)[spec.m]
        synth = float(c_norm / spec.N * abs(dw - dwt))
    data = res = None
    if data_side:
        bd, grid = cauchy_w.boundary, cauchy_w.grid
        E = make_E(G, z, omega)
        bd_E = discretize(E, n_E)
        target = normalized_probe(spec, bd_E.nodes, grid.nodes, c_norm)
        phi, res = fit_density(bd, bd_E, grid, target, time_rule="interval", rcond=1e-6)
        Kb = K_boundary if K_boundary is not None else assemble_boundary_K(bd, grid)
        trace = Kb.entries @ phi
        data = float(abs(Kb.target.inner(trace, cauchy_w.neumann)))
    gap = None
    if synth is not None and data is not None:
        gap = abs(synth - data) / max(abs(synth), 1e-300)
    reliable = res is None or res <= max_fit_residual
    return ProbeValue(synth, data, gap, res, reliable)


def boundary_green_term(basis, shape, z, s, n=64, per=8):
    """``int_0^s int_dS [Phi(z,s;y,t) d_nu f(y,t) - d_nu(y) Phi(z,s;y,t) f(y,t)]``.

    ``f`` is the caloric field of ``basis`` and ``nu`` the outward normal
    of ``shape``. For ``z`` outside ``shape`` this is the contribution of
    that curve to the Green representation of ``f``. ``z`` may be an array
    of points with matching times ``s``. The traces of ``f`` are sampled
    once, ``per`` times per source interval (so lags repeat and the time
    table stays small), and splined in time; each pole then uses lag
    panels graded towards ``t = s``, where the kernel peaks.
    """
    zz = np.atleast_2d(np.asarray(z, dtype=float))
    ss = np.broadcast_to(np.asarray(s, dtype=float), (len(zz),))
    bd = discretize(shape, n)
    e = basis.edges
    tg = np.append((e[:-1, None] + np.diff(e)[:, None] * np.arange(per) / per).ravel(), e[-1])
    tg = tg[: np.searchsorted(tg, ss.max()) + 2]
    f = CubicSpline(tg, basis.field(bd.nodes, tg), axis=1)
    df = CubicSpline(tg, basis.normal_deriv(bd.nodes, bd.normals, tg), axis=1)
    y, nu = bd.nodes[:, None, :], bd.normals[:, None, :]
    out = np.empty(len(zz))
    for k, (zk, sk) in enumerate(zip(zz, ss)):
        lag, lw = _lag_rule(sk, 1e-7)
        t = sk - lag
        ph = kernel.phi(zk, sk, y, t[None, :])
        # d_nu(y) Phi(z, s; y, t) is minus the normal gradient in the pole
        dph = -kernel.normal_deriv_phi(zk, sk, y, t[None, :], nu)
        out[k] = np.einsum("it,i,t->", ph * df(t) - dph * f(t), bd.weights, lw)
    return float(out[0]) if np.ndim(z) == 1 else out


def pairing_forms(phi, cauchy_w, u_basis, cavity, K_boundary=None, n_cavity=128, per=4):
    """The probe pairing ``(K phi, d_nu w)`` on the outer boundary and on the cavity.

    Integrating by parts over the region between the curves (and using the
    background field on the whole conductor) turns the outer pairing into
    ``int int_{dD} K[phi] d_nu u`` with the outward normal of ``D``. The
    second form needs the synthetic ``u`` and exists only for testing.
    Returns ``(outer, cavity)``.
    """
    bd, grid = cauchy_w.boundary, cauchy_w.grid
    phi = np.ravel(phi)
    Kb = K_boundary if K_boundary is not None else assemble_boundary_K(bd, grid)
    outer = float(Kb.target.inner(Kb.entries @ phi, cauchy_w.neumann))
    bd_D = discretize(cavity, n_cavity)
    ts = grid.subnodes(per)
    v = (assemble_K(bd, bd_D, grid, times=ts, time_rule="interval").entries @ phi)
    du = u_basis.normal_deriv(bd_D.nodes, bd_D.normals, ts)
    inner = np.einsum("it,it,i->", v.reshape(len(bd_D), len(ts)), du, bd_D.weights)
    return outer, float(inner * grid.dt / per)
