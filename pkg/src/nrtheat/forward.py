"""Synthetic Cauchy data from a method-of-fundamental-solutions model.

Fields are sums of heat sources placed off the solution domain: outside
the conductor on a dilated copy of its boundary and inside the cavity on a
shrunk copy of the cavity boundary. Every source is active on one short
interval ``[e_l, e_{l+1})`` of ``[0, T)`` with constant strength, so each
basis function solves the heat equation exactly and vanishes at ``t = 0``;
only the boundary conditions are fitted, by truncated-SVD least squares.

MFS coefficients are not unique (the collocation matrices are
exponentially ill-conditioned) but the represented field is stable.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from . import kernel
from .geometry import ParamBoundary, discretize, make_shape, shape_inclusion

__all__ = [
    "TimeGrid",
    "MFSParams",
    "MFSBasis",
    "CauchyData",
    "ForwardResult",
    "SolverError",
    "make_g",
    "boundary_data_g",
    "scaled_shape",
    "solve_direct",
    "solve_background",
    "cauchy_of_w",
    "add_noise",
    "eval_field",
    "eval_directional_derivs",
]

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """Raised when a boundary fit misses its residual tolerance."""


@dataclass(frozen=True)
class TimeGrid:
    """Midpoint rule on ``(0, T]`` with ``nt`` equal intervals."""

    T: float
    nt: int

    def __post_init__(self):
        if self.T <= 0 or self.nt < 1:
            raise ValueError("need T > 0 and nt >= 1")

    @property
    def dt(self):
        return self.T / self.nt

    @property
    def nodes(self):
        return (np.arange(self.nt) + 0.5) * self.dt

    @property
    def weights(self):
        return np.full(self.nt, self.dt)

    @property
    def edges(self):
        return np.arange(self.nt + 1) * self.dt

    def subnodes(self, per):
        """``per`` equispaced midpoints inside every interval."""
        frac = (np.arange(per) + 0.5) / per
        return ((np.arange(self.nt)[:, None] + frac[None, :]) * self.dt).ravel()

    def restrict(self, nt):
        """Grid on ``(0, nt * dt]`` sharing this grid's first ``nt`` intervals."""
        return TimeGrid(nt * self.dt, nt)


def make_g(name="ramp", T=1.0, expr=None):
    """Boundary temperature ``g(points, times) -> (n_points, n_times)``.

    ``custom`` evaluates ``expr`` with numpy names ``x``, ``y``, ``t``, ``T``
    and ``np`` in scope.
    """
    if name == "ramp":
        def profile(pts, t):
            return np.broadcast_to(t / T, (len(pts), len(t))).copy()
    elif name == "bump":
        def profile(pts, t):
            return np.broadcast_to(np.sin(np.pi * t / T) ** 2, (len(pts), len(t))).copy()
    elif name == "zero":
        def profile(pts, t):
            return np.zeros((len(pts), len(t)))
    elif name == "custom":
        if not expr:
            raise ValueError("custom boundary data needs an expression")
        code = compile(expr, "<g>", "eval")

        def profile(pts, t):
            x = np.asarray(pts)[:, 0:1]
            y = np.asarray(pts)[:, 1:2]
            env = {"np": np, "x": x, "y": y, "t": np.asarray(t)[None, :], "T": T}
            val = eval(code, {"__builtins__": {}}, env)
            return np.broadcast_to(val, (len(pts), len(t))).astype(float)
    else:
        raise ValueError(f"unknown boundary data {name!r}")
    pts0 = np.zeros((1, 2))
    if name == "custom":
        pts0 = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])
    if np.any(np.abs(profile(pts0, np.zeros(1))) > 1e-14):
        raise ValueError("boundary data must vanish at t = 0")
    profile.name = name
    return profile


def boundary_data_g(name, boundary, grid, expr=None):
    """Matrix (node x time) of boundary temperatures on ``grid``."""
    g = make_g(name, grid.T, expr) if isinstance(name, str) else name
    return g(boundary.nodes, grid.nodes)


def scaled_shape(shape, factor):
    """Copy of ``shape`` with all radii multiplied by ``factor``."""
    return make_shape(shape.center, shape.radius0 * factor, shape.terms)


@dataclass(frozen=True)
class MFSParams:
    """Source layout and fitting options.

    ``source_ratio`` is the number of sources per collocation node,
    ``time_refine`` the number of source intervals per grid interval and
    ``colloc_per_interval`` the number of collocation times per grid
    interval.
    """

    outer_factor: float = 1.4
    inner_factor: float = 0.6
    source_ratio: float = 0.5
    time_refine: int = 2
    colloc_per_interval: int = 3
    cutoff: float = 1e-12
    residual_tol: float = 1e-6
    strict: bool = False

    def to_dict(self):
        return dict(self.__dict__)


def _lag_table(times, edges):
    lags = times[:, None] - edges[None, :]
    lags = np.where(lags > 0, lags, 0.0)
    uniq, inv = np.unique(np.round(lags, 14), return_inverse=True)
    return uniq, inv.reshape(lags.shape)


def assemble_interval_sources(src, edges, targets, times, normals=None, d=2,
                              chunk=None):
    """Matrix of interval-source fields (or normal derivatives) at targets.

    Rows are ``(target, time)`` node-major, columns ``(source, interval)``
    node-major. Entry is ``int_{e_l}^{e_l+1} phi(x, t; y, s) ds`` or its
    normal derivative in ``x``.
    """
    src = np.asarray(src, dtype=float)
    targets = np.asarray(targets, dtype=float)
    times = np.asarray(times, dtype=float)
    uniq, inv = _lag_table(times, edges)
    nl = len(edges) - 1
    out = np.empty((len(targets), len(times), len(src), nl))
    chunk = chunk or max(1, int(1e7 // max(1, len(src) * len(times) * nl)))
    for start in range(0, len(targets), chunk):
        sl = slice(start, start + chunk)
        diff = targets[sl, None, :] - src[None, :, :]
        r2 = np.sum(diff * diff, axis=-1)
        if normals is None:
            table = kernel._time_factor(r2[..., None], uniq[None, None, :], d)
        else:
            nu = np.asarray(normals, dtype=float)[sl]
            proj = np.sum(diff * nu[:, None, :], axis=-1)
            table = _flux_factor(r2, proj, uniq, d)
        # table[i, j, u]; F(t - e_l) - F(t - e_{l+1})
        lo = table[:, :, inv[:, :-1]]
        hi = table[:, :, inv[:, 1:]]
        out[sl] = np.transpose(lo - hi, (0, 2, 1, 3))
    return out.reshape(len(targets) * len(times), len(src) * nl)


def apply_interval_sources(src, edges, coef, targets, times, normals=None, d=2):
    """Field (or normal derivative) of interval sources with strengths ``coef``.

    Same values as ``assemble_interval_sources(...) @ coef.ravel()`` without
    forming the matrix. Summation by parts turns the interval differences
    into one antiderivative table per source edge, weighted by the jumps
    of the strengths. Returns an array ``(n_targets, n_times)``.
    """
    src = np.asarray(src, dtype=float)
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    times = np.atleast_1d(np.asarray(times, dtype=float))
    coef = np.asarray(coef, dtype=float).reshape(len(src), len(edges) - 1)
    jumps = np.diff(np.pad(coef, ((0, 0), (1, 1))), axis=1)
    uniq, inv = _lag_table(times, edges)
    out = np.empty((len(targets), len(times)))
    chunk = max(1, int(2e7 // max(1, len(src) * len(uniq))))
    for start in range(0, len(targets), chunk):
        sl = slice(start, start + chunk)
        diff = targets[sl, None, :] - src[None, :, :]
        r2 = np.sum(diff * diff, axis=-1)
        if normals is None:
            table = kernel._time_factor(r2[..., None], uniq[None, None, :], d)
        else:
            nu = np.atleast_2d(np.asarray(normals, dtype=float))[sl]
            table = _flux_factor(r2, np.sum(diff * nu[:, None, :], axis=-1), uniq, d)
        for k in range(len(times)):
            out[sl, k] = np.einsum("ijm,jm->i", table[:, :, inv[k]], jumps)
    return out


def _flux_factor(r2, proj, lags, d):
    # d/dn_x of the tau-antiderivative; proj = n . (x - y)
    pos = lags > 0
    safe = np.where(pos, lags, 1.0)
    e = np.where(pos[None, None, :], np.exp(-r2[..., None] / (4 * safe[None, None, :])), 0.0)
    if d == 2:
        return -(proj / (2 * np.pi * r2))[..., None] * e
    r = np.sqrt(r2)[..., None]
    ec = np.where(pos[None, None, :], kernel.erfc(r / (2 * np.sqrt(safe[None, None, :]))), 0.0)
    dfdr = -ec / (4 * np.pi * r * r) - e / (4 * np.pi * r) / np.sqrt(np.pi * safe[None, None, :])
    return (dfdr / r) * proj[..., None]


@dataclass(frozen=True, eq=False)
class MFSBasis:
    """Interval heat sources at ``points`` on the intervals given by ``edges``.

    ``coefficients`` has shape ``(n_points, n_intervals)``.
    """

    points: np.ndarray
    edges: np.ndarray
    coefficients: np.ndarray | None = None
    d: int = 2
    diagnostics: dict = field(default_factory=dict, compare=False)

    @property
    def n_sources(self):
        return len(self.points) * (len(self.edges) - 1)

    def matrix(self, targets, times, normals=None):
        return assemble_interval_sources(self.points, self.edges, targets, times,
                                         normals, self.d)

    def _coef(self):
        if self.coefficients is None:
            raise ValueError("basis has no coefficients")
        return self.coefficients.ravel()

    def _evaluate(self, targets, times, normals=None):
        coef = self.coefficients
        if coef is None:
            raise ValueError("basis has no coefficients")
        return apply_interval_sources(self.points, self.edges, coef, targets, times,
                                      normals, self.d)

    def field(self, targets, times):
        return self._evaluate(targets, times)

    def normal_deriv(self, targets, normals, times):
        return self._evaluate(targets, times, np.atleast_2d(np.asarray(normals, dtype=float)))

    def gradient(self, targets, times):
        targets = np.atleast_2d(targets)
        comps = []
        for axis in range(targets.shape[1]):
            e = np.zeros_like(targets)
            e[:, axis] = 1.0
            comps.append(self.normal_deriv(targets, e, times))
        return np.stack(comps, axis=-1)

    def directional_derivs(self, z, s, h, m_max):
        """``(h . grad)^q u(z, s)`` for ``q = 0..m_max``.

        Each interval source is integrated in time with Gauss-Legendre
        panels graded towards the lag ``s - e = 0``; the integrand there
        vanishes to all orders because sources sit off the evaluation
        point.
        """
        coef = self.coefficients
        if coef is None:
            raise ValueError("basis has no coefficients")
        total = np.zeros(m_max + 1)
        active = np.nonzero(np.any(coef != 0, axis=0) & (self.edges[:-1] < s))[0]
        if len(active) == 0:
            return total
        nodes, weights = _graded_rule(self.edges, s, active)
        # nodes: (n_active, nq) source times
        vals = kernel.directional_derivs(
            h, m_max, np.asarray(z, dtype=float),
            s, self.points[:, None, None, :], nodes[None, :, :], self.d)
        # vals[q, j, a, p]
        integrated = np.einsum("qjap,ap->qja", vals, weights)
        return np.einsum("qja,ja->q", integrated, coef[:, active])


_GL_X, _GL_W = np.polynomial.legendre.leggauss(12)


def _graded_rule(edges, s, active, levels=24):
    """Quadrature nodes/weights in the source time over each active interval.

    Panels are geometric in the lag ``s - sigma`` so that the essential
    singularity at zero lag is resolved.
    """
    all_nodes, all_weights = [], []
    for l in active:
        lo, hi = edges[l], min(edges[l + 1], s)
        lag_hi, lag_lo = s - lo, s - hi
        if lag_lo <= 0:
            # geometric panels in the lag down to a negligible scale
            bps = lag_hi * 2.0 ** -np.arange(levels + 1)[::-1]
            bps = np.concatenate([[0.0], bps])
        else:
            ratio = lag_hi / lag_lo
            npan = max(1, int(np.ceil(np.log2(ratio))))
            bps = lag_lo * ratio ** (np.arange(npan + 1) / npan)
        a, b = bps[:-1, None], bps[1:, None]
        lag = 0.5 * (a + b) + 0.5 * (b - a) * _GL_X[None, :]
        w = 0.5 * (b - a) * _GL_W[None, :]
        all_nodes.append((s - lag).ravel())
        all_weights.append(w.ravel())
    width = max(len(n) for n in all_nodes)
    nodes = np.full((len(active), width), -np.inf)
    weights = np.zeros((len(active), width))
    for i, (n, w) in enumerate(zip(all_nodes, all_weights)):
        nodes[i, :len(n)] = n
        weights[i, :len(w)] = w
    nodes = np.where(np.isfinite(nodes), nodes, s + 1.0)  # inactive: phi = 0
    return nodes, weights


@dataclass(frozen=True, eq=False)
class CauchyData:
    """Dirichlet and Neumann traces (node x time) on ``boundary``."""

    boundary: ParamBoundary
    grid: TimeGrid
    dirichlet: np.ndarray
    neumann: np.ndarray

    def __post_init__(self):
        shape = (len(self.boundary), self.grid.nt)
        if self.dirichlet.shape != shape or self.neumann.shape != shape:
            raise ValueError(f"trace shapes must be {shape}")


@dataclass(frozen=True, eq=False)
class ForwardResult:
    basis: MFSBasis
    cauchy: CauchyData
    residual: float
    residual_by_curve: dict


def _source_count(n, ratio):
    return max(8, int(round(n * ratio)))


def _fit(blocks, rhs, params):
    A = np.vstack(blocks)
    b = np.concatenate(rhs)
    if not np.any(b):
        return np.zeros(A.shape[1]), 0.0, A.shape[1]
    coef, _, rank, _ = scipy.linalg.lstsq(A, b, cond=params.cutoff,
                                          lapack_driver="gelsd")
    return coef, None, rank


def _solve(omega, cavity, g, grid, params, n_omega, n_cavity):
    bd_o = discretize(omega, n_omega)
    times = grid.subnodes(params.colloc_per_interval)
    edges = TimeGrid(grid.T, grid.nt * params.time_refine).edges
    src = [discretize(scaled_shape(omega, params.outer_factor),
                      _source_count(n_omega, params.source_ratio)).nodes]
    targets = [(bd_o, g(bd_o.nodes, times))]
    if cavity is not None:
        if not shape_inclusion(cavity, omega, 256):
            raise ValueError("cavity is not strictly inside the conductor")
        bd_d = discretize(cavity, n_cavity)
        src.append(discretize(scaled_shape(cavity, params.inner_factor),
                              _source_count(n_cavity, params.source_ratio)).nodes)
        targets.append((bd_d, np.zeros((n_cavity, len(times)))))
    points = np.vstack(src)
    basis = MFSBasis(points, edges)
    blocks = [basis.matrix(bd.nodes, times) for bd, _ in targets]
    rhs = [val.ravel() for _, val in targets]
    coef, _, rank = _fit(blocks, rhs, params)
    gnorm = np.linalg.norm(rhs[0])
    residual_by_curve = {}
    for name, blk, r in zip(("outer", "cavity"), blocks, rhs):
        res = np.linalg.norm(blk @ coef - r)
        residual_by_curve[name] = float(res / gnorm) if gnorm > 0 else float(res)
    residual = max(residual_by_curve.values())
    coef = coef.reshape(len(points), len(edges) - 1)
    diag = {"rank": int(rank), "n_sources": int(coef.size),
            "n_equations": int(sum(len(r) for r in rhs)),
            "residual": residual, **{f"residual_{k}": v for k, v in residual_by_curve.items()}}
    basis = MFSBasis(points, edges, coef, diagnostics=diag)
    if residual > params.residual_tol:
        msg = f"boundary residual {residual:.3e} exceeds tolerance {params.residual_tol:.1e}"
        if params.strict:
            raise SolverError(msg)
        log.warning(msg)
    return basis, residual, residual_by_curve


def _cauchy_on(basis, omega, n_data, grid, g):
    bd = discretize(omega, n_data)
    dirichlet = g(bd.nodes, grid.nodes)
    neumann = basis.normal_deriv(bd.nodes, bd.normals, grid.nodes)
    return CauchyData(bd, grid, dirichlet, neumann)


def solve_direct(omega, cavity, g, grid, params=MFSParams(), n_omega=64,
                 n_cavity=32, n_data=None):
    """Solve the conductor problem with a Dirichlet cavity.

    ``g`` is a callable ``g(points, times)`` (see :func:`make_g`). Cauchy
    data are reported on ``n_data`` nodes of the outer boundary (default
    ``n_omega``) at the grid's midpoints.
    """
    basis, residual, by_curve = _solve(omega, cavity, g, grid, params,
                                       n_omega, n_cavity)
    cauchy = _cauchy_on(basis, omega, n_data or n_omega, grid, g)
    return ForwardResult(basis, cauchy, residual, by_curve)


def solve_background(omega, g, grid, params=MFSParams(), n_omega=64, n_data=None):
    """Cavity-free field with the same boundary temperature."""
    return solve_direct(omega, None, g, grid, params, n_omega, 0, n_data)


def cauchy_of_w(direct, background):
    """Cauchy data of ``u - mu``; the Dirichlet part is exactly zero."""
    if isinstance(direct, ForwardResult):
        direct = direct.cauchy
    if isinstance(background, ForwardResult):
        background = background.cauchy
    if direct.grid != background.grid:
        raise ValueError("time grids differ")
    if (direct.boundary.nodes.shape != background.boundary.nodes.shape
            or not np.allclose(direct.boundary.nodes, background.boundary.nodes)):
        raise ValueError("boundaries differ")
    return CauchyData(direct.boundary, direct.grid,
                      np.zeros_like(direct.dirichlet),
                      direct.neumann - background.neumann)


def add_noise(cauchy, delta, seed=0):
    """Relative Gaussian noise of norm ``delta * ||neumann||`` on the flux."""
    if delta == 0:
        return cauchy
    rng = np.random.default_rng(seed)
    xi = rng.standard_normal(cauchy.neumann.shape)
    noise = delta * np.linalg.norm(cauchy.neumann) * xi / np.linalg.norm(xi)
    return replace(cauchy, neumann=cauchy.neumann + noise)


def eval_field(basis, z, s):
    return float(basis.field(np.atleast_2d(z), [s])[0, 0])


def eval_directional_derivs(basis, z, s, h, m_max):
    return basis.directional_derivs(z, s, h, m_max)
