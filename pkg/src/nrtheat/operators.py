"""Dense space-time boundary operators.

All fields on a curve times a time grid are stored node-major: the sample
``(node i, time k)`` sits at flat index ``i * nt + k``. Every operator
carries the quadrature weights of its source and target samples, which
define the discrete L2 inner products standing in for the anisotropic
Sobolev spaces of the continuous theory. Changing these weights changes
constants, not which equations are solvable.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernel
from .forward import MFSBasis, MFSParams, TimeGrid, assemble_interval_sources, scaled_shape
from .geometry import ParamBoundary, RadialShape, contains, discretize, shape_inclusion

__all__ = [
    "NormSurrogate",
    "DenseOperator",
    "OperatorParams",
    "DirichletCorrector",
    "sample_weights",
    "assemble_single_layer",
    "assemble_R",
    "assemble_K",
    "assemble_boundary_K",
    "adjoint",
    "double_layer_smooth",
    "jump_relation_check",
    "dense_range_probe",
    "fit_density",
    "density_modes",
    "OperatorCache",
]

log = logging.getLogger(__name__)

_TINY = 1e-300


def sample_weights(boundary, grid):
    """Node-major product weights ``w_i * tau_k``."""
    return np.outer(boundary.weights, grid.weights).ravel()


@dataclass(frozen=True, eq=False)
class NormSurrogate:
    """Weighted discrete L2 inner product over node x time samples."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or np.any(w <= 0):
            raise ValueError("surrogate weights must be a positive vector")
        object.__setattr__(self, "weights", w)

    @classmethod
    def on(cls, boundary, grid):
        return cls(sample_weights(boundary, grid))

    def __len__(self):
        return len(self.weights)

    def inner(self, u, v):
        return float(np.sum(self.weights * np.ravel(u) * np.ravel(v)))

    def norm(self, u):
        return float(np.sqrt(np.sum(self.weights * np.ravel(u) ** 2)))


@dataclass(frozen=True, eq=False)
class DenseOperator:
    """Matrix plus the surrogate inner products of its domain and range."""

    entries: np.ndarray
    source: NormSurrogate
    target: NormSurrogate
    source_meta: tuple | None = None
    target_meta: tuple | None = None
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.entries.shape != (len(self.target), len(self.source)):
            raise ValueError(
                f"entries {self.entries.shape} do not match weights "
                f"({len(self.target)}, {len(self.source)})")

    @property
    def shape(self):
        return self.entries.shape

    def __matmul__(self, v):
        return self.entries @ v

    def apply(self, v):
        return self.entries @ np.ravel(v)

    def scaled(self):
        """Matrix of the operator between Euclidean copies of the two spaces."""
        return (np.sqrt(self.target.weights)[:, None] * self.entries
                / np.sqrt(self.source.weights)[None, :])


def adjoint(op):
    """Adjoint with respect to the surrogate inner products.

    ``W_src^{-1} A^T W_tgt`` so that ``<A u, v>_tgt = <u, A* v>_src``.
    """
    entries = (op.entries.T * op.target.weights[None, :]) / op.source.weights[:, None]
    return DenseOperator(entries, op.target, op.source, op.target_meta, op.source_meta,
                         {"adjoint_of": op.diagnostics.get("name", "operator")})


@dataclass(frozen=True)
class OperatorParams:
    """Discretization of the test-domain operators.

    ``kernel`` selects the Dirichlet Green function (``"dirichlet"``) or the
    free-space kernel (``"free_space"``) inside ``R``.
    """

    n_omega: int = 64
    n_G: int = 32
    kernel: str = "dirichlet"
    time_rule: str = "interval"
    trace_tol: float = 1e-6
    mfs: MFSParams = MFSParams()

    def __post_init__(self):
        if self.kernel not in ("dirichlet", "free_space"):
            raise ValueError(f"unknown kernel {self.kernel!r}")
        if self.time_rule not in ("midpoint", "interval"):
            raise ValueError(f"unknown time rule {self.time_rule!r}")

    def to_dict(self):
        out = dict(self.__dict__)
        out["mfs"] = self.mfs.to_dict()
        return out


def _as_points(tgt):
    if isinstance(tgt, ParamBoundary):
        return tgt.nodes
    return np.atleast_2d(np.asarray(tgt, dtype=float))


def _min_distance(a, b):
    diff = a[:, None, :] - b[None, :, :]
    return float(np.sqrt(np.min(np.sum(diff * diff, axis=-1))))


def _target_surrogate(tgt, grid, times):
    if isinstance(tgt, ParamBoundary) and times is None:
        return NormSurrogate.on(tgt, grid)
    n = len(_as_points(tgt)) * (grid.nt if times is None else len(times))
    return NormSurrogate(np.ones(n))


def assemble_single_layer(src, tgt, grid, times=None, target_normals=None,
                          time_rule="midpoint"):
    """Single-layer heat potential from densities on ``(src)_T``.

    Entry ``[(x, t), (y, s)] = Phi(x, t; y, s) w_y tau_s`` (midpoint rule) or
    ``w_y`` times the exact integral of ``Phi`` over the interval of ``s``
    (``time_rule="interval"``). With ``target_normals`` the potential is
    replaced by its normal derivative at the targets. Targets are evaluated
    at ``times`` (default: the grid nodes).
    """
    pts = _as_points(tgt)
    if _min_distance(pts, src.nodes) <= 1e-12:
        raise ValueError("source and target curves must be disjoint")
    t = grid.nodes if times is None else np.asarray(times, dtype=float)
    if time_rule == "interval":
        entries = assemble_interval_sources(src.nodes, grid.edges, pts, t, target_normals)
        entries *= np.repeat(src.weights, grid.nt)[None, :]
    else:
        x = pts[:, None, None, None, :]
        y = src.nodes[None, None, :, None, :]
        tt = t[None, :, None, None]
        ss = grid.nodes[None, None, None, :]
        if target_normals is None:
            vals = kernel.phi(x, tt, y, ss)
        else:
            nu = np.asarray(target_normals, dtype=float)[:, None, None, None, :]
            vals = np.sum(kernel.grad_phi(x, tt, y, ss) * nu, axis=-1)
        vals[np.abs(vals) < _TINY] = 0.0
        entries = (vals * (src.weights[:, None] * grid.weights[None, :])[None, None]
                   ).reshape(len(pts) * len(t), len(src) * grid.nt)
    name = "single_layer" if target_normals is None else "single_layer_flux"
    return DenseOperator(entries, NormSurrogate.on(src, grid),
                         _target_surrogate(tgt, grid, times), (src, grid), (tgt, grid),
                         {"name": name, "time_rule": time_rule})


class DirichletCorrector:
    """Caloric correction turning the free-space kernel into the Green function of Omega.

    Given traces on the collocation nodes of ``(dOmega)_T``, fits the
    exterior MFS field with the same trace (zero initial value) and
    returns its normal derivative on the target nodes. The truncated SVD of
    the collocation matrix is computed once.
    """

    def __init__(self, omega, grid, n_omega=64, params=MFSParams()):
        self.omega = omega
        self.grid = grid
        self.params = params
        self.colloc = discretize(omega, n_omega)
        self.targets = discretize(omega, n_omega)
        self.times = grid.subnodes(params.colloc_per_interval)
        edges = TimeGrid(grid.T, grid.nt * params.time_refine).edges
        n_src = max(8, int(round(n_omega * params.source_ratio)))
        src = discretize(scaled_shape(omega, params.outer_factor), n_src).nodes
        self.basis = MFSBasis(src, edges)
        A = self.basis.matrix(self.colloc.nodes, self.times)
        U, s, Vt = np.linalg.svd(A, full_matrices=False)
        keep = s > params.cutoff * s[0]
        self.U = U[:, keep]
        flux = self.basis.matrix(self.targets.nodes, grid.nodes, self.targets.normals)
        self.flux_map = flux @ (Vt[keep].T / s[keep][None, :])
        self.rank = int(keep.sum())

    def correct(self, traces):
        """Return ``(flux of the correction, relative residual per column)``."""
        proj = self.U.T @ traces
        resid = traces - self.U @ proj
        norms = np.linalg.norm(traces, axis=0)
        rel = np.linalg.norm(resid, axis=0) / np.where(norms > 0, norms, 1.0)
        return self.flux_map @ proj, rel


_CORRECTORS: dict = {}


def _corrector(omega, grid, params):
    key = (json.dumps(omega.to_dict(), sort_keys=True), grid.T, grid.nt, params.n_omega,
           json.dumps(params.mfs.to_dict(), sort_keys=True))
    if key not in _CORRECTORS:
        _CORRECTORS.clear()
        _CORRECTORS[key] = DirichletCorrector(omega, grid, params.n_omega, params.mfs)
    return _CORRECTORS[key]


def assemble_R(G, omega, grid, params=OperatorParams()):
    """Operator from densities on ``(dG)_T`` to fluxes on ``(dOmega)_T``.

    ``R phi = d_nu (S_G phi - v_c)`` where ``v_c`` is the caloric field in
    Omega with the same trace as ``S_G phi`` on ``(dOmega)_T``. Column trace
    residuals of that correction are reported in ``diagnostics``.
    """
    if not shape_inclusion(G, omega, 256):
        raise ValueError("test domain must be compactly inside the conductor")
    bd_G = discretize(G, params.n_G)
    bd_O = discretize(omega, params.n_omega)
    flux = assemble_single_layer(bd_G, bd_O, grid, target_normals=bd_O.normals,
                                 time_rule=params.time_rule)
    entries = flux.entries
    diag = {"name": "R", "kernel": params.kernel, "time_rule": params.time_rule}
    if params.kernel == "dirichlet":
        corr = _corrector(omega, grid, params)
        trace = assemble_single_layer(bd_G, corr.colloc, grid, times=corr.times,
                                      time_rule=params.time_rule).entries
        cflux, rel = corr.correct(trace)
        entries = entries - cflux
        bad = np.nonzero(rel > params.trace_tol)[0]
        diag.update(trace_residuals=rel, max_trace_residual=float(rel.max()),
                    n_bad_columns=int(len(bad)), correction_rank=corr.rank)
        if len(bad):
            log.warning("%d of %d R columns miss the trace tolerance (max %.2e)",
                        len(bad), len(rel), rel.max())
    return DenseOperator(entries, NormSurrogate.on(bd_G, grid), NormSurrogate.on(bd_O, grid),
                         (bd_G, grid), (bd_O, grid), diag)


def _check_inside(omega_bd, pts):
    shape = omega_bd.source_shape
    if shape is not None and not np.all(contains(shape, pts)):
        raise ValueError("targets must lie strictly inside the conductor")
    if _min_distance(pts, omega_bd.nodes) <= 1e-12:
        raise ValueError("targets must lie strictly inside the conductor")


def assemble_K(omega_bd, targets, grid, times=None, time_rule="midpoint"):
    """Backward double-layer potential from densities on ``(dOmega)_T``.

    Entry ``[(x, t), (y, s)] = d_nu(y) Phi(y, s; x, t) w_y tau_s``, zero for
    ``s <= t``, so the field vanishes at ``t = T``. With
    ``time_rule="interval"`` the density is piecewise constant and the
    kernel is integrated exactly over each interval (the interval holding
    ``t`` then contributes its part after ``t``).
    """
    pts = _as_points(targets)
    _check_inside(omega_bd, pts)
    t = grid.nodes if times is None else np.asarray(times, dtype=float)
    y = omega_bd.nodes[None, None, :, None, :]
    nu = omega_bd.normals[None, None, :, None, :]
    x = pts[:, None, None, None, :]
    if time_rule == "interval":
        lo = grid.edges[None, None, None, :-1] - t[None, :, None, None]
        hi = grid.edges[None, None, None, 1:] - t[None, :, None, None]
        vals = kernel.normal_deriv_phi_time_integral(y, x, lo, hi, nu)
        weights = omega_bd.weights[:, None] * np.ones(grid.nt)[None, :]
    else:
        vals = kernel.normal_deriv_phi(y, grid.nodes[None, None, None, :], x,
                                       t[None, :, None, None], nu)
        weights = omega_bd.weights[:, None] * grid.weights[None, :]
    vals[np.abs(vals) < _TINY] = 0.0
    entries = (vals * weights[None, None]).reshape(len(pts) * len(t), len(omega_bd) * grid.nt)
    return DenseOperator(entries, NormSurrogate.on(omega_bd, grid),
                         _target_surrogate(targets, grid, times), (omega_bd, grid),
                         (targets, grid), {"name": "K", "time_rule": time_rule})


def assemble_boundary_K(omega_bd, grid):
    """Interior boundary limit ``(calK - 1/2 I)`` of the backward double layer on ``(dOmega)_T``.

    Densities are piecewise constant on the grid intervals and integrated
    exactly in time; targets are the interval midpoints. The self term is
    the limit of the time-integrated kernel along the curve,
    ``-kappa / (4 pi)`` on the interval containing the target time.
    """
    nodes, normals = omega_bd.nodes, omega_bd.normals
    n, nt = len(omega_bd), grid.nt
    t = grid.nodes
    e = grid.edges
    lo = e[None, :-1] - t[:, None]
    hi = e[None, 1:] - t[:, None]
    vals = np.zeros((n, nt, n, nt))
    with np.errstate(divide="ignore", invalid="ignore"):
        for i in range(n):
            v = kernel.normal_deriv_phi_time_integral(
                nodes[:, None, None, :], nodes[i], lo[None], hi[None],
                normals[:, None, None, :])
            v[i] = 0.0
            vals[i] = np.transpose(v, (1, 0, 2))
    kappa = omega_bd.curvature
    for k in range(nt):
        vals[np.arange(n), k, np.arange(n), k] = -kappa / (4 * np.pi)
    entries = vals * omega_bd.weights[None, None, :, None]
    entries = entries.reshape(n * nt, n * nt) - 0.5 * np.eye(n * nt)
    sur = NormSurrogate.on(omega_bd, grid)
    return DenseOperator(entries, sur, sur, (omega_bd, grid), (omega_bd, grid),
                         {"name": "K_boundary"})


_GL8_X, _GL8_W = np.polynomial.legendre.leggauss(8)


def _lag_rule(span, smallest, per_octave=1):
    """Gauss-Legendre nodes on geometric lag panels in ``(0, span]``."""
    levels = max(1, int(np.ceil(np.log2(span / smallest) * per_octave)))
    bps = span * 2.0 ** (-np.arange(levels, -1, -1) / per_octave)
    bps = np.concatenate([[0.0], bps])
    a, b = bps[:-1, None], bps[1:, None]
    lag = (0.5 * (a + b) + 0.5 * (b - a) * _GL8_X[None, :]).ravel()
    w = (0.5 * (b - a) * _GL8_W[None, :]).ravel()
    return lag, w


def double_layer_smooth(omega_bd, density, targets, times, T, on_boundary=False,
                        smallest=1e-7):
    """Backward double layer of a callable density by fine time quadrature.

    ``density(points, times)`` returns an ``(n_points, n_times)`` array (or a
    stack ``(n_dens, n_points, n_times)``). ``targets`` are points; with
    ``on_boundary=True`` they must be the nodes of ``omega_bd`` and the
    value returned is the direct value ``calK[phi]`` (no jump term), with
    the near-diagonal mass at lags below the node spacing restored
    analytically from the local curvature.
    """
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    times = np.atleast_1d(np.asarray(times, dtype=float))
    y, nu, w = omega_bd.nodes, omega_bd.normals, omega_bd.weights
    out = None
    for k, t in enumerate(times):
        span = T - t
        if span <= 0:
            continue
        lag, lw = _lag_rule(span, smallest)
        s = t + lag
        dens = np.asarray(density(y, s), dtype=float)
        stacked = dens.ndim == 3
        if not stacked:
            dens = dens[None]
        if out is None:
            out = np.zeros((dens.shape[0], len(targets), len(times)))
        kern = kernel.normal_deriv_phi(y[None, :, None, :], s[None, None, :],
                                       targets[:, None, None, :], t, nu[None, :, None, :])
        if on_boundary:
            idx = np.arange(len(targets))
            kern[idx, idx, :] = 0.0
            diff = y[None, :, :] - targets[:, None, :]
            r2 = np.sum(diff * diff, axis=-1)
            h2 = np.partition(r2, 1, axis=1)[:, 1]
            # lags well below the node spacing are invisible to the spatial
            # rule; their local mass is -kappa / (4 sqrt(pi lag)) * phi(x, s)
            cut = h2 / 4.0
            small = lag[None, :] < cut[:, None]
            kern[:, :, :] *= ~small[:, None, :]
            local = np.where(small, -omega_bd.curvature[:, None]
                             / (4 * np.sqrt(np.pi * lag[None, :])), 0.0)
            own = dens[:, idx, :]
            out[:, :, k] += np.einsum("dil,il,l->di", own, local, lw)
        out[:, :, k] += np.einsum("ijl,djl,j,l->di",
                                  kern, dens, w, lw)
    if out is None:
        out = np.zeros((1, len(targets), len(times)))
    return out if stacked else out[0]


def jump_relation_check(omega_bd, grid, density, eps=(0.1, 0.05, 0.025), times=None,
                        upsample=True):
    """Compare the interior double layer at ``x - eps nu`` with ``calK[phi] - phi / 2``.

    Returns a dict mapping each ``eps`` to the maximum absolute error
    divided by ``max |phi|`` over the boundary nodes and sampled times.
    With ``upsample`` the interior evaluation refines the curve until the
    node spacing is below ``eps / 2`` (the density is a callable, so this
    is plain near-singular quadrature); otherwise it uses ``omega_bd``.
    """
    times = grid.nodes if times is None else np.asarray(times, dtype=float)
    nodes, normals = omega_bd.nodes, omega_bd.normals
    phi_x = np.asarray(density(nodes, times), dtype=float)
    scale = np.max(np.abs(phi_x))
    if scale == 0:
        return {float(e): 0.0 for e in eps}
    direct = double_layer_smooth(omega_bd, density, nodes, times, grid.T, on_boundary=True)
    limit = direct - 0.5 * phi_x
    table = {}
    for e in eps:
        quad = omega_bd
        if upsample and omega_bd.source_shape is not None:
            factor = int(np.ceil(2 * omega_bd.weights.max() / e))
            if factor > 1:
                quad = discretize(omega_bd.source_shape, len(omega_bd) * factor)
        inner = double_layer_smooth(quad, density, nodes - e * normals, times, grid.T)
        table[float(e)] = float(np.max(np.abs(inner - limit)) / scale)
    return table


def density_modes(n_nodes, nt):
    """Orthonormal node-major basis ordered by combined space-time frequency.

    Spatial factors are real Fourier modes along the curve parameter,
    temporal factors are DCT-II vectors; the full set spans all samples.
    """
    theta = 2 * np.pi * np.arange(n_nodes) / n_nodes
    spatial, sfreq = [np.full(n_nodes, 1 / np.sqrt(n_nodes))], [0]
    for k in range(1, n_nodes // 2 + 1):
        c = np.cos(k * theta)
        spatial.append(c / np.linalg.norm(c))
        sfreq.append(k)
        if 2 * k < n_nodes:
            s = np.sin(k * theta)
            spatial.append(s / np.linalg.norm(s))
            sfreq.append(k)
    S = np.array(spatial)
    p = np.arange(nt)
    C = np.cos(np.pi * p[:, None] * (np.arange(nt)[None, :] + 0.5) / nt)
    C /= np.linalg.norm(C, axis=1, keepdims=True)
    sf = np.asarray(sfreq) / (n_nodes / 2)
    tf = p / nt
    order = np.lexsort((np.add.outer(sf, tf).ravel(),
                        np.maximum.outer(sf, tf).ravel()))
    modes = np.einsum("an,pk->apnk", S, C).reshape(n_nodes * nt, n_nodes * nt)
    return modes[order].T


def _range_fit(omega_bd, E, grid, target, n_E, times, time_rule):
    bd_E = discretize(E, n_E) if isinstance(E, RadialShape) else E
    K = assemble_K(omega_bd, bd_E, grid, times, time_rule)
    W = np.sqrt(K.target.weights)
    b = W * np.ravel(target)
    Q = density_modes(len(omega_bd), grid.nt) / np.sqrt(K.source.weights)[:, None]
    return K, W, b, Q


def dense_range_probe(omega_bd, E, grid, target, sizes, n_E=32, times=None,
                      time_rule="midpoint"):
    """Least-squares residuals of ``K phi`` against ``target`` on ``(dE)_T``.

    ``phi`` ranges over the first ``n`` entries of :func:`density_modes`
    (scaled by the inverse square root of the source weights) for every
    ``n`` in ``sizes``. Returns ``(sizes, relative residuals)`` in the
    weighted norm on ``(dE)_T``; the residuals are non-increasing because
    the mode spaces are nested.
    """
    sizes = sorted(int(n) for n in sizes)
    K, W, b, Q = _range_fit(omega_bd, E, grid, target, n_E, times, time_rule)
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return np.array(sizes), np.zeros(len(sizes))
    A = W[:, None] * (K.entries @ Q[:, : sizes[-1]])
    # one QR gives every nested fit: residual after the first n columns
    Qr, Rr = np.linalg.qr(A)
    d = np.abs(np.diag(Rr))
    coeffs = Qr.T @ b
    coeffs[d <= 1e-13 * (d.max() if d.size else 1.0)] = 0.0
    res = [np.sqrt(max(bnorm**2 - np.sum(coeffs[:min(n, A.shape[1])] ** 2), 0.0)) / bnorm
           for n in sizes]
    return np.array(sizes), np.array(res)


def fit_density(omega_bd, E, grid, target, n_modes=None, n_E=32, times=None,
                time_rule="interval", rcond=1e-10):
    """Density on ``(dOmega)_T`` whose double layer matches ``target`` on ``(dE)_T``.

    Returns ``(phi, relative residual)``; ``phi`` is node-major.
    """
    K, W, b, Q = _range_fit(omega_bd, E, grid, target, n_E, times, time_rule)
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return np.zeros(K.shape[1]), 0.0
    Q = Q[:, :n_modes] if n_modes else Q
    A = W[:, None] * (K.entries @ Q)
    coef = np.linalg.lstsq(A, b, rcond=rcond)[0]
    phi = Q @ coef
    return phi, float(np.linalg.norm(A @ coef - b) / bnorm)


def _default_cache_dir():
    return Path(os.environ.get("NRT_CACHE_DIR", Path.home() / ".cache" / "nrtheat"))


class OperatorCache:
    """On-disk store of assembled matrices keyed by geometry, grid and parameters.

    Each entry is a raw little-endian float64 file plus a JSON sidecar with
    its shape, key and diagnostics.
    """

    def __init__(self, directory=None):
        self.directory = Path(directory) if directory else _default_cache_dir()

    @staticmethod
    def key(**parts):
        blob = json.dumps(parts, sort_keys=True, default=_jsonable)
        return hashlib.sha256(blob.encode()).hexdigest()[:32]

    def _paths(self, key):
        return self.directory / f"{key}.f64", self.directory / f"{key}.json"

    def load(self, key):
        data, meta = self._paths(key)
        if not (data.exists() and meta.exists()):
            return None
        info = json.loads(meta.read_text())
        arr = np.fromfile(data, dtype="<f8")
        if arr.size != int(np.prod(info["shape"])):
            return None
        return arr.reshape(info["shape"]), info

    def store(self, key, matrix, info=None):
        self.directory.mkdir(parents=True, exist_ok=True)
        data, meta = self._paths(key)
        np.ascontiguousarray(matrix, dtype="<f8").tofile(data)
        sidecar = {"key": key, "shape": list(matrix.shape), "dtype": "<f8"}
        sidecar.update(info or {})
        meta.write_text(json.dumps(sidecar, sort_keys=True, default=_jsonable))

    def cached_R(self, G, omega, grid, params=OperatorParams()):
        key = self.key(kind="R", G=G.to_dict(), omega=omega.to_dict(),
                       T=grid.T, nt=grid.nt, params=params.to_dict())
        hit = self.load(key)
        bd_G = discretize(G, params.n_G)
        bd_O = discretize(omega, params.n_omega)
        if hit is not None:
            entries, info = hit
            diag = dict(info.get("diagnostics", {}), cached=True)
            return DenseOperator(entries, NormSurrogate.on(bd_G, grid),
                                 NormSurrogate.on(bd_O, grid), (bd_G, grid), (bd_O, grid), diag)
        op = assemble_R(G, omega, grid, params)
        diag = {k: v for k, v in op.diagnostics.items() if k != "trace_residuals"}
        self.store(key, op.entries, {"diagnostics": diag})
        return op


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if hasattr(obj, "to_dict"):
        return obj.to_dict()
    raise TypeError(f"cannot serialize {type(obj)}")
