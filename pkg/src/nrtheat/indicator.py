"""No-response indicator of a test domain from the flux of ``w``.

Three forms are provided and checked against each other:

* the Tikhonov path of the equation ``R phi = d_nu w`` (range-test form),
* the supremum of ``(zeta, d_nu w)`` over ``||R* zeta|| <= 1`` evaluated
  through the singular value decomposition of ``R``,
* the probe form, where ``zeta`` is restricted to traces of backward
  double-layer potentials.

All norms are the weighted discrete L2 surrogates carried by the operator,
so every computation is done with the scaled matrix
``W_Y^{1/2} R W_X^{-1/2}`` in Euclidean coordinates.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

__all__ = [
    "DEFAULT_ALPHAS",
    "Policy",
    "RegPath",
    "SupForm",
    "Spectrum",
    "spectrum",
    "tikhonov_path",
    "sup_form",
    "probe_form",
    "classify",
    "calibrate_theta",
    "morozov_truncate",
    "duality_oracle",
]

DEFAULT_ALPHAS = 1e-2 * 2.0 ** -np.arange(12)


@dataclass(frozen=True, eq=False)
class Spectrum:
    """SVD of the scaled operator and the scaled right-hand side."""

    U: np.ndarray
    s: np.ndarray
    Vt: np.ndarray
    target_sqrt_w: np.ndarray
    source_sqrt_w: np.ndarray


def spectrum(R):
    """Thin SVD of ``W_Y^{1/2} R W_X^{-1/2}``."""
    U, s, Vt = scipy.linalg.svd(R.scaled(), full_matrices=False, lapack_driver="gesdd")
    return Spectrum(U, s, Vt, np.sqrt(R.target.weights), np.sqrt(R.source.weights))


@dataclass(frozen=True)
class Policy:
    """Slope and threshold rules of :func:`classify`."""

    slope_positive: float = -0.1
    slope_negative: float = -0.15
    tail: int = 4
    negative_factor: float = 10.0
    min_alphas: int = 8


@dataclass
class RegPath:
    """Tikhonov path record.

    ``alphas`` are the absolute regularization parameters used, strictly
    decreasing. ``alpha_scale`` is the factor they were multiplied by
    (``sigma_1^2`` for relative paths).
    """

    alphas: np.ndarray
    solution_norms: np.ndarray
    residuals: np.ndarray
    svd_spectrum: np.ndarray
    b_norm: float = 0.0
    alpha_scale: float = 1.0
    verdict: str = "uncertain"
    features: dict = field(default_factory=dict)

    def __post_init__(self):
        self.alphas = np.asarray(self.alphas, dtype=float)
        self.solution_norms = np.asarray(self.solution_norms, dtype=float)
        self.residuals = np.asarray(self.residuals, dtype=float)
        self.svd_spectrum = np.asarray(self.svd_spectrum, dtype=float)
        if np.any(self.alphas <= 0) or np.any(np.diff(self.alphas) >= 0):
            raise ValueError("alphas must be positive and strictly decreasing")
        if not self.features:
            self.features = path_features(self.alphas, self.solution_norms)

    def __len__(self):
        return len(self.alphas)

    def head(self, n):
        """Path restricted to its first ``n`` alphas."""
        return RegPath(self.alphas[:n], self.solution_norms[:n], self.residuals[:n],
                       self.svd_spectrum, self.b_norm, self.alpha_scale)

    def scaled_by(self, lam):
        """Path for the right-hand side ``lam * b``."""
        lam = abs(float(lam))
        return RegPath(self.alphas, lam * self.solution_norms, lam * self.residuals,
                       self.svd_spectrum, lam * self.b_norm, self.alpha_scale)

    def to_dict(self):
        return {
            "alphas": self.alphas.tolist(),
            "solution_norms": self.solution_norms.tolist(),
            "residuals": self.residuals.tolist(),
            "svd_spectrum": self.svd_spectrum.tolist(),
            "b_norm": self.b_norm,
            "alpha_scale": self.alpha_scale,
            "verdict": self.verdict,
            "features": self.features,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(np.array(data["alphas"]), np.array(data["solution_norms"]),
                   np.array(data["residuals"]), np.array(data["svd_spectrum"]),
                   data.get("b_norm", 0.0), data.get("alpha_scale", 1.0),
                   data.get("verdict", "uncertain"), data.get("features", {}))

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, default=_num)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["alpha", "norm", "residual"])
            for row in zip(self.alphas, self.solution_norms, self.residuals):
                out.writerow([f"{v:.17g}" for v in row])


def _num(v):
    return v.item() if hasattr(v, "item") else str(v)


def path_features(alphas, norms, tail=4):
    """Log-log slope of ``||phi_alpha||`` against ``alpha`` over the last ``tail`` alphas."""
    a = np.asarray(alphas)[-tail:]
    n = np.asarray(norms)[-tail:]
    if len(a) < 2 or np.any(n <= 0):
        slope = 0.0
    else:
        slope = float(np.polyfit(np.log(a), np.log(n), 1)[0])
    plateau = float(norms[-1]) if len(norms) else 0.0
    return {"slope": slope, "plateau": plateau}


def _scaled_rhs(R, b):
    b = np.ravel(np.asarray(b, dtype=float))
    if b.shape != (R.shape[0],):
        raise ValueError(f"right-hand side has {b.size} samples, operator has {R.shape[0]} rows")
    return np.sqrt(R.target.weights) * b


def tikhonov_path(R, b, alphas=None, method="svd", relative=True, spec=None):
    """``phi_alpha = (R* R + alpha I)^{-1} R* b`` over a decreasing list of alphas.

    With ``relative`` the alphas are multiplied by ``sigma_1^2`` of the
    scaled operator. ``method="solve"`` uses Cholesky solves of the normal
    equations instead of the SVD (an independent computation).
    """
    alphas = DEFAULT_ALPHAS if alphas is None else np.asarray(alphas, dtype=float)
    bh = _scaled_rhs(R, b)
    spec = spec or spectrum(R)
    s = spec.s
    scale = float(s[0] ** 2) if (relative and s.size and s[0] > 0) else 1.0
    alph = alphas * scale
    bnorm = float(np.linalg.norm(bh))
    if method == "svd":
        c = spec.U.T @ bh
        outside = max(bnorm**2 - float(c @ c), 0.0)
        s2 = s[None, :] ** 2
        a = alph[:, None]
        norms = np.sqrt(np.sum((s[None, :] * c[None, :] / (s2 + a)) ** 2, axis=1))
        resid = np.sqrt(np.sum((a * c[None, :] / (s2 + a)) ** 2, axis=1) + outside)
    elif method == "solve":
        A = R.scaled()
        M = A.T @ A
        rhs = A.T @ bh
        norms, resid = [], []
        for al in alph:
            try:
                phi = scipy.linalg.cho_solve(scipy.linalg.cho_factor(M + al * np.eye(len(M))), rhs)
            except np.linalg.LinAlgError as exc:
                raise np.linalg.LinAlgError(f"Tikhonov solve failed at alpha={al:g}") from exc
            norms.append(np.linalg.norm(phi))
            resid.append(np.linalg.norm(A @ phi - bh))
        norms, resid = np.array(norms), np.array(resid)
    else:
        raise ValueError(f"unknown method {method!r}")
    return RegPath(alph, norms, resid, s, bnorm, scale)


@dataclass(frozen=True)
class SupForm:
    value: float
    unresolved_fraction: float
    infinite: bool
    rank: int


def sup_form(R, b, cutoff=1e-3, threshold=0.5, spec=None):
    """Supremum of ``(zeta, b)`` over ``||R* zeta|| <= 1`` restricted to kept directions.

    Directions with ``sigma_i > cutoff * sigma_1`` are kept. The part of
    ``b`` outside them, relative to ``||b||``, is the unresolved fraction;
    the value is flagged infinite when it exceeds ``threshold``.
    """
    if not 0 < cutoff < 1:
        raise ValueError("cutoff must lie in (0, 1)")
    bh = _scaled_rhs(R, b)
    spec = spec or spectrum(R)
    bnorm = np.linalg.norm(bh)
    if bnorm == 0:
        return SupForm(0.0, 0.0, False, 0)
    keep = spec.s > cutoff * spec.s[0]
    c = spec.U[:, keep].T @ bh
    value = float(np.sqrt(np.sum((c / spec.s[keep]) ** 2)))
    frac = float(np.sqrt(max(bnorm**2 - c @ c, 0.0)) / bnorm)
    return SupForm(value, frac, frac > threshold, int(keep.sum()))


def probe_form(K_boundary, R, b, densities, cutoff=1e-3, spec=None):
    """Running supremum of ``|(K phi, b)|`` over certified probes.

    Each probe trace ``zeta = K phi`` on the boundary is projected onto the
    left singular directions of ``R`` kept by ``cutoff`` and rescaled so
    that ``||R* zeta|| = 1``; by Cauchy-Schwarz every value is then at most
    :func:`sup_form` with the same cutoff.
    """
    bh = _scaled_rhs(R, b)
    spec = spec or spectrum(R)
    keep = spec.s > cutoff * spec.s[0]
    U, s = spec.U[:, keep], spec.s[keep]
    cb = U.T @ bh
    dens = np.atleast_2d(np.asarray(densities, dtype=float))
    traces = K_boundary.entries @ dens.T
    coef = U.T @ (spec.target_sqrt_w[:, None] * traces)
    norms = np.linalg.norm(s[:, None] * coef, axis=0)
    vals = np.abs(cb @ coef) / np.where(norms > 0, norms, 1.0)
    vals[norms == 0] = 0.0
    return np.maximum.accumulate(vals)


def calibrate_theta(paths, factor=3.0, policy=Policy()):
    """Threshold ``factor * median plateau`` over paths that level off.

    Falls back to all paths when none level off.
    """
    feats = [p.features for p in paths]
    flat = [f["plateau"] for f in feats if f["slope"] > policy.slope_positive]
    pool = flat or [f["plateau"] for f in feats]
    return factor * float(np.median(pool)) if pool else 0.0


def classify(path, theta, policy=Policy(), noise_level=0.0):
    """Verdict from the plateau slope and the plateau value.

    With ``noise_level > 0`` (the surrogate norm of the data noise) the
    path is first cut at the discrepancy level, see :func:`morozov_truncate`.
    """
    if len(path) < policy.min_alphas:
        raise ValueError(f"need at least {policy.min_alphas} alphas")
    if not np.any(path.solution_norms):
        return "positive"
    if noise_level > 0:
        path = morozov_truncate(path, noise_level, keep_min=policy.tail)
    feats = path_features(path.alphas, path.solution_norms, policy.tail)
    if feats["slope"] > policy.slope_positive and feats["plateau"] < theta:
        return "positive"
    if feats["slope"] < policy.slope_negative or feats["plateau"] > policy.negative_factor * theta:
        return "negative"
    return "uncertain"


def morozov_truncate(path, level, tau=1.0, keep_min=4):
    """Drop alphas past the first one whose residual reaches ``tau * level``.

    ``level`` is an absolute noise norm in the target surrogate; at least
    ``keep_min`` alphas are kept.
    """
    if level <= 0:
        return path
    hit = np.nonzero(path.residuals <= tau * level)[0]
    n = len(path) if len(hit) == 0 else int(hit[0]) + 1
    return path.head(max(n, min(keep_min, len(path))))


def duality_oracle(A, b, iters=2000, tol=1e-15):
    """``max <zeta, b>`` subject to ``||A^T zeta|| <= 1`` by projected gradient ascent.

    The step size doubles every iteration. The projection onto the
    ellipsoid ``zeta^T (A A^T) zeta <= 1`` is computed from
    ``(I + mu A A^T)^{-1} v`` with ``mu`` found by bisection. Intended for small dense instances.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    if not np.any(b):
        return 0.0
    M = A @ A.T
    evals, evecs = np.linalg.eigh(M)
    evals = np.maximum(evals, 0.0)

    def project(v):
        # work in the eigenbasis of M: the projection is diagonal there
        w = evecs.T @ v
        if np.sum(evals * w * w) <= 1.0:
            return v
        lo, hi = 0.0, 1.0
        while np.sum(evals * (w / (1 + hi * evals)) ** 2) > 1.0:
            hi *= 2.0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if np.sum(evals * (w / (1 + mid * evals)) ** 2) > 1.0:
                lo = mid
            else:
                hi = mid
        return evecs @ (w / (1 + hi * evals))

    # the maximizer is the point whose normal is parallel to b; it is the
    # limit of the projection of zeta + t b as t grows, so t doubles each step
    step = 1.0 / (np.linalg.norm(b) * max(evals.max(), 1e-300) ** 0.5)
    zeta = project(step * b)
    best = float(zeta @ b)
    for _ in range(iters):
        step *= 2.0
        nxt = project(zeta + step * b)
        val = float(nxt @ b)
        done = abs(val - best) <= tol * abs(val)
        zeta, best = nxt, val
        if done:
            break
    return float(zeta @ b)
