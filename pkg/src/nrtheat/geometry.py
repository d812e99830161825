"""Star-shaped domains, boundary quadrature and pixel masks.

Every domain used by the method (the conductor, the cavity and the test
domains) is a star-shaped curve with a finite Fourier radial function::

    r(theta) = radius0 * (1 + sum_k a_k cos(k theta) + b_k sin(k theta))

which keeps boundaries smooth and makes nested families easy to build.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "RadialShape",
    "ParamBoundary",
    "PixelGrid",
    "make_shape",
    "circle",
    "discretize",
    "contains",
    "shape_inclusion",
    "homotopy_family",
    "recenter",
    "shrink",
    "pixel_grid",
    "mask_from_shapes",
    "jaccard",
    "winding_number",
]

_POSITIVITY_GRID = 1024


@dataclass(frozen=True)
class RadialShape:
    """Star-shaped closed curve around ``center``.

    ``terms`` holds ``(k, a_k, b_k)`` triples of relative Fourier amplitudes.
    """

    center: tuple[float, float]
    radius0: float
    terms: tuple[tuple[int, float, float], ...] = ()

    def radius(self, theta):
        theta = np.asarray(theta, dtype=float)
        rel = np.ones_like(theta)
        for k, a, b in self.terms:
            rel = rel + a * np.cos(k * theta) + b * np.sin(k * theta)
        return self.radius0 * rel

    def radius_derivs(self, theta):
        """Return ``r, r', r''`` at ``theta``."""
        theta = np.asarray(theta, dtype=float)
        r = np.ones_like(theta)
        dr = np.zeros_like(theta)
        ddr = np.zeros_like(theta)
        for k, a, b in self.terms:
            c, s = np.cos(k * theta), np.sin(k * theta)
            r = r + a * c + b * s
            dr = dr + k * (-a * s + b * c)
            ddr = ddr - k * k * (a * c + b * s)
        return self.radius0 * r, self.radius0 * dr, self.radius0 * ddr

    def point(self, theta):
        theta = np.asarray(theta, dtype=float)
        r = self.radius(theta)
        c = np.asarray(self.center, dtype=float)
        return c + np.stack([r * np.cos(theta), r * np.sin(theta)], axis=-1)

    def min_radius(self, n=_POSITIVITY_GRID):
        return float(self.radius(2 * np.pi * np.arange(n) / n).min())

    def max_radius(self, n=_POSITIVITY_GRID):
        return float(self.radius(2 * np.pi * np.arange(n) / n).max())

    @property
    def is_circle(self):
        return all(a == 0 and b == 0 for _, a, b in self.terms)

    def to_dict(self):
        return {
            "center": [float(self.center[0]), float(self.center[1])],
            "radius0": float(self.radius0),
            "terms": [[int(k), float(a), float(b)] for k, a, b in self.terms],
        }

    @classmethod
    def from_dict(cls, data):
        terms = []
        for term in data.get("terms", []):
            k, a = int(term[0]), float(term[1])
            b = float(term[2]) if len(term) > 2 else 0.0
            terms.append((k, a, b))
        return make_shape(data["center"], data["radius0"], terms)


def make_shape(center, radius0, perturbation=()):
    """Build a validated :class:`RadialShape`.

    ``perturbation`` entries are ``(k, a)`` (cosine only) or ``(k, a, b)``.
    Raises ``ValueError`` when the radial function is not positive on a
    1024-point angle grid.
    """
    if not radius0 > 0:
        raise ValueError(f"radius0 must be positive, got {radius0}")
    terms = []
    for term in perturbation:
        if len(term) == 2:
            k, a = term
            b = 0.0
        else:
            k, a, b = term
        if int(k) < 1:
            raise ValueError(f"Fourier frequency must be >= 1, got {k}")
        terms.append((int(k), float(a), float(b)))
    shape = RadialShape(
        (float(center[0]), float(center[1])), float(radius0), tuple(terms)
    )
    if shape.min_radius() <= 0:
        raise ValueError("radial function is not positive: degenerate curve")
    return shape


def circle(center=(0.0, 0.0), radius=1.0):
    return make_shape(center, radius)


@dataclass(frozen=True, eq=False)
class ParamBoundary:
    """Nodes, unit outward normals and arc-length weights of a closed curve."""

    nodes: np.ndarray
    normals: np.ndarray
    weights: np.ndarray
    source_shape: RadialShape | None = None
    curvature: np.ndarray | None = field(default=None, repr=False)

    def __len__(self):
        return len(self.weights)

    @property
    def length(self):
        return float(self.weights.sum())


def discretize(shape, n):
    """Sample ``shape`` at ``theta_j = 2 pi j / n`` (counterclockwise)."""
    if n < 8:
        raise ValueError(f"need at least 8 nodes, got {n}")
    theta = 2 * np.pi * np.arange(n) / n
    r, dr, ddr = shape.radius_derivs(theta)
    cos, sin = np.cos(theta), np.sin(theta)
    nodes = np.asarray(shape.center) + np.stack([r * cos, r * sin], axis=-1)
    tx = dr * cos - r * sin
    ty = dr * sin + r * cos
    speed = np.hypot(tx, ty)
    normals = np.stack([ty, -tx], axis=-1) / speed[:, None]
    # signed curvature of a polar curve, positive for convex arcs
    kappa = (r * r + 2 * dr * dr - r * ddr) / speed**3
    weights = speed * 2 * np.pi / n
    for arr in (nodes, normals, weights, kappa):
        arr.setflags(write=False)
    return ParamBoundary(nodes, normals, weights, shape, kappa)


def _polar(shape, p):
    p = np.asarray(p, dtype=float)
    d = p - np.asarray(shape.center)
    return np.hypot(d[..., 0], d[..., 1]), np.arctan2(d[..., 1], d[..., 0])


def contains(shape, p):
    """Strict membership test; boundary points count as outside."""
    rho, ang = _polar(shape, p)
    return rho < shape.radius(ang)


def clearance(shape, p):
    """Radial gap ``r(angle) - |p - center|`` (positive inside)."""
    rho, ang = _polar(shape, p)
    return shape.radius(ang) - rho


def shape_inclusion(inner, outer, nprobe=256):
    """True iff every boundary sample of ``inner`` lies strictly inside ``outer``."""
    if nprobe < 64:
        raise ValueError("nprobe must be >= 64")
    pts = inner.point(2 * np.pi * np.arange(nprobe) / nprobe)
    tol = 1e-12 * max(1.0, outer.max_radius())
    return bool(np.all(clearance(outer, pts) > tol))


def _ray_radius(shape, origin, theta, iters=80):
    """Distance from ``origin`` to the boundary of ``shape`` along ``theta``."""
    direction = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    lo = np.zeros_like(theta)
    hi = np.full_like(theta, 2.0 * (shape.max_radius() + np.hypot(
        origin[0] - shape.center[0], origin[1] - shape.center[1])))
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        inside = contains(shape, origin + mid[:, None] * direction)
        lo = np.where(inside, mid, lo)
        hi = np.where(inside, hi, mid)
    return 0.5 * (lo + hi)


def recenter(shape, center, nmodes=48, tol=1e-13):
    """Express ``shape`` as a radial function about a new ``center``.

    ``center`` must lie inside ``shape`` and the curve must be star-shaped
    with respect to it. The re-centred radial function is fitted by FFT and
    truncated once the relative Fourier amplitudes fall below ``tol``.
    """
    center = np.asarray(center, dtype=float)
    if np.allclose(center, shape.center, rtol=0, atol=1e-15):
        return shape
    if not contains(shape, center):
        raise ValueError("new center lies outside the shape")
    n = 4 * nmodes
    theta = 2 * np.pi * np.arange(n) / n
    rho = _ray_radius(shape, center, theta)
    coef = np.fft.rfft(rho) / n
    r0 = coef[0].real
    terms = []
    for k in range(1, nmodes + 1):
        a = 2 * coef[k].real / r0
        b = -2 * coef[k].imag / r0
        if abs(a) > tol or abs(b) > tol:
            terms.append((k, a, b))
    return make_shape(center, r0, terms)


def shrink(shape, amount):
    """Copy of ``shape`` with every radius reduced by ``amount``.

    For circles this is the exact inward offset curve.
    """
    r0 = shape.radius0 - amount
    if r0 <= 0:
        raise ValueError("shrink amount exceeds radius")
    scale = shape.radius0 / r0
    terms = [(k, a * scale, b * scale) for k, a, b in shape.terms]
    return make_shape(shape.center, r0, terms)


def _interp_shape(outer, inner, ell):
    coeffs = {}
    for k, a, b in outer.terms:
        ca, cb = coeffs.get(k, (0.0, 0.0))
        coeffs[k] = (ca + (1 - ell) * outer.radius0 * a,
                     cb + (1 - ell) * outer.radius0 * b)
    for k, a, b in inner.terms:
        ca, cb = coeffs.get(k, (0.0, 0.0))
        coeffs[k] = (ca + ell * inner.radius0 * a, cb + ell * inner.radius0 * b)
    r0 = (1 - ell) * outer.radius0 + ell * inner.radius0
    terms = [(k, ca / r0, cb / r0) for k, (ca, cb) in sorted(coeffs.items())
             if ca != 0 or cb != 0]
    return make_shape(outer.center, r0, terms)


def homotopy_family(outer, inner, steps):
    """Nested family from ``outer`` (first) to ``inner`` (last).

    Radial functions about the common center are interpolated linearly, so
    each member is compactly contained in its predecessor provided
    ``r_inner < r_outer`` everywhere.
    """
    if steps < 2:
        raise ValueError("steps must be >= 2")
    inner_c = recenter(inner, outer.center)
    theta = 2 * np.pi * np.arange(_POSITIVITY_GRID) / _POSITIVITY_GRID
    if np.any(inner_c.radius(theta) >= outer.radius(theta)):
        raise ValueError("inner shape is not nested inside outer shape")
    family = [outer]
    for ell in np.linspace(0.0, 1.0, steps)[1:-1]:
        family.append(_interp_shape(outer, inner_c, float(ell)))
    family.append(inner)
    return family


@dataclass(frozen=True, eq=False)
class PixelGrid:
    """Pixel-centre sampling of a bounding box ``(xmin, xmax, ymin, ymax)``.

    ``values`` is indexed ``[iy, ix]`` with ``iy = 0`` at ``ymin``.
    """

    bbox: tuple[float, float, float, float]
    nx: int
    ny: int
    values: np.ndarray | None = None

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ValueError("resolution must be >= 1")
        if self.values is not None:
            if self.values.shape != (self.ny, self.nx):
                raise ValueError("values do not match resolution")
            if self.values.dtype != bool and np.any(self.values < 0):
                raise ValueError("counts must be non-negative")

    def centers(self):
        xmin, xmax, ymin, ymax = self.bbox
        xs = xmin + (np.arange(self.nx) + 0.5) * (xmax - xmin) / self.nx
        ys = ymin + (np.arange(self.ny) + 0.5) * (ymax - ymin) / self.ny
        gx, gy = np.meshgrid(xs, ys)
        return np.stack([gx, gy], axis=-1)

    @property
    def pixel_area(self):
        xmin, xmax, ymin, ymax = self.bbox
        return (xmax - xmin) * (ymax - ymin) / (self.nx * self.ny)

    def same_spec(self, other):
        return (tuple(self.bbox) == tuple(other.bbox)
                and self.nx == other.nx and self.ny == other.ny)

    def with_values(self, values):
        return PixelGrid(tuple(self.bbox), self.nx, self.ny, values)


def pixel_grid(bbox=(-1.0, 1.0, -1.0, 1.0), nx=64, ny=None):
    return PixelGrid(tuple(float(v) for v in bbox), int(nx), int(ny or nx))


def mask_from_shapes(shapes, grid, mode="intersect"):
    """Boolean mask of pixel centres inside all (or any) ``shapes``."""
    shapes = list(shapes)
    if not shapes:
        raise ValueError("need at least one shape")
    pts = grid.centers()
    masks = [contains(s, pts) for s in shapes]
    if mode == "intersect":
        values = np.logical_and.reduce(masks)
    elif mode == "union":
        values = np.logical_or.reduce(masks)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return grid.with_values(values)


def jaccard(a, b):
    if not a.same_spec(b):
        raise ValueError("pixel grids differ")
    ma, mb = np.asarray(a.values, bool), np.asarray(b.values, bool)
    union = np.logical_or(ma, mb).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(ma, mb).sum() / union)


def winding_number(polygon, p):
    """Winding number of a closed polygon around points ``p``.

    Independent of the radial representation; used as a membership oracle.
    """
    p = np.asarray(p, dtype=float)
    v = polygon[None, :, :] - p.reshape(-1, 1, 2)
    w = np.roll(v, -1, axis=1)
    cross = v[..., 0] * w[..., 1] - v[..., 1] * w[..., 0]
    dot = (v * w).sum(-1)
    total = np.arctan2(cross, dot).sum(axis=1)
    return np.rint(total / (2 * np.pi)).astype(int).reshape(p.shape[:-1])
