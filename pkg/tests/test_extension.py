import numpy as np
import pytest

from nrtheat import kernel
from nrtheat.extension import (ProbeSpec, boundary_green_term, data_basis, log_taylor_coefficients,
                               make_E, normalized_probe, probe_functional, probe_norm_N,
                               taylor_blowup_map, wtilde, wtilde_derivs)
from nrtheat.forward import CauchyData, MFSBasis, TimeGrid, eval_field
from nrtheat.geometry import circle, contains, discretize, shape_inclusion
from nrtheat.operators import assemble_boundary_K

OMEGA = circle()
G = circle((0.3, 0.0), 0.35)


@pytest.fixture(scope="module")
def K_boundary(std):
    return assemble_boundary_K(std.cauchy_w.boundary, std.grid)


def _zero_cauchy(grid=TimeGrid(1.0, 8), n=32):
    bd = discretize(OMEGA, n)
    z = np.zeros((n, grid.nt))
    return CauchyData(bd, grid, z, z.copy())


def test_wtilde_vanishes_without_cavity():
    c = _zero_cauchy()
    assert wtilde(c, (0.1, 0.2), 0.5) == 0.0
    assert not np.any(wtilde(c, [[0.1, 0.2], [0.0, -0.4]], [0.3, 0.9]))


def test_double_term_vanishes_for_w_data(std):
    single, double = wtilde(std.cauchy_w, [[0.0, 0.5], [-0.4, 0.1]], [0.5, 0.9],
                            return_terms=True)
    assert not np.any(double)
    assert np.all(np.isfinite(single)) and np.any(single)


def test_green_identity_with_cavity_term(std, rng):
    """``w = w~ - (cavity term)`` for the exact trace of the synthetic ``w``."""
    basis, grid = std.w_basis, std.grid
    bd = discretize(OMEGA, 64)
    # the fitted field misses w = 0 on the outer boundary by ~1e-3, so the
    # double layer of its actual trace is kept
    cauchy = CauchyData(bd, grid, basis.field(bd.nodes, grid.nodes),
                        basis.normal_deriv(bd.nodes, bd.normals, grid.nodes))
    pts = []
    while len(pts) < 50:
        r, ang = rng.uniform(0.1, 0.75), rng.uniform(0, 2 * np.pi)
        z = r * np.array([np.cos(ang), np.sin(ang)])
        if not contains(G, z):
            pts.append(z)
    pts = np.array(pts)
    ts = rng.uniform(0.3, 1.0, 50)
    wt = np.array([wtilde(cauchy, z, s) for z, s in zip(pts, ts)])
    cav = boundary_green_term(basis, std.cavity, pts, ts)
    w = np.array([eval_field(basis, z, s) for z, s in zip(pts, ts)])
    assert np.max(np.abs(w - (wt - cav))) <= 1e-3 * np.max(np.abs(w))
    # the cavity term is what separates w from its continuation
    assert np.max(np.abs(w - wt)) > 10 * np.max(np.abs(w - (wt - cav)))


def test_wtilde_is_caloric(std):
    c = std.cauchy_w
    step, dt = 1e-3, 1e-5
    for z, s in (((-0.2, 0.5), 0.6), ((0.5, -0.3), 0.83)):
        z = np.asarray(z)

        def f(y, t):
            return wtilde(c, y, t)

        ex, ey = np.array([step, 0]), np.array([0, step])
        lap = (f(z + ex, s) + f(z - ex, s) + f(z + ey, s) + f(z - ey, s) - 4 * f(z, s)) / step**2
        ft = (f(z, s + dt) - f(z, s - dt)) / (2 * dt)
        assert abs(ft - lap) <= 1e-4 * max(abs(ft), abs(lap))


def test_wtilde_derivs_consistent(std):
    z, s, h = np.array([-0.3, 0.4]), 0.7, np.array([0.8, 0.6])
    d = wtilde_derivs(std.cauchy_w, z, s, h, 2)
    assert d[0] == pytest.approx(wtilde(std.cauchy_w, z, s), rel=1e-12)
    step = 1e-4
    c = std.cauchy_w
    fd = (wtilde(c, z + step * h, s) - wtilde(c, z - step * h, s)) / (2 * step)
    assert fd == pytest.approx(d[1], rel=1e-6)
    with pytest.raises(ValueError):
        wtilde_derivs(CauchyData(c.boundary, c.grid, np.ones_like(c.dirichlet), c.neumann),
                      z, s, h, 2)


def test_probe_norm_positive_and_decays():
    h = (1.0, 0.0)
    ray = [(-0.1 - d, 0.0) for d in (0.1, 0.2, 0.3, 0.4)]
    N = [probe_norm_N(z, 0.7, h, 0, G, OMEGA) for z in ray]
    assert all(n > 0 for n in N)
    assert all(a > b for a, b in zip(N, N[1:]))


def test_probe_norm_rejects_norm_region():
    with pytest.raises(ValueError):
        probe_norm_N((0.3, 0.0), 0.5, (1.0, 0.0), 0, G, OMEGA)
    with pytest.raises(ValueError):
        probe_norm_N((0.0, 0.98), 0.5, (1.0, 0.0), 0, G, OMEGA)


def test_probe_norm_order_ratio():
    # kernel peaks at lag d^2 / 4 for distance d, where the first Hermite factor is 2 / d
    z = np.array([-0.25, 0.0])
    d = 0.3 - 0.35 - z[0]
    ratio = (probe_norm_N(z, 0.7, (1.0, 0.0), 1, G, OMEGA)
             / probe_norm_N(z, 0.7, (1.0, 0.0), 0, G, OMEGA))
    assert 0.1 < ratio / (2 / d) < 10


def test_normalized_probe_values():
    spec = ProbeSpec((-0.5, 0.2), 0.6, (0.0, 1.0), 0, N=2.5)
    pts = np.array([[0.3, 0.1], [0.5, -0.2]])
    t = np.array([0.1, 0.4, 0.6, 0.8])
    vals = normalized_probe(spec, pts, t)
    for i, x in enumerate(pts):
        for k, tk in enumerate(t):
            assert vals[i, k] == pytest.approx(kernel.phi(spec.z, spec.s, x, tk) / 2.5,
                                               rel=1e-12, abs=1e-300)
    assert not np.any(vals[:, 2:])
    with pytest.raises(ValueError):
        ProbeSpec((0, 0), 0.5, (1.0, 1.0), 0)


def test_normalized_probe_norm_bounded():
    z, s, h, m = (-0.3, 0.4), 0.7, (0.6, 0.8), 2
    N = probe_norm_N(z, s, h, m, G, OMEGA)
    on_G = probe_norm_N(z, s, h, m, G, OMEGA, eps=1e-9)
    c_norm = 0.7
    assert c_norm * on_G / N <= c_norm


def test_blowup_map_zero_field():
    basis = MFSBasis(np.array([[2.0, 0.0]]), TimeGrid(1.0, 4).edges, np.zeros((1, 4)))
    bm = taylor_blowup_map(basis, [[0.0, 0.1], [0.2, -0.2]], [0.5], m_max=10)
    assert np.all(np.isneginf(bm.log_P))
    assert not np.any(bm.P)


def test_blowup_map_rejects_bad_arguments(std):
    with pytest.raises(ValueError):
        taylor_blowup_map(std.w_basis, [[0.0, 0.9]], [0.5], rho=0.25, omega=OMEGA)
    with pytest.raises(ValueError):
        log_taylor_coefficients(std.w_basis.directional_derivs, (0, 0.5), 0.5, 0.25, m_max=61)
    with pytest.raises(ValueError):
        log_taylor_coefficients(std.w_basis.directional_derivs, (0, 0.5), 0.5, 0.25, ndirs=4)


def test_direction_sampling_adequate(std):
    z, s = (-0.3, 0.45), 0.8
    memo = {}

    def derivs(zz, ss, h, m):
        # the 8 directions are a subset of the 16
        key = tuple(np.round(h, 12))
        if key not in memo:
            memo[key] = std.w_basis.directional_derivs(zz, ss, h, m)
        return memo[key]

    a = taylor_blowup_map(derivs, [z], [s], m_max=20, ndirs=8).P[0, 0]
    b = taylor_blowup_map(derivs, [z], [s], m_max=20, ndirs=16).P[0, 0]
    assert len(memo) == 16
    assert a <= b <= 1.1 * a


def test_blowup_map_outputs(std, tmp_path):
    pts = np.array([[x, y] for y in (-0.2, 0.2) for x in (-0.4, -0.2, 0.0)])
    bm = taylor_blowup_map(data_basis(std.cauchy_w), pts, [0.6], m_max=8)
    bm.to_csv(tmp_path / "map.csv")
    rows = np.genfromtxt(tmp_path / "map.csv", delimiter=",", names=True)
    np.testing.assert_allclose(rows["P_log"], bm.log_P[:, 0])
    side = bm.to_pgm(tmp_path / "map.pgm", (2, 3))
    raw = (tmp_path / "map.pgm").read_bytes()
    assert raw.startswith(b"P5\n3 2\n255\n") and len(raw) == len(b"P5\n3 2\n255\n") + 6
    assert side["rho"] == 0.25 and side["max_log_P"] >= side["min_log_P"]


def test_make_E_properties():
    z = np.array([-0.5, 0.3])
    E = make_E(G, z, OMEGA)
    # same centre, so containing G means a pointwise larger radius (equal opposite z)
    theta = np.linspace(0, 2 * np.pi, 256, endpoint=False)
    assert np.all(E.radius(theta) >= G.radius(theta) - 1e-9)
    assert shape_inclusion(E, OMEGA)
    assert not contains(E, z)
    gap = np.hypot(*(z - G.center)) - 0.35
    dist = np.min(np.hypot(*(discretize(E, 512).nodes - z).T))
    assert dist >= 0.2 * gap
    with pytest.raises(ValueError):
        make_E(G, (0.3, 0.1), OMEGA)


def test_probe_functional_zero_without_cavity():
    c = _zero_cauchy(TimeGrid(1.0, 8), 32)
    zero = MFSBasis(np.array([[2.0, 0.0]]), TimeGrid(1.0, 8).edges, np.zeros((1, 8)))
    spec = ProbeSpec((-0.5, 0.3), 0.6, (1.0, 0.0), 0, N=1.0)
    val = probe_functional(spec, c, G, OMEGA, w_basis=zero)
    assert val.synthetic == 0.0 and val.data_side == 0.0


@pytest.mark.parametrize("m", [0, 1])
def test_probe_functional_direction_symmetry(std, K_boundary, m):
    z, s = (-0.5, 0.3), 0.6
    vals = []
    for h in ((0.6, 0.8), (-0.6, -0.8)):
        spec = ProbeSpec(z, s, h, m, N=probe_norm_N(z, s, h, m, G, OMEGA))
        vals.append(probe_functional(spec, std.cauchy_w, G, OMEGA, std.w_basis,
                                     K_boundary=K_boundary))
    assert vals[0].synthetic == pytest.approx(vals[1].synthetic, rel=1e-10)
    assert vals[0].data_side == pytest.approx(vals[1].data_side, rel=1e-8)


def test_probe_functional_causality(std):
    z, h = (-0.5, 0.3), (1.0, 0.0)
    late = probe_functional(ProbeSpec(z, 0.6, h, 0), std.cauchy_w, G, OMEGA, std.w_basis,
                            data_side=False).synthetic
    early = probe_functional(ProbeSpec(z, 0.01, h, 0), std.cauchy_w, G, OMEGA, std.w_basis,
                             data_side=False).synthetic
    assert early < 1e-3 * late
