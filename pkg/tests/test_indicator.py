import json

import numpy as np
import pytest

from nrtheat.indicator import (DEFAULT_ALPHAS, Policy, RegPath, calibrate_theta, classify,
                               duality_oracle, morozov_truncate, path_features, probe_form,
                               spectrum, sup_form, tikhonov_path)
from nrtheat.operators import DenseOperator, NormSurrogate


def _operator(n=40, sigmas=None, seed=0):
    """Operator whose weighted matrix has prescribed singular values.

    Returns the operator and the singular triplets of ``W_t^1/2 A W_s^-1/2``.
    """
    rng = np.random.default_rng(seed)
    sigmas = np.logspace(0, -8, n) if sigmas is None else np.asarray(sigmas)
    n = len(sigmas)
    U, _ = np.linalg.qr(rng.normal(size=(n, n)))
    V, _ = np.linalg.qr(rng.normal(size=(n, n)))
    ws = rng.uniform(0.5, 2.0, n)
    wt = rng.uniform(0.5, 2.0, n)
    scaled = U @ np.diag(sigmas) @ V.T
    entries = scaled / np.sqrt(wt)[:, None] * np.sqrt(ws)[None, :]
    return DenseOperator(entries, NormSurrogate(ws), NormSurrogate(wt)), U, sigmas, V


def _solvable(seed=0):
    R, U, s, V = _operator(seed=seed)
    # smooth solution: only the three leading right singular directions
    phi_hat = V[:, :3] @ np.array([1.0, -0.5, 0.25])
    phi = phi_hat / np.sqrt(R.source.weights)
    return R, R @ phi, np.linalg.norm(phi_hat)


def _unsolvable(seed=0):
    R, U, s, V = _operator(seed=seed)
    b_hat = U @ np.ones(len(s))
    return R, b_hat / np.sqrt(R.target.weights)


def test_zero_rhs():
    R, *_ = _operator()
    path = tikhonov_path(R, np.zeros(R.shape[0]))
    assert not np.any(path.solution_norms)
    assert classify(path, theta=1.0) == "positive"
    assert sup_form(R, np.zeros(R.shape[0])).value == 0.0


def test_monotonicity():
    for R, b in (_solvable()[:2], _unsolvable()):
        path = tikhonov_path(R, b)
        assert np.all(np.diff(path.solution_norms) >= -1e-12 * path.solution_norms.max())
        assert np.all(np.diff(path.residuals) <= 1e-12 * path.residuals.max())


def test_solvable_plateau():
    R, b, true_norm = _solvable()
    path = tikhonov_path(R, b)
    assert path.solution_norms[-1] == pytest.approx(true_norm, rel=0.1)
    assert path.features["slope"] > Policy().slope_positive


def test_unsolvable_growth():
    R, b = _unsolvable()
    path = tikhonov_path(R, b)
    slope = np.polyfit(np.log(path.alphas), np.log(path.solution_norms), 1)[0]
    assert -0.6 < slope < -0.4


def test_svd_and_normal_equations_agree():
    R, b, _ = _solvable(seed=3)
    a = tikhonov_path(R, b, method="svd")
    c = tikhonov_path(R, b, method="solve")
    np.testing.assert_allclose(a.solution_norms, c.solution_norms, rtol=1e-8)
    np.testing.assert_allclose(a.residuals, c.residuals, rtol=1e-6)
    with pytest.raises(ValueError):
        tikhonov_path(R, b, method="lsqr")
    with pytest.raises(ValueError):
        tikhonov_path(R, b[:-1])


def test_relative_alphas_are_scale_free():
    R, b, _ = _solvable()
    big = DenseOperator(7.0 * R.entries, R.source, R.target)
    p1, p2 = tikhonov_path(R, b), tikhonov_path(big, 7.0 * b)
    np.testing.assert_allclose(p1.solution_norms, p2.solution_norms, rtol=1e-10)


def test_sup_form_top_direction():
    R, U, s, V = _operator(sigmas=np.logspace(0, -3, 20))
    b = s[0] * U[:, 0] / np.sqrt(R.target.weights)
    assert sup_form(R, b).value == pytest.approx(1.0, rel=1e-12)


def test_sup_form_unresolved_flag():
    R, b = _unsolvable()
    out = sup_form(R, b, cutoff=1e-3)
    assert out.infinite and out.unresolved_fraction > 0.5
    with pytest.raises(ValueError):
        sup_form(R, b, cutoff=1.5)


def test_sup_form_matches_tikhonov_limit():
    for seed in range(5):
        R, b, true_norm = _solvable(seed)
        tiny = np.array([1e-10, 1e-12, 1e-14])
        limit = tikhonov_path(R, b, alphas=tiny).solution_norms[-1]
        value = sup_form(R, b).value
        assert value == pytest.approx(limit, rel=1e-6)
        assert value == pytest.approx(true_norm, rel=1e-6)


@pytest.mark.parametrize("n", [10, 25, 40])
def test_duality_oracle_agrees(n, rng):
    R, U, s, V = _operator(n=n, sigmas=np.logspace(0, -2, n), seed=n)
    b = U[:, :5] @ rng.normal(size=5) / np.sqrt(R.target.weights)
    A, bh = R.scaled(), np.sqrt(R.target.weights) * b
    assert duality_oracle(A, bh) == pytest.approx(sup_form(R, b).value, rel=1e-6)
    assert duality_oracle(A, np.zeros(n)) == 0.0


def test_probe_form_below_sup(rng):
    R, b, _ = _solvable()
    K = DenseOperator(rng.normal(size=(R.shape[0], 30)), NormSurrogate(np.ones(30)), R.target)
    vals = probe_form(K, R, b, rng.normal(size=(50, 30)))
    assert np.all(np.diff(vals) >= 0)
    assert vals[-1] <= sup_form(R, b).value * (1 + 1e-12)
    assert not np.any(probe_form(K, R, b, np.zeros((4, 30))))


def test_scale_equivariance():
    R, b = _unsolvable()
    p1, p2 = tikhonov_path(R, b), tikhonov_path(R, -3.0 * b)
    np.testing.assert_allclose(p2.solution_norms, 3.0 * p1.solution_norms, rtol=1e-12)
    np.testing.assert_allclose(p1.scaled_by(-3.0).solution_norms, p2.solution_norms, rtol=1e-12)
    assert sup_form(R, -3.0 * b).value == pytest.approx(3.0 * sup_form(R, b).value, rel=1e-12)
    Rs, bs, _ = _solvable()
    ps = tikhonov_path(Rs, bs)
    for path in (ps, p1):
        theta = 2.0 * ps.solution_norms[-1]
        assert classify(path, theta) == classify(path.scaled_by(5.0), 5.0 * theta)


def test_classify_synthetic_cases():
    Rs, bs, _ = _solvable()
    Ru, bu = _unsolvable()
    ps, pu = tikhonov_path(Rs, bs), tikhonov_path(Ru, bu)
    theta = calibrate_theta([ps, pu])
    assert theta == pytest.approx(3.0 * ps.solution_norms[-1])
    assert classify(ps, theta) == "positive"
    assert classify(pu, theta) == "negative"
    with pytest.raises(ValueError):
        classify(ps.head(5), theta)


def test_classify_uncertain_band():
    alphas = DEFAULT_ALPHAS
    # flat tail above theta but below ten theta
    path = RegPath(alphas, np.full(len(alphas), 5.0), np.ones(len(alphas)), [1.0])
    assert classify(path, theta=1.0) == "uncertain"
    assert classify(path, theta=0.4) == "negative"


def test_morozov_truncation():
    alphas = DEFAULT_ALPHAS
    resid = np.linspace(1.0, 0.01, len(alphas))
    path = RegPath(alphas, np.linspace(1, 2, len(alphas)), resid, [1.0])
    cut = morozov_truncate(path, level=0.5)
    assert len(cut) == int(np.nonzero(resid <= 0.5)[0][0]) + 1
    assert len(morozov_truncate(path, level=2.0)) == 4
    assert morozov_truncate(path, level=0.0) is path
    assert len(morozov_truncate(path, level=1e-6)) == len(alphas)


def test_path_features_slope():
    a = 2.0 ** -np.arange(8)
    f = path_features(a, a ** -0.5)
    assert f["slope"] == pytest.approx(-0.5, abs=1e-12)
    assert f["plateau"] == pytest.approx(a[-1] ** -0.5)


def test_regpath_rejects_bad_alphas():
    with pytest.raises(ValueError):
        RegPath([1.0, 1.0], [1, 1], [1, 1], [1.0])
    with pytest.raises(ValueError):
        RegPath([1.0, -1.0], [1, 1], [1, 1], [1.0])


def test_regpath_serialization(tmp_path):
    R, b, _ = _solvable()
    path = tikhonov_path(R, b)
    path.to_json(tmp_path / "p.json")
    back = RegPath.from_dict(json.loads((tmp_path / "p.json").read_text()))
    np.testing.assert_array_equal(back.solution_norms, path.solution_norms)
    np.testing.assert_array_equal(back.alphas, path.alphas)
    path.to_csv(tmp_path / "p.csv")
    rows = np.loadtxt(tmp_path / "p.csv", delimiter=",", skiprows=1)
    np.testing.assert_array_equal(rows[:, 1], path.solution_norms)


def test_spectrum_of_weighted_operator():
    R, U, s, V = _operator(n=12, sigmas=np.logspace(0, -2, 12))
    np.testing.assert_allclose(spectrum(R).s, s, rtol=1e-10)
