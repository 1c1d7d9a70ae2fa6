import numpy as np
import pytest
from scipy.optimize import minimize
from scipy.special import expit

from pegm._rng import make_rng
from pegm.errors import ConfigurationError, DivergenceError
from pegm.exact import ising_exact_sample
from pegm.pseudo import (default_mple_grid, mple_cross_validate, mple_fit,
                         mple_stability_select, node_kkt_violation, nodewise_fit,
                         nodewise_fit_many, nodewise_fit_path)

THETA = np.array([[0.3, -0.8, 0.4, 0.0],
                  [-0.8, -0.2, 0.0, 0.5],
                  [0.4, 0.0, 0.1, 0.0],
                  [0.0, 0.5, 0.0, -0.4]])


@pytest.fixture(scope="module")
def data():
    return ising_exact_sample(THETA, 3000, make_rng(21))


def _logistic_oracle(X, y):
    Z = np.column_stack([np.ones(len(y)), X])

    def nll(b):
        eta = Z @ b
        return np.mean(np.logaddexp(0, eta) - y * eta)

    def grad(b):
        return Z.T @ (expit(Z @ b) - y) / len(y)

    return minimize(nll, np.zeros(Z.shape[1]), jac=grad, method="BFGS",
                    options={"gtol": 1e-10}).x


def test_unpenalized_nodes_match_independent_logistic_regression(data):
    fit = nodewise_fit("ising", data)
    for j in range(4):
        others = [k for k in range(4) if k != j]
        b = _logistic_oracle(data[:, others], data[:, j])
        assert fit.intercepts[j] == pytest.approx(b[0], abs=1e-5)
        assert np.allclose(fit.slopes[j, others], b[1:], atol=1e-5)


def test_mple_is_consistent(data):
    theta = mple_fit("ising", data)
    assert np.max(np.abs(theta - THETA)) < 0.25


def test_symmetrization_halves_slopes(data):
    fit = nodewise_fit("ising", data)
    theta = fit.theta()
    assert theta[0, 1] == pytest.approx(0.25 * (fit.slopes[0, 1] + fit.slopes[1, 0]))
    assert np.allclose(theta, theta.T)


def test_penalized_kkt_checked_independently(data):
    lam = 0.02
    fit = nodewise_fit("ising", data, lam)
    n = data.shape[0]
    for j in range(4):
        others = [k for k in range(4) if k != j]
        Z = np.column_stack([np.ones(n), data[:, others]])
        b = np.r_[fit.intercepts[j], fit.slopes[j, others]]
        g = Z.T @ (expit(Z @ b) - data[:, j]) / n
        assert abs(g[0]) < 1e-6
        for gd, bd in zip(g[1:], b[1:]):
            if bd == 0:
                assert abs(gd) <= lam + 1e-6
            else:
                assert gd == pytest.approx(-lam * np.sign(bd), abs=1e-6)
    assert node_kkt_violation("ising", data, fit) < 1e-6


def test_pgm_slopes_nonpositive_and_kkt():
    x = make_rng(2).poisson(1.5, (400, 3)).astype(float)
    fit = nodewise_fit("pgm", x, 0.01)
    assert np.all(fit.slopes <= 0)
    assert node_kkt_violation("pgm", x, fit) < 1e-6


def test_path_sparsity_and_batched_equivalence(data):
    grid = np.array([0.0, 0.01, 0.05, 0.3])
    path = nodewise_fit_path("ising", data, grid)
    nnz = [np.count_nonzero(f.slopes) for f in path]
    assert nnz == sorted(nnz, reverse=True) and nnz[-1] == 0
    single = nodewise_fit("ising", data, 0.05)
    assert np.allclose(single.slopes, path[2].slopes, atol=1e-6)
    many = nodewise_fit_many("ising", [data, data[::-1]], 0.05)
    assert np.allclose(many[0].slopes, path[2].slopes, atol=1e-6)
    assert np.allclose(many[1].slopes, path[2].slopes, atol=1e-6)
    with pytest.raises(ConfigurationError):
        nodewise_fit_many("ising", [data, data[:10]], 0.05)


def test_separation_raises_or_is_capped():
    x = np.array([[0, 0], [1, 1], [0, 0], [1, 1], [1, 0], [0, 0]], dtype=float)
    with pytest.raises(DivergenceError):
        nodewise_fit("ising", x)
    fit = nodewise_fit("ising", x, strict=False, max_iter=500)
    assert np.all(np.isfinite(fit.slopes)) and not fit.converged.all()


def test_ising_grid_reaches_empty_graph(data):
    grid = default_mple_grid("ising", data)
    assert len(grid) == 20
    top = nodewise_fit("ising", data, grid[-1])
    assert np.count_nonzero(top.slopes) == 0
    pgm_grid = default_mple_grid("pgm", np.ones((100, 5)))
    assert pgm_grid[0] == pytest.approx(5 * np.sqrt(np.log(5) / 100))


def test_cross_validation(data):
    lam, theta = mple_cross_validate("ising", data, [0.01, 0.02], K=3)
    assert lam in (0.01, 0.02) and theta.shape == (4, 4)
    lam, _ = mple_cross_validate("ising", data, [0.03], K=3)
    assert lam == 0.03
    with pytest.raises(ConfigurationError):
        mple_cross_validate("ising", data[:2], [0.01], K=5)


def test_stability_selection_recovers_strong_edges(data):
    est = mple_stability_select("ising", data, pi_thr=0.5)
    assert (0, 1) in est.edges and (1, 3) in est.edges
    with pytest.raises(ConfigurationError):
        mple_stability_select("ising", data, pi_thr=0.0)


def test_gaussian_is_rejected():
    with pytest.raises(ConfigurationError):
        nodewise_fit("gaussian", np.zeros((4, 2)))
