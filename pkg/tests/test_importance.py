import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import brute_log_z_ising, random_symmetric
from pegm.errors import ContractError, DegeneracyError
from pegm.exact import grad_log_z_exact, log_z_exact
from pegm.families import diag_part, log_q
from pegm.importance import (estimate, estimate_grad_log_z, estimate_z_ratio, gibbs_grad_log_z,
                             log_weights, log_z_hat, recommended_N,
                             self_normalized_expectation)
from pegm.samplers import SampleBatch, sample_independence


def test_log_weights_equal_log_q_difference(rng):
    theta = random_symmetric(rng, 4, 0.5, "neg")
    rows = rng.poisson(1.0, (6, 4)).astype(float)
    want = log_q("pgm", theta, rows) - log_q("pgm", diag_part(theta), rows)
    assert np.allclose(log_weights("pgm", theta, rows), want)


@given(st.integers(0, 2**31 - 1))
def test_pgm_weights_are_at_most_one(seed):
    r = np.random.default_rng(seed)
    theta = random_symmetric(r, 4, 1.0, "neg")
    rows = r.poisson(2.0, (20, 4)).astype(float)
    assert np.all(log_weights("pgm", theta, rows) <= 1e-12)


def test_diagonal_theta_gives_unit_ratio():
    theta = np.diag([0.2, -0.4, 0.1])
    b = sample_independence("ising", theta, 100, seed=0)
    assert estimate_z_ratio("ising", theta, b) == pytest.approx(1.0, abs=1e-12)


def test_estimator_consistency_against_enumeration(rng):
    theta = random_symmetric(rng, 4, 0.6)
    out = estimate("ising", theta, 200000, seed=1)
    assert out.log_z_hat == pytest.approx(brute_log_z_ising(theta), abs=0.01)
    assert np.allclose(out.grad_log_z, grad_log_z_exact("ising", theta), atol=0.02)
    assert out.grad_z_ratio == pytest.approx(out.grad_log_z * out.z_ratio)


def test_z_ratio_is_unbiased_over_seeds(rng):
    theta = random_symmetric(rng, 3, 0.8)
    truth = np.exp(log_z_exact("ising", theta) - log_z_exact("ising", diag_part(theta)))
    vals = [estimate("ising", theta, 200, seed=s).z_ratio for s in range(400)]
    se = np.std(vals) / np.sqrt(len(vals))
    assert abs(np.mean(vals) - truth) < 4 * se


def test_gaussian_gradient_is_minus_half_covariance():
    theta = np.array([[2.0, 0.4], [0.4, 1.5]])
    out = estimate("gaussian", theta, 400000, seed=2)
    cov = np.linalg.inv(theta)
    want = -0.5 * cov
    want[0, 1] = want[1, 0] = -cov[0, 1]
    assert np.allclose(out.grad_log_z, want, atol=0.01)
    assert out.log_z_hat == pytest.approx(log_z_exact("gaussian", theta), abs=0.01)


def test_contract_checks():
    theta = np.array([[0.0, 0.5], [0.5, 0.0]])
    b = sample_independence("ising", np.diag([0.1, 0.0]), 10, seed=0)
    with pytest.raises(ContractError):
        estimate_grad_log_z("ising", theta, b)
    with pytest.raises(ContractError):
        estimate_grad_log_z("pgm", theta, sample_independence("ising", theta, 10, seed=0))


def test_variance_warning_and_degeneracy():
    theta = np.array([[1.0, 0.9], [0.9, 1.0]])
    b = sample_independence("gaussian", theta, 50, seed=0)
    with pytest.warns(RuntimeWarning):
        estimate_grad_log_z("gaussian", theta, b)
    theta = np.array([[0.0, -500.0], [-500.0, 0.0]])
    rows = np.ones((5, 2))
    b = SampleBatch(rows=rows, phi=diag_part(theta), family="pgm", seed=None)
    with pytest.raises(DegeneracyError):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            estimate_grad_log_z("pgm", theta, b)


def test_seed_determinism(rng):
    theta = random_symmetric(rng, 3, 0.5)
    a, b = estimate("ising", theta, 500, seed=4), estimate("ising", theta, 500, seed=4)
    assert a.z_ratio == b.z_ratio and np.array_equal(a.grad_log_z, b.grad_log_z)
    assert log_z_hat("ising", theta, 500, seed=4) == pytest.approx(
        estimate("ising", theta, 500, seed=4).log_z_hat)


def test_self_normalized_expectation_matches_enumeration(rng):
    theta = random_symmetric(rng, 3, 0.8)
    b = sample_independence("ising", theta, 200000, seed=3)
    g = grad_log_z_exact("ising", theta)
    assert self_normalized_expectation("ising", theta, 1, b) == pytest.approx(g[1, 1], abs=0.01)
    assert self_normalized_expectation("ising", theta, (0, 2), b) == pytest.approx(
        g[0, 2] / 2, abs=0.01)


def test_gibbs_average_and_recommended_n():
    x = np.array([[1.0, 1.0], [0.0, 1.0]])
    g = gibbs_grad_log_z("ising", None, x)
    assert np.allclose(g, [[0.5, 1.0], [1.0, 1.0]])
    assert recommended_N(7, 100) == 700
