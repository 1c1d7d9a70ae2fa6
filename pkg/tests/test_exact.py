import numpy as np
import pytest
from scipy import stats

from conftest import brute_log_z_ising, brute_log_z_pgm, brute_states, random_symmetric
from pegm._rng import make_rng
from pegm.errors import ResourceError
from pegm.exact import (binary_states, grad_log_z_exact, ising_exact_sample, ising_log_pmf,
                        log_z_exact, log_z_ratio_exact)


def test_binary_states_order_matches_itertools():
    assert np.array_equal(binary_states(4), brute_states(4))


def test_ising_log_z_matches_brute_force(rng):
    for _ in range(5):
        theta = random_symmetric(rng, 4, 1.0)
        assert log_z_exact("ising", theta) == pytest.approx(brute_log_z_ising(theta), abs=1e-10)


def test_pgm_log_z_matches_brute_force():
    theta = np.array([[0.2, -0.3], [-0.3, -0.1]])
    assert log_z_exact("pgm", theta, cap=60) == pytest.approx(brute_log_z_pgm(theta), abs=1e-9)


def test_independent_pgm_log_z_is_sum_of_rates():
    theta = np.diag([0.5, -1.0])
    assert log_z_exact("pgm", theta) == pytest.approx(np.exp(0.5) + np.exp(-1.0), abs=1e-10)


def test_gaussian_closed_form():
    theta = np.array([[2.0, 0.3], [0.3, 1.0]])
    want = np.log(2 * np.pi) - 0.5 * np.log(np.linalg.det(theta))
    assert log_z_exact("gaussian", theta) == pytest.approx(want)


def test_exact_gradient_matches_finite_differences(rng):
    theta = random_symmetric(rng, 3, 0.8)
    g = grad_log_z_exact("ising", theta)
    h = 1e-5
    for j in range(3):
        for k in range(j, 3):
            e = np.zeros((3, 3))
            e[j, k] = e[k, j] = h
            fd = (brute_log_z_ising(theta + e) - brute_log_z_ising(theta - e)) / (2 * h)
            assert g[j, k] == pytest.approx(fd, rel=1e-6, abs=1e-9)


def test_ratio_is_zero_for_diagonal():
    assert log_z_ratio_exact("ising", np.diag([0.3, -0.2, 1.0])) == pytest.approx(0.0, abs=1e-12)


def test_exact_sampler_matches_pmf(rng):
    theta = random_symmetric(rng, 3, 1.0)
    x = ising_exact_sample(theta, 20000, make_rng(3))
    codes = x.astype(int) @ np.array([4, 2, 1])
    obs = np.bincount(codes, minlength=8)
    exp = 20000 * np.exp(ising_log_pmf(theta))
    assert stats.chisquare(obs, exp).pvalue > 0.01


def test_enumeration_caps():
    with pytest.raises(ResourceError):
        binary_states(30)
    with pytest.raises(ResourceError):
        log_z_exact("pgm", -np.eye(4) * 0.1)
