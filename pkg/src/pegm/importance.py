"""Importance-sampling estimates of normalizing constants and their gradients.

Draws come from the independence model ``p_phi`` with ``phi = diag(theta)``.
The log importance weight of a draw ``y`` is

    w(y) = log q_theta(y) - log q_phi(y) = 2 sum_{j<k} theta_jk y_j y_k

(times ``-1/2`` for the Gaussian oracle): diagonal and base-measure terms
cancel.  ``mean(exp(w))`` estimates ``z(theta)/z(phi)``; the weighted mean of
``grad log q`` estimates ``grad z(theta)/z(phi)``; their ratio estimates
``grad log z(theta)``.  All reductions go through ``logsumexp`` so that large
negative weights do not underflow.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, softmax

from ._rng import make_rng
from .errors import ContractError, DegeneracyError
from .families import (Family, as_family, diag_part, offdiag,
                       variance_condition)
from .samplers import SampleBatch, draw_independent, log_z_phi

__all__ = [
    "EstimatorOutput",
    "log_weights",
    "estimate_z_ratio",
    "estimate_grad_z_ratio",
    "estimate_grad_log_z",
    "estimate",
    "log_z_hat",
    "gibbs_grad_log_z",
    "self_normalized_expectation",
    "recommended_N",
    "weighted_grad",
    "DEFAULT_DELTA",
]

DEFAULT_DELTA = 0.1
ESS_WARN_FRACTION = 0.01


@dataclass(frozen=True)
class EstimatorOutput:
    z_ratio: float
    grad_z_ratio: np.ndarray
    grad_log_z: np.ndarray
    log_z_hat: float
    N: int
    ess: float
    max_weight_share: float


def log_weights(family, theta, rows):
    """Log importance weights ``log q_theta(y) - log q_phi(y)`` for each row.

    Supports stacked parameters: ``theta`` of shape ``(..., p, p)`` with rows
    of shape ``(..., N, p)``.
    """
    family = as_family(family)
    off = offdiag(theta)
    w = np.sum((rows @ off) * rows, axis=-1)
    if family is Family.GAUSSIAN:
        w = -0.5 * w
    return w


def weighted_grad(family, weights, rows):
    """``sum_i weights_i grad log q(rows_i)`` without materializing per-row matrices."""
    family = as_family(family)
    m = np.swapaxes(rows * weights[..., None], -1, -2) @ rows
    idx = np.arange(rows.shape[-1])
    diag = m[..., idx, idx].copy()
    if family is Family.PGM:
        diag = (weights[..., None, :] @ rows)[..., 0, :]
    g = 2.0 * m
    g[..., idx, idx] = diag
    if family is Family.GAUSSIAN:
        g *= -0.5
    return g


def _check_batch(family, theta, batch, delta):
    if not isinstance(batch, SampleBatch):
        raise ContractError("batch must be a SampleBatch")
    if as_family(batch.family) is not family:
        raise ContractError("batch was drawn for a different family")
    if not np.array_equal(batch.phi, diag_part(theta)):
        raise ContractError("batch.phi does not equal diag(theta)")
    if not variance_condition(family, theta, delta):
        warnings.warn(
            f"variance condition fails at delta={delta}: the estimate may have infinite variance",
            RuntimeWarning, stacklevel=3)


def _core(family, theta, rows):
    w = log_weights(family, theta, rows)
    n = w.shape[-1]
    lse = logsumexp(w)
    log_ratio = lse - math.log(n)
    if not np.isfinite(lse) or log_ratio < -745.0:
        raise DegeneracyError(
            "importance weights underflow; increase N or move theta closer to diag(theta)",
            ess=0.0)
    wt = softmax(w)
    ess = 1.0 / float(np.sum(wt * wt))
    if ess < ESS_WARN_FRACTION * n:
        warnings.warn(f"low effective sample size {ess:.1f} of N={n}", RuntimeWarning,
                      stacklevel=3)
    return log_ratio, wt, ess


def estimate_z_ratio(family, theta, batch):
    """Monte Carlo estimate of ``z(theta)/z(phi)``."""
    family = as_family(family)
    theta = np.asarray(theta, dtype=float)
    _check_batch(family, theta, batch, 0.0)
    return math.exp(_core(family, theta, batch.rows)[0])


def estimate_grad_log_z(family, theta, batch, delta=DEFAULT_DELTA):
    """Full estimator output: ``z`` ratio, gradient ratio, ``grad log z`` and diagnostics.

    ``grad_log_z`` converges to ``E_theta[grad log q]``; off-diagonal entries
    therefore estimate ``2 E[x_j x_k]`` (tied coordinates).
    """
    family = as_family(family)
    theta = np.asarray(theta, dtype=float)
    _check_batch(family, theta, batch, delta)
    log_ratio, wt, ess = _core(family, theta, batch.rows)
    z_ratio = math.exp(log_ratio)
    g = weighted_grad(family, wt, batch.rows)
    return EstimatorOutput(
        z_ratio=z_ratio,
        grad_z_ratio=g * z_ratio,
        grad_log_z=g,
        log_z_hat=float(log_z_phi(family, theta) + log_ratio),
        N=batch.N,
        ess=ess,
        max_weight_share=float(wt.max()),
    )


def estimate_grad_z_ratio(family, theta, batch, delta=DEFAULT_DELTA):
    """Monte Carlo estimate of ``grad z(theta)/z(phi)``."""
    return estimate_grad_log_z(family, theta, batch, delta).grad_z_ratio


def estimate(family, theta, N, seed=None):
    """Draw a fresh batch of size ``N`` and return :func:`estimate_grad_log_z`."""
    family = as_family(family)
    theta = np.asarray(theta, dtype=float)
    rng = make_rng(seed)
    rows = draw_independent(family, np.diag(theta), int(N), rng)
    batch = SampleBatch(rows=rows, phi=diag_part(theta), family=family,
                        seed=seed if isinstance(seed, int) else None)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return estimate_grad_log_z(family, theta, batch)


def log_z_hat(family, theta, N, seed=None):
    """``log z(phi)`` plus the log of the estimated ratio, from a fresh batch of size ``N``."""
    family = as_family(family)
    theta = np.asarray(theta, dtype=float)
    rng = make_rng(seed)
    rows = draw_independent(family, np.diag(theta), int(N), rng)
    w = log_weights(family, theta, rows)
    return float(log_z_phi(family, theta) + logsumexp(w) - math.log(int(N)))


def gibbs_grad_log_z(family, theta, samples):
    """Plain average of ``grad log q`` over draws assumed to come from ``p_theta``."""
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    wt = np.full(samples.shape[0], 1.0 / samples.shape[0])
    return weighted_grad(family, wt, samples)


def self_normalized_expectation(family, theta_cond, g, batch):
    """Self-normalized estimate of ``E[g(h)]`` under the model ``theta_cond``.

    ``batch`` must be drawn from ``diag(theta_cond)``.  ``g`` is either a
    callable mapping the ``(N, m)`` rows to ``N`` values, an int ``k``
    (selects ``h_k``) or a pair ``(k, k2)`` (selects ``h_k h_k2``).
    """
    family = as_family(family)
    theta_cond = np.asarray(theta_cond, dtype=float)
    _check_batch(family, theta_cond, batch, 0.0)
    rows = batch.rows
    if callable(g):
        vals = np.asarray(g(rows), dtype=float)
    elif isinstance(g, (tuple, list)):
        k, k2 = g
        vals = rows[:, k] * rows[:, k2]
    else:
        vals = rows[:, int(g)]
    w = log_weights(family, theta_cond, rows)
    if not np.any(np.isfinite(w)):
        raise DegeneracyError("all importance weights are zero", ess=0.0)
    wt = softmax(w)
    return float(np.dot(wt, vals))


def recommended_N(p, C=100):
    """Importance sample size ``ceil(C * p)``, linear in the dimension."""
    if p < 1:
        raise ValueError("p must be at least 1")
    return int(math.ceil(C * p))
