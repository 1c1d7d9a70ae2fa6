"""Sampling from the independence model, Gibbs sampling and accept-reject.

The independence model ``p_phi`` with ``phi = diag(theta)`` is a product of
univariate laws (Bernoulli, Poisson or Normal), so it can be sampled exactly
in batch and its normalizing constant is available in closed form.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import expit

from ._rng import make_rng
from .errors import DomainError, OverflowDiagnostic, PartialSampleError
from .families import Family, as_family, as_theta, check_feasible, diag_part, offdiag

__all__ = [
    "SampleBatch",
    "sample_independence",
    "draw_independent",
    "log_z_phi",
    "gibbs_sample",
    "accept_reject_sample",
]


@dataclass(frozen=True)
class SampleBatch:
    """``N`` i.i.d. rows from the independence model ``p_phi``."""

    rows: np.ndarray
    phi: np.ndarray
    family: Family
    seed: Optional[int] = None

    @property
    def N(self):
        return self.rows.shape[0]

    @property
    def p(self):
        return self.rows.shape[1]


# log of numpy's Poisson rate ceiling (about 9.2e18)
MAX_LOG_RATE = 43.0


def _diagonal(theta):
    return np.diagonal(np.asarray(theta, dtype=float), axis1=-2, axis2=-1)


def draw_independent(family, diag, N, rng):
    """Draw ``N`` rows from the product law with natural parameters ``diag``.

    ``diag`` may carry leading batch dimensions: shape ``(..., p)`` gives rows
    of shape ``(..., N, p)``.
    """
    family = as_family(family)
    diag = np.asarray(diag, dtype=float)
    shape = diag.shape[:-1] + (N, diag.shape[-1])
    d = diag[..., None, :]
    if family is Family.ISING:
        return (rng.random(shape) < expit(d)).astype(float)
    if family is Family.PGM:
        return rng.poisson(np.broadcast_to(np.exp(d), shape)).astype(float)
    if np.any(diag <= 0):
        raise DomainError("Gaussian independence model needs positive diagonal precisions")
    return rng.standard_normal(shape) / np.sqrt(d)


def sample_independence(family, theta, N, seed=None):
    """Draw a :class:`SampleBatch` of ``N`` rows from ``p_phi``, ``phi = diag(theta)``.

    Column ``j`` is Bernoulli(sigmoid(theta_jj)) for the Ising model,
    Poisson(exp(theta_jj)) for the PGM and Normal(0, 1/theta_jj) for the
    Gaussian oracle.
    """
    family = as_family(family)
    theta = as_theta(theta, family)
    if N < 1:
        raise ValueError("N must be at least 1")
    rng = make_rng(seed)
    rows = draw_independent(family, np.diag(theta), int(N), rng)
    return SampleBatch(rows=rows, phi=diag_part(theta), family=family,
                       seed=seed if isinstance(seed, (int, np.integer)) else None)


def log_z_phi(family, theta):
    """Closed-form ``log z(phi)`` of the independence model (uses the diagonal only).

    Works on stacks of matrices, returning one value per matrix.
    """
    family = as_family(family)
    d = _diagonal(theta)
    if family is Family.ISING:
        out = np.logaddexp(0.0, d).sum(axis=-1)
    elif family is Family.PGM:
        out = np.exp(d).sum(axis=-1)
    else:
        if np.any(d <= 0):
            raise DomainError("Gaussian log z(phi) needs positive diagonal precisions")
        p = d.shape[-1]
        out = 0.5 * p * np.log(2 * np.pi) - 0.5 * np.log(d).sum(axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def gibbs_sample(family, theta, n_samples, burn_in=1000, thin=5, seed=None,
                 n_chains=1, init=None):
    """Systematic-scan single-site Gibbs sampler targeting ``p_theta``.

    Chains start from an independence-model draw (or ``init``).  After
    ``burn_in`` sweeps every ``thin``-th sweep is kept.  With several chains
    the kept states are interleaved chain by chain and truncated to
    ``n_samples`` rows.

    Raises
    ------
    OverflowDiagnostic
        For the PGM when a conditional log-rate exceeds ``MAX_LOG_RATE``,
        the largest rate numpy's Poisson generator accepts.
    """
    family = as_family(family)
    theta = as_theta(theta, family)
    p = theta.shape[0]
    if n_samples < 1 or thin < 1 or burn_in < 0 or n_chains < 1:
        raise ValueError("need n_samples >= 1, thin >= 1, burn_in >= 0, n_chains >= 1")
    rng = make_rng(seed)
    diag = np.diag(theta).copy()
    off = offdiag(theta)
    if family is Family.PGM and init is None and np.any(diag > MAX_LOG_RATE):
        j = int(np.argmax(diag))
        raise OverflowDiagnostic(
            f"conditional log-rate {diag[j]:.3g} at node {j} overflows", node=j)
    if init is None:
        x = draw_independent(family, diag, n_chains, rng)
    else:
        x = np.array(np.broadcast_to(np.asarray(init, dtype=float), (n_chains, p)))
    per_chain = -(-n_samples // n_chains)
    kept = np.empty((per_chain, n_chains, p))
    if family is Family.GAUSSIAN:
        cond_sd = 1.0 / np.sqrt(diag)
    total = burn_in + per_chain * thin
    count = 0
    for sweep in range(1, total + 1):
        for j in range(p):
            lin = x @ off[j]
            if family is Family.ISING:
                x[:, j] = rng.random(n_chains) < expit(diag[j] + 2.0 * lin)
            elif family is Family.PGM:
                eta = diag[j] + 2.0 * lin
                if np.any(eta > MAX_LOG_RATE):
                    raise OverflowDiagnostic(
                        f"conditional log-rate {eta.max():.3g} at node {j} overflows", node=j)
                x[:, j] = rng.poisson(np.exp(eta))
            else:
                x[:, j] = -lin / diag[j] + cond_sd[j] * rng.standard_normal(n_chains)
        if sweep > burn_in and (sweep - burn_in) % thin == 0:
            kept[count] = x
            count += 1
    return kept.reshape(-1, p)[:n_samples]


def _ar_log_bound(family, theta):
    """``log(M / z(phi))`` for the accept-reject envelope."""
    if family is Family.PGM:
        return 0.0
    p = theta.shape[0]
    off = offdiag(theta)
    top = off[~np.eye(p, dtype=bool)].max() if p > 1 else 0.0
    return p * p * max(0.0, top)


def accept_reject_sample(family, theta, n_samples, max_tries=1_000_000, seed=None,
                         block=4096):
    """Exact i.i.d. samples from ``p_theta`` by accept-reject from ``p_phi``.

    A proposal ``Y ~ p_phi`` is accepted with probability
    ``exp(w(Y)) / (M / z(phi))`` where ``w`` is the log importance weight.
    The envelope is ``M / z(phi) = exp(p^2 max(0, max_jk theta_jk))`` for the
    Ising model and 1 for the PGM.

    Returns
    -------
    rows : ndarray of shape (n_samples, p)
    acceptance_rate : float

    Raises
    ------
    PartialSampleError
        When ``max_tries`` proposals were used up first; carries the accepted
        rows and the empirical acceptance rate.
    """
    family = as_family(family)
    if family is Family.GAUSSIAN:
        raise ValueError("accept-reject needs a bounded weight; not available for the Gaussian oracle")
    theta = as_theta(theta, family)
    check_feasible(family, theta)
    rng = make_rng(seed)
    log_bound = _ar_log_bound(family, theta)
    off = offdiag(theta)
    accepted = []
    n_acc = 0
    tries = 0
    while n_acc < n_samples and tries < max_tries:
        m = min(block, max_tries - tries)
        y = draw_independent(family, np.diag(theta), m, rng)
        log_r = np.einsum("ij,jk,ik->i", y, off, y) - log_bound
        if family is Family.PGM and np.any(log_r > 1e-12):
            raise AssertionError("PGM acceptance ratio exceeded 1; theta infeasible?")
        keep = np.log(rng.random(m)) < log_r
        tries += m
        accepted.append(y[keep])
        n_acc += int(keep.sum())
    rows = np.concatenate(accepted, axis=0) if accepted else np.empty((0, theta.shape[0]))
    rate = n_acc / tries if tries else 0.0
    if n_acc < n_samples:
        raise PartialSampleError(
            f"accepted {n_acc} of {n_samples} rows in {tries} tries", rows, rate)
    return rows[:n_samples], rate
