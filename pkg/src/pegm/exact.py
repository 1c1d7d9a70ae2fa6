"""Exact normalizing constants by enumeration, for small models.

These routines back the "exact plug-in" modes of the optimizers, the Bayesian
sampler and the Boltzmann trainers, and the exact total-variation scorer.
Ising models are enumerated over ``{0,1}^p``; Poisson models over a truncated
count grid; the Gaussian oracle uses its closed form.
"""

import numpy as np
from scipy.special import logsumexp

from .errors import ResourceError
from .families import Family, as_family, grad_log_q, log_q, offdiag

MAX_ENUM_BITS = 24
PGM_COUNT_CAP = 200


def binary_states(p):
    """All ``2**p`` binary vectors as a ``(2**p, p)`` float array (row ``i`` is ``i`` in binary)."""
    if p > MAX_ENUM_BITS:
        raise ResourceError(f"enumeration over 2^{p} states exceeds the cap 2^{MAX_ENUM_BITS}")
    if p == 0:
        return np.zeros((1, 0))
    codes = np.arange(2 ** p, dtype=np.int64)
    shifts = np.arange(p - 1, -1, -1, dtype=np.int64)
    return ((codes[:, None] >> shifts) & 1).astype(float)


def _chunks(p, size=1 << 16):
    total = 2 ** p
    for start in range(0, total, size):
        codes = np.arange(start, min(total, start + size), dtype=np.int64)
        shifts = np.arange(p - 1, -1, -1, dtype=np.int64)
        yield ((codes[:, None] >> shifts) & 1).astype(float)


def _pgm_grid(p, cap):
    if p > 3:
        raise ResourceError("truncated PGM enumeration supports p <= 3")
    axes = [np.arange(cap + 1, dtype=float)] * p
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, p)


def log_z_exact(family, theta, cap=PGM_COUNT_CAP):
    """``log z(theta)`` by enumeration (Ising), truncated enumeration (PGM) or closed form (Gaussian)."""
    family = as_family(family)
    theta = np.asarray(theta, dtype=float)
    p = theta.shape[0]
    if family is Family.GAUSSIAN:
        sign, logdet = np.linalg.slogdet(theta)
        if sign <= 0:
            raise ValueError("Gaussian theta must be positive definite")
        return 0.5 * p * np.log(2 * np.pi) - 0.5 * logdet
    if family is Family.PGM:
        return float(logsumexp(log_q(family, theta, _pgm_grid(p, cap), check=False)))
    if p > MAX_ENUM_BITS:
        raise ResourceError(f"Ising enumeration for p={p} exceeds the cap")
    parts = [logsumexp(log_q(family, theta, xs, check=False)) for xs in _chunks(p)]
    return float(logsumexp(parts))


def ising_log_pmf(theta):
    """Log probabilities of all ``2**p`` states, ordered as :func:`binary_states`."""
    states = binary_states(np.asarray(theta).shape[0])
    lq = log_q(Family.ISING, theta, states, check=False)
    return lq - logsumexp(lq)


def grad_log_z_exact(family, theta, cap=PGM_COUNT_CAP):
    """Exact ``grad log z(theta)`` in the tied convention, i.e. ``E_theta[grad log q]``."""
    family = as_family(family)
    theta = np.asarray(theta, dtype=float)
    p = theta.shape[0]
    if family is Family.GAUSSIAN:
        inv = np.linalg.inv(theta)
        g = -inv
        np.fill_diagonal(g, -0.5 * np.diag(inv))
        return g
    if family is Family.PGM:
        xs = _pgm_grid(p, cap)
        lq = log_q(family, theta, xs, check=False)
        w = np.exp(lq - logsumexp(lq))
        return np.einsum("i,ijk->jk", w, grad_log_q(family, xs))
    log_z = log_z_exact(family, theta)
    acc = np.zeros((p, p))
    for xs in _chunks(p):
        w = np.exp(log_q(family, theta, xs, check=False) - log_z)
        acc += np.einsum("i,ijk->jk", w, grad_log_q(family, xs))
    return acc


def log_z_ratio_exact(family, theta, cap=PGM_COUNT_CAP):
    """``log z(theta) - log z(diag(theta))``."""
    theta = np.asarray(theta, dtype=float)
    phi = theta - offdiag(theta)
    return log_z_exact(family, theta, cap) - log_z_exact(family, phi, cap)


def ising_exact_sample(theta, n, rng):
    """``n`` i.i.d. draws from an Ising model by inverse-CDF over the enumerated pmf."""
    theta = np.asarray(theta, dtype=float)
    p = theta.shape[0]
    probs = np.exp(ising_log_pmf(theta))
    idx = rng.choice(probs.size, size=n, p=probs / probs.sum())
    shifts = np.arange(p - 1, -1, -1, dtype=np.int64)
    return ((idx[:, None] >> shifts) & 1).astype(float)
