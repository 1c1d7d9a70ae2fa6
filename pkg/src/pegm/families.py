"""Pairwise exponential-family graphical models.

Three families are supported:

``ising``
    Binary nodes, ``T_j(x) = x``, no base measure, any symmetric parameter.
``pgm``
    Poisson graphical model: count nodes, ``T_j(x) = x``, base measure
    ``-log x!``, off-diagonal parameters must be nonpositive.
``gaussian``
    Zero-mean Gaussian with precision ``theta``; only used as an oracle
    because its normalizing constant is known in closed form.

Conventions
-----------
The pairwise sum runs over ordered pairs, so the unnormalized log density is
``sum_j theta_jj T_j(x_j) + 2 sum_{j<k} theta_jk x_j x_k + sum_j C(x_j)``, i.e.
the Frobenius inner product of ``theta`` with :func:`suff_stats`.  Gradients
with respect to an off-diagonal parameter treat ``theta_jk`` and ``theta_kj``
as one tied coordinate and therefore carry a factor 2 (see
:func:`grad_log_q`).  The Gaussian oracle uses ``-1/2`` times the same inner
product.
"""

from enum import Enum

import numpy as np
from scipy.special import gammaln

from .errors import ConstraintViolation, DomainError

__all__ = [
    "Family",
    "as_family",
    "as_theta",
    "diag_part",
    "offdiag",
    "validate_data",
    "log_base_measure",
    "log_q",
    "suff_stats",
    "grad_log_q",
    "untie",
    "node_conditional_natural_param",
    "project",
    "is_feasible",
    "variance_condition",
    "check_feasible",
    "EPS_PD",
]

#: eigenvalue floor used when projecting onto positive definite matrices
EPS_PD = 1e-6


class Family(str, Enum):
    ISING = "ising"
    PGM = "pgm"
    GAUSSIAN = "gaussian"

    @property
    def sample_space(self):
        return {"ising": "{0,1}", "pgm": "nonnegative integers",
                "gaussian": "reals"}[self.value]


def as_family(family):
    """Coerce a string such as ``"ising"`` or ``"PoissonGM"`` to :class:`Family`."""
    if isinstance(family, Family):
        return family
    key = str(family).strip().lower()
    aliases = {"poisson": "pgm", "poissongm": "pgm", "ggm": "gaussian",
               "gaussianoracle": "gaussian"}
    try:
        return Family(aliases.get(key, key))
    except ValueError:
        raise ValueError(f"unknown family {family!r}") from None


def as_theta(values, family=None):
    """Validate a parameter matrix and return it as a float array.

    The matrix must be square, finite and exactly symmetric.  When ``family``
    is given, feasibility is checked as well.
    """
    theta = np.array(values, dtype=float)
    if theta.ndim == 0:
        theta = theta.reshape(1, 1)
    if theta.ndim != 2 or theta.shape[0] != theta.shape[1] or theta.shape[0] < 1:
        raise ValueError(f"theta must be a nonempty square matrix, got shape {theta.shape}")
    if not np.all(np.isfinite(theta)):
        raise ValueError("theta has non-finite entries")
    if not np.array_equal(theta, theta.T):
        raise ValueError("theta must be exactly symmetric")
    if family is not None:
        check_feasible(family, theta)
    return theta


def diag_part(theta):
    """The independence-model parameter: ``theta`` with off-diagonals zeroed."""
    theta = np.asarray(theta, dtype=float)
    out = np.zeros_like(theta)
    idx = np.arange(theta.shape[-1])
    out[..., idx, idx] = theta[..., idx, idx]
    return out


def offdiag(theta):
    """``theta - diag(theta)``."""
    theta = np.asarray(theta, dtype=float)
    return theta - diag_part(theta)


def validate_data(family, x):
    """Return ``x`` as an array after checking it lies in the sample space."""
    family = as_family(family)
    arr = np.asarray(x)
    if family is Family.GAUSSIAN:
        arr = arr.astype(float)
        if not np.all(np.isfinite(arr)):
            raise DomainError("Gaussian observations must be finite")
        return arr
    arr = arr.astype(float)
    if family is Family.ISING:
        if not np.all((arr == 0) | (arr == 1)):
            raise DomainError("Ising observations must be 0 or 1")
    else:
        if not np.all((arr >= 0) & (arr == np.floor(arr)) & np.isfinite(arr)):
            raise DomainError("PGM observations must be nonnegative integers")
    return arr


def log_base_measure(family, x):
    """Sum over nodes of the base measure ``C(x_j)`` (row-wise for 2-D input)."""
    family = as_family(family)
    x = np.asarray(x, dtype=float)
    if family is Family.PGM:
        return -gammaln(x + 1.0).sum(axis=-1)
    return np.zeros(x.shape[:-1])


def _node_stat(family, x):
    return x * x if family is Family.GAUSSIAN else x


def _pair_sum(theta, x):
    """``sum_{j != k} theta_jk x_j x_k`` for each row of ``x``."""
    off = offdiag(theta)
    return np.einsum("...j,jk,...k->...", x, off, x)


def log_q(family, theta, x, check=True):
    """Unnormalized log density ``log q_theta(x)``.

    ``x`` may be a single ``p``-vector (returns a float) or an ``(n, p)`` array
    (returns an ``(n,)`` array).
    """
    family = as_family(family)
    theta = np.asarray(theta, dtype=float)
    if check:
        check_feasible(family, theta)
        x = validate_data(family, x)
    else:
        x = np.asarray(x, dtype=float)
    if x.shape[-1] != theta.shape[0]:
        raise ValueError(f"x has {x.shape[-1]} columns but theta is {theta.shape}")
    inner = _node_stat(family, x) @ np.diag(theta) + _pair_sum(theta, x)
    if family is Family.GAUSSIAN:
        out = -0.5 * inner
    else:
        out = inner + log_base_measure(family, x)
    return float(out) if np.ndim(out) == 0 else out


def suff_stats(family, x):
    """Symmetric sufficient-statistic matrix: ``T_j`` on the diagonal, ``x_j x_k`` off it.

    Works row-wise: an ``(n, p)`` input gives an ``(n, p, p)`` output.
    """
    family = as_family(family)
    x = validate_data(family, x)
    s = x[..., :, None] * x[..., None, :]
    idx = np.arange(x.shape[-1])
    s[..., idx, idx] = _node_stat(family, x)
    return s


def grad_log_q(family, x):
    """Gradient of ``log q_theta(x)`` in the tied-coordinate convention.

    Off-diagonal entries are ``2 x_j x_k`` (Ising/PGM) because ``theta_jk`` and
    ``theta_kj`` move together; the Gaussian oracle carries the extra ``-1/2``.
    """
    family = as_family(family)
    s = suff_stats(family, x)
    g = 2.0 * s
    idx = np.arange(s.shape[-1])
    g[..., idx, idx] = s[..., idx, idx]
    if family is Family.GAUSSIAN:
        g *= -0.5
    return g


def untie(grad):
    """Convert a tied-coordinate gradient to the per-entry matrix derivative.

    Halves the off-diagonal entries; the diagonal is unchanged.
    """
    grad = np.array(grad, dtype=float)
    d = diag_part(grad)
    return 0.5 * (grad - d) + d


def node_conditional_natural_param(family, theta, x, j):
    """Natural parameter of ``X_j | X_{-j}``.

    Ising/PGM: ``theta_jj + 2 sum_{k != j} theta_jk x_k`` (for the PGM the
    conditional Poisson rate is its exponential).  Gaussian: the coefficient of
    ``x_j`` in the conditional exponent, ``-sum_{k != j} theta_jk x_k``; the
    conditional precision is ``theta_jj``.
    """
    family = as_family(family)
    theta = np.asarray(theta, dtype=float)
    x = validate_data(family, x)
    row = theta[j].copy()
    row[j] = 0.0
    lin = x @ row
    if family is Family.GAUSSIAN:
        return -lin
    return theta[j, j] + 2.0 * lin


def is_feasible(family, theta):
    """Whether ``theta`` lies in the family's parameter space."""
    family = as_family(family)
    theta = np.asarray(theta, dtype=float)
    if not np.all(np.isfinite(theta)) or not np.array_equal(theta, theta.T):
        return False
    if family is Family.ISING:
        return True
    if family is Family.PGM:
        return bool(np.all(offdiag(theta) <= 0.0))
    try:
        np.linalg.cholesky(theta)
    except np.linalg.LinAlgError:
        return False
    return True


def check_feasible(family, theta):
    if not is_feasible(family, theta):
        raise ConstraintViolation(
            f"theta is not in the {as_family(family).value} parameter space")


def project(family, theta):
    """Euclidean projection onto the parameter space (identity for Ising).

    PGM: positive off-diagonal entries are set to zero.  Gaussian: negative or
    tiny eigenvalues are raised to :data:`EPS_PD`; feasible inputs are returned
    unchanged so the map is idempotent.
    """
    family = as_family(family)
    theta = np.array(theta, dtype=float)
    if family is Family.ISING:
        return theta
    if family is Family.PGM:
        d = np.diagonal(theta, axis1=-2, axis2=-1).copy()
        out = np.minimum(theta, 0.0)
        idx = np.arange(theta.shape[-1])
        out[..., idx, idx] = d
        return out
    if theta.ndim > 2:
        return np.array([project(family, t) for t in theta])
    if is_feasible(family, theta):
        return theta
    vals, vecs = np.linalg.eigh(theta)
    out = (vecs * np.maximum(vals, EPS_PD)) @ vecs.T
    return 0.5 * (out + out.T)


def variance_condition(family, theta, delta=0.0):
    """Check that ``2(1+delta) u + phi`` is feasible, ``u`` the off-diagonal part.

    With ``delta = 0`` this is the finite-variance condition for the
    normalizing-constant estimate; ``delta > 0`` is needed for its gradient.
    """
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    theta = np.asarray(theta, dtype=float)
    return is_feasible(family, 2.0 * (1.0 + delta) * offdiag(theta) + diag_part(theta))
