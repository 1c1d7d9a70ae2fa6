"""Pseudo-likelihood baselines: node-wise penalized GLMs, symmetrized.

Node ``j`` is regressed on the other nodes with natural parameter
``a_j + sum_k b_jk x_k`` (logistic for the Ising model, Poisson log-link for
the PGM with ``b_jk <= 0``).  Matching the node conditional of the joint
model, ``a_j = theta_jj`` and ``b_jk = 2 theta_jk``, so the slope matrix is
halved before symmetrizing by averaging.

Penalties here are on the per-observation scale: node ``j`` minimizes
``mean_i nll_ij + lam * sum_k |b_jk|``.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from ._rng import make_rng
from .errors import ConfigurationError, DivergenceError
from .families import Family, as_family, project, validate_data
from .optimize import _select, soft_threshold

__all__ = [
    "NodewiseFit",
    "nodewise_fit",
    "nodewise_fit_path",
    "nodewise_fit_many",
    "mple_fit",
    "mple_stability_select",
    "default_mple_grid",
    "node_kkt_violation",
    "mple_cross_validate",
]

TOL = 1e-8
MAX_ITER = 20000
_SEPARATION_BOUND = 40.0


@dataclass
class NodewiseFit:
    """Per-node GLM coefficients.

    ``slopes[j, k]`` is the coefficient of ``x_k`` in the regression of
    ``x_j`` (``k != j``; the diagonal of ``slopes`` is zero and unused).
    """

    intercepts: np.ndarray
    slopes: np.ndarray
    lam: float
    converged: np.ndarray
    iterations: np.ndarray

    def theta(self):
        """Symmetrized, projected parameter matrix."""
        half = 0.5 * self.slopes
        theta = 0.5 * (half + half.T)
        np.fill_diagonal(theta, self.intercepts)
        return theta


def _loss_and_grad(family, Z, y, beta):
    """Mean negative log-likelihood (up to constants) and its gradient, per problem."""
    eta = np.einsum("knd,kd->kn", Z, beta)
    if family is Family.ISING:
        a = np.logaddexp(0.0, eta)
        mu = expit(eta)
    else:
        with np.errstate(over="ignore"):
            a = np.exp(eta)
        mu = a
    n = y.shape[1]
    with np.errstate(invalid="ignore", over="ignore"):
        f = np.mean(a - y * eta, axis=1)
        g = np.einsum("knd,kn->kd", Z, mu - y) / n
    return f, g


def _loss(family, Z, y, beta):
    eta = np.einsum("knd,kd->kn", Z, beta)
    with np.errstate(over="ignore", invalid="ignore"):
        a = np.logaddexp(0.0, eta) if family is Family.ISING else np.exp(eta)
        return np.mean(a - y * eta, axis=1)


def _prox(v, s, pen, upper):
    return np.minimum(soft_threshold(v, s[:, None] * pen), upper)


def _fista(family, Z, y, pen, upper, beta0, tol=TOL, max_iter=MAX_ITER):
    """Accelerated proximal gradient with backtracking for a stack of GLM problems.

    Minimizes ``mean nll(Z beta; y) + sum_d pen_d |beta_d|`` subject to
    ``beta <= upper``, independently for every leading index.
    """
    K, n, d = Z.shape
    x = beta0.copy()
    yk = x.copy()
    t = np.ones(K)
    if family is Family.ISING:
        s = 4.0 * n / np.maximum(np.linalg.norm(Z, ord=2, axis=(1, 2)) ** 2, 1e-12)
    else:
        s = np.ones(K)
    f_x = _loss(family, Z, y, x)
    active = np.ones(K, dtype=bool)
    iters = np.zeros(K, dtype=int)
    for _ in range(max_iter):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        Za, ya, pa, ua = Z[idx], y[idx], pen[idx], upper[idx]
        f_y, g_y = _loss_and_grad(family, Za, ya, yk[idx])
        sa = s[idx]
        while True:
            cand = _prox(yk[idx] - sa[:, None] * g_y, sa, pa, ua)
            diff = cand - yk[idx]
            f_c = _loss(family, Za, ya, cand)
            bound = f_y + np.sum(g_y * diff, axis=1) + np.sum(diff * diff, axis=1) / (2 * sa)
            ok = np.isfinite(f_c) & (f_c <= bound + 1e-14 * np.abs(bound))
            if ok.all():
                break
            sa = np.where(ok, sa, 0.5 * sa)
            if np.any(sa < 1e-20):
                raise DivergenceError("line search failed in node-wise GLM fit")
        s[idx] = sa
        restart = f_c > f_x[idx]
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t[idx] ** 2))
        mom = np.where(restart, 0.0, (t[idx] - 1.0) / t_new)
        step = cand - x[idx]
        x_old = x[idx]
        x[idx] = cand
        f_x[idx] = f_c
        yk[idx] = cand + mom[:, None] * step
        t[idx] = np.where(restart, 1.0, t_new)
        iters[idx] += 1
        change = np.max(np.abs(cand - x_old), axis=1)
        done = change <= tol * (1.0 + np.max(np.abs(cand), axis=1))
        active[idx[done]] = False
    return x, ~active, iters


def _node_problems(family, data):
    """Stacked designs: problem ``j`` regresses column ``j`` on an intercept and the rest."""
    n, p = data.shape
    Z = np.empty((p, n, p))
    Z[:, :, 0] = 1.0
    for j in range(p):
        Z[j, :, 1:] = np.delete(data, j, axis=1)
    y = data.T.copy()
    mean = data.mean(axis=0)
    if family is Family.ISING:
        m = np.clip(mean, 1e-3, 1 - 1e-3)
        a0 = np.log(m) - np.log1p(-m)
    else:
        a0 = np.log(np.maximum(mean, 1e-3))
    beta0 = np.zeros((p, p))
    beta0[:, 0] = a0
    return Z, y, beta0


def _unpack(coef, p):
    slopes = np.zeros((p, p))
    for j in range(p):
        slopes[j, np.arange(p) != j] = coef[j, 1:]
    return coef[:, 0].copy(), slopes


def _solve(family, datasets, lambdas, tol, max_iter, strict):
    """Jointly solve the node-wise problems of every ``(dataset, lambda)`` pair."""
    p = datasets[0].shape[1]
    blocks = [_node_problems(family, d) for d in datasets]
    Zs = np.concatenate([b[0] for b in blocks])
    ys = np.concatenate([b[1] for b in blocks])
    b0 = np.concatenate([b[2] for b in blocks])
    pen = np.repeat(lambdas, p)[:, None] * np.r_[0.0, np.ones(p - 1)][None, :]
    upper = np.full_like(pen, np.inf)
    if family is Family.PGM:
        upper[:, 1:] = 0.0
    coef, conv, iters = _fista(family, Zs, ys, pen, upper, b0, tol, max_iter)
    unpen = np.repeat(lambdas == 0, p)
    blown = np.max(np.abs(coef), axis=1) > _SEPARATION_BOUND
    if not np.all(np.isfinite(coef)) or (strict and np.any(unpen & (blown | ~conv))):
        raise DivergenceError(
            "node-wise fit diverges (separation or constant node); use lambda > 0")
    fits = []
    for r in range(len(datasets)):
        block = slice(r * p, (r + 1) * p)
        a, b = _unpack(coef[block], p)
        fits.append(NodewiseFit(intercepts=a, slopes=b, lam=float(lambdas[r]),
                                converged=conv[block], iterations=iters[block]))
    return fits


def nodewise_fit_path(family, data, lambdas, tol=TOL, max_iter=MAX_ITER, strict=True):
    """Node-wise fits for every penalty in ``lambdas`` (solved jointly).

    With ``strict=False`` unpenalized fits that run off to infinity
    (separation) return the iterate reached at ``max_iter`` instead of
    raising; their ``converged`` flags stay False.
    """
    family = as_family(family)
    if family is Family.GAUSSIAN:
        raise ConfigurationError("pseudo-likelihood baselines cover the ising and pgm families")
    data = validate_data(family, data)
    lambdas = np.atleast_1d(np.asarray(lambdas, dtype=float))
    if np.any(lambdas < 0):
        raise ConfigurationError("lambda must be nonnegative")
    return _solve(family, [data] * lambdas.size, lambdas, tol, max_iter, strict)


def nodewise_fit_many(family, datasets, lam=0.0, tol=TOL, max_iter=MAX_ITER, strict=True):
    """Node-wise fits of several same-width datasets at one penalty (solved jointly)."""
    family = as_family(family)
    if family is Family.GAUSSIAN:
        raise ConfigurationError("pseudo-likelihood baselines cover the ising and pgm families")
    datasets = [validate_data(family, d) for d in datasets]
    if not datasets or len({d.shape for d in datasets}) != 1:
        raise ConfigurationError("need one or more datasets of identical shape")
    if lam < 0:
        raise ConfigurationError("lambda must be nonnegative")
    return _solve(family, datasets, np.full(len(datasets), float(lam)), tol, max_iter, strict)


def nodewise_fit(family, data, lam=0.0, tol=TOL, max_iter=MAX_ITER, strict=True):
    return nodewise_fit_path(family, data, [lam], tol, max_iter, strict)[0]


def mple_fit(family, data, lam=0.0, tol=TOL, max_iter=MAX_ITER, strict=True):
    """Symmetrized (penalized) maximum pseudo-likelihood estimate of ``theta``."""
    family = as_family(family)
    return project(family, nodewise_fit(family, data, lam, tol, max_iter, strict).theta())


def node_kkt_violation(family, data, fit):
    """Largest excess of the node-wise optimality conditions over their slack.

    Zero slopes need ``|grad| <= lam``; nonzero slopes need
    ``grad = -lam sign(b)``; intercepts need a zero gradient.  For PGM slopes
    held at the upper bound 0, only ``grad <= lam`` is required.
    """
    family = as_family(family)
    data = validate_data(family, data)
    p = data.shape[1]
    Z, y, _ = _node_problems(family, data)
    coef = np.zeros((p, p))
    coef[:, 0] = fit.intercepts
    for j in range(p):
        coef[j, 1:] = fit.slopes[j, np.arange(p) != j]
    _, g = _loss_and_grad(family, Z, y, coef)
    lam = fit.lam
    worst = np.max(np.abs(g[:, 0]))
    b, gb = coef[:, 1:], g[:, 1:]
    nz = b != 0
    worst = max(worst, np.max(np.where(nz, np.abs(gb + lam * np.sign(b)), 0.0), initial=0.0))
    zero_excess = np.abs(gb) - lam
    if family is Family.PGM:
        # the constraint b <= 0 only blocks moves upward (negative gradient)
        zero_excess = np.where(gb < 0, 0.0, gb - lam)
    worst = max(worst, np.max(np.where(~nz, zero_excess, 0.0), initial=0.0))
    return float(worst)


def default_mple_grid(family, data, R=20, ratio=0.2):
    """Default penalty grid on the per-observation scale.

    PGM: ``R`` evenly spaced values in ``[5, 7] sqrt(log p / n)``.  Ising:
    ``R`` log-spaced values from ``ratio * lam_max`` to ``lam_max``, where
    ``lam_max = max |cov(x_j, x_k)|`` is the smallest penalty giving every
    node an empty neighbourhood.
    """
    family = as_family(family)
    data = validate_data(family, data)
    n, p = data.shape
    if family is Family.PGM:
        return np.linspace(5.0, 7.0, R) * np.sqrt(np.log(max(p, 2)) / n)
    m = data.mean(axis=0)
    c = data.T @ data / n - np.outer(m, m)
    np.fill_diagonal(c, 0.0)
    lmax = float(np.max(np.abs(c)))
    if lmax <= 0:
        return np.zeros(1)
    return np.geomspace(ratio * lmax, lmax, R)


def _pseudo_nll(family, data, fit):
    """Held-out negative log pseudo-likelihood summed over nodes (per observation)."""
    Z, y, _ = _node_problems(family, data)
    p = data.shape[1]
    coef = np.zeros((p, p))
    coef[:, 0] = fit.intercepts
    for j in range(p):
        coef[j, 1:] = fit.slopes[j, np.arange(p) != j]
    return float(np.sum(_loss(family, Z, y, coef)))


def mple_cross_validate(family, data, lambda_grid=None, K=5, seed=0):
    """K-fold choice of lambda by held-out pseudo-likelihood.

    Returns ``(lambda_star, theta)`` with ``theta`` the full-data symmetrized
    fit at ``lambda_star``.  Ties go to the larger lambda.
    """
    family = as_family(family)
    data = validate_data(family, data)
    n = data.shape[0]
    grid = default_mple_grid(family, data) if lambda_grid is None else \
        np.atleast_1d(np.asarray(lambda_grid, dtype=float))
    grid = np.sort(grid)
    if grid.size < 1:
        raise ConfigurationError("lambda grid is empty")
    if K < 2:
        raise ConfigurationError("K must be at least 2")
    folds = np.array_split(make_rng(seed).permutation(n), K)
    if any(len(f) == 0 for f in folds):
        raise ConfigurationError(f"cannot split {n} rows into {K} nonempty folds")
    scores = np.zeros(grid.size)
    for test_idx in folds:
        train = np.delete(data, test_idx, axis=0)
        for r, fit in enumerate(nodewise_fit_path(family, train, grid)):
            scores[r] += _pseudo_nll(family, data[test_idx], fit) * len(test_idx)
    best = np.flatnonzero(scores == scores.min()).max()
    fit = nodewise_fit(family, data, grid[best])
    return float(grid[best]), project(family, fit.theta())


def mple_stability_select(family, data, lambda_grid=None, pi_thr=0.6):
    """Frequency-threshold edge selection over symmetrized node-wise fits."""
    family = as_family(family)
    data = validate_data(family, data)
    if not 0 < pi_thr < 1:
        raise ConfigurationError("pi_thr must lie in (0, 1)")
    n, p = data.shape
    grid = default_mple_grid(family, data) if lambda_grid is None else \
        np.atleast_1d(np.asarray(lambda_grid, dtype=float))
    if grid.size < 1:
        raise ConfigurationError("lambda grid is empty")
    thetas = [project(family, f.theta()) for f in nodewise_fit_path(family, data, grid)]
    freq = np.mean([t != 0 for t in thetas], axis=0)
    np.fill_diagonal(freq, 0.0)
    est = _select(freq, pi_thr, p, grid)
    est.thetas = thetas
    return est
