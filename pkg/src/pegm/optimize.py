"""Full-likelihood point estimation by stochastic projected/proximal gradient ascent.

Every iteration draws a fresh batch from the independence model at the
current iterate, estimates ``grad log z`` by importance sampling, takes a step
on the average log-likelihood, soft-thresholds the penalized entries and
projects back onto the parameter space.

The inner loop is written for a stack of ``B`` problems at once (different
datasets and/or different penalties) so that bootstrap replicates and
regularization grids are vectorized.
"""

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.special import logsumexp, softmax

from ._rng import make_rng, task_seed
from .errors import ConfigurationError, DivergenceError, OverflowDiagnostic
from .exact import grad_log_z_exact, log_z_exact
from .families import (Family, as_family, check_feasible, grad_log_q,
                       log_q, project, suff_stats, validate_data)
from .importance import log_weights, recommended_N, weighted_grad
from .samplers import draw_independent, log_z_phi

__all__ = [
    "FitConfig",
    "FitResult",
    "GraphEstimate",
    "BootstrapCI",
    "soft_threshold",
    "initial_theta",
    "mle_fit",
    "penalized_fit",
    "fit_many",
    "cross_validate",
    "stability_select",
    "bootstrap_ci",
    "held_out_loglik",
    "graph_from_theta",
    "lambda_max",
    "default_lambda_grid",
]


@dataclass(frozen=True)
class FitConfig:
    """Settings for :func:`mle_fit` and :func:`penalized_fit`.

    ``schedule`` is ``"fixed"`` or ``"robbins_monro"``; the latter uses
    ``step_size / (1 + t / t0)``.  ``mc_n = None`` means
    ``recommended_N(p, 100)``.  ``z_mode = "exact"`` replaces the Monte Carlo
    gradient of ``log z`` by enumeration (small Ising models only).
    """

    step_size: float = 1.0
    schedule: str = "robbins_monro"
    t0: float = 100.0
    max_iters: int = 2000
    tol: float = 1e-4
    mc_n: Optional[int] = None
    seed: int = 0
    penalize_diagonal: bool = False
    z_mode: str = "mc"
    common_random_numbers: bool = True
    divergence_window: int = 50

    def __post_init__(self):
        if not self.step_size > 0:
            raise ConfigurationError("step_size must be positive")
        if not self.tol > 0:
            raise ConfigurationError("tol must be positive")
        if self.schedule not in ("fixed", "robbins_monro"):
            raise ConfigurationError(f"unknown schedule {self.schedule!r}")
        if self.z_mode not in ("mc", "exact"):
            raise ConfigurationError(f"unknown z_mode {self.z_mode!r}")
        if self.max_iters < 0:
            raise ConfigurationError("max_iters must be nonnegative")

    def gamma(self, t):
        if self.schedule == "fixed":
            return self.step_size
        return self.step_size / (1.0 + t / self.t0)

    def batch_size(self, p):
        return self.mc_n if self.mc_n is not None else recommended_N(p, 100)


@dataclass
class FitResult:
    theta_hat: np.ndarray
    objective: np.ndarray
    grad_norm: np.ndarray
    iterations: int
    converged: bool
    lam: float = 0.0
    diagnostics: dict = field(default_factory=dict)

    @property
    def trace(self):
        return {"objective": self.objective, "grad_norm": self.grad_norm}


@dataclass
class GraphEstimate:
    p: int
    selection_frequency: np.ndarray
    edges: list
    pi_thr: float
    lambda_grid: Optional[np.ndarray] = None

    def adjacency(self):
        a = np.zeros((self.p, self.p), dtype=bool)
        for j, k in self.edges:
            a[j, k] = a[k, j] = True
        return a


@dataclass
class BootstrapCI:
    lower: np.ndarray
    upper: np.ndarray
    estimates: np.ndarray
    level: float

    def __iter__(self):
        return iter((self.lower, self.upper))

    @property
    def width(self):
        return self.upper - self.lower


def soft_threshold(x, t):
    """Elementwise ``sign(x) * max(|x| - t, 0)``."""
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def initial_theta(family, data, sample_weight=None):
    """Independence fit: closed-form per-node MLE on the diagonal, zeros elsewhere."""
    family = as_family(family)
    x = np.asarray(data, dtype=float)
    n = x.shape[0]
    w = None if sample_weight is None else np.asarray(sample_weight, dtype=float)
    mean = np.average(x, axis=0, weights=w)
    eps = 1.0 / (2.0 * n) if w is None else 1e-6
    if family is Family.ISING:
        m = np.clip(mean, eps, 1.0 - eps)
        d = np.log(m) - np.log1p(-m)
    elif family is Family.PGM:
        d = np.log(np.maximum(mean, eps))
    else:
        var = np.average(x * x, axis=0, weights=w)
        d = 1.0 / np.maximum(var, 1e-12)
    return np.diag(d)


def _data_stats(family, x, sample_weight=None):
    """Mean tied gradient of ``log q`` over the data and mean raw sufficient statistics."""
    g = grad_log_q(family, x)
    s = suff_stats(family, x)
    if sample_weight is None:
        return g.mean(axis=0), s.mean(axis=0)
    w = np.asarray(sample_weight, dtype=float)
    w = w / w.sum()
    return np.einsum("i,ijk->jk", w, g), np.einsum("i,ijk->jk", w, s)


def _mean_log_q(family, theta, s_bar):
    inner = np.einsum("...jk,...jk->...", theta, s_bar)
    return -0.5 * inner if family is Family.GAUSSIAN else inner


def _draw(family, theta, N, rng, crn):
    diag = np.diagonal(theta, axis1=-2, axis2=-1)
    if not crn or family is Family.PGM or diag.ndim == 1:
        return draw_independent(family, diag, N, rng)
    p = diag.shape[-1]
    if family is Family.ISING:
        u = rng.random((N, p))
        return (u < 1.0 / (1.0 + np.exp(-diag[..., None, :]))).astype(float)
    z = rng.standard_normal((N, p))
    return z / np.sqrt(diag[..., None, :])


def _grad_log_z(family, theta, config, N, rng):
    """Estimated (or exact) ``log z`` and ``grad log z`` for a stack of parameters."""
    if config.z_mode == "exact":
        lz = np.array([log_z_exact(family, t) for t in theta])
        g = np.array([grad_log_z_exact(family, t) for t in theta])
        return lz, g, np.full(theta.shape[0], np.inf)
    if family is Family.PGM and np.max(np.diagonal(theta, axis1=-2, axis2=-1)) > 700:
        raise OverflowDiagnostic("PGM diagonal parameter overflows the Poisson rate")
    rows = _draw(family, theta, N, rng, config.common_random_numbers)
    w = log_weights(family, theta, rows)
    lse = logsumexp(w, axis=-1)
    wt = softmax(w, axis=-1)
    g = weighted_grad(family, wt, rows)
    ess = 1.0 / np.sum(wt * wt, axis=-1)
    lz = log_z_phi(family, theta) + lse - math.log(N)
    return np.atleast_1d(lz), g, ess


def _ascent(family, g_bar, s_bar, n, lam, config, theta0, rng):
    """Run the proximal ascent for a stack of problems.

    Parameters are stacked along axis 0: ``g_bar``/``s_bar``/``theta0`` are
    ``(B, p, p)``, ``n`` and ``lam`` are ``(B,)``.
    """
    B, p, _ = theta0.shape
    N = config.batch_size(p)
    theta = theta0.copy()
    pen_mask = ~np.eye(p, dtype=bool)
    if config.penalize_diagonal:
        pen_mask[:] = True
    thr_scale = (lam / n)[:, None, None]
    active = np.ones(B, dtype=bool)
    iters = np.zeros(B, dtype=int)
    obj = np.full((config.max_iters, B), np.nan)
    gnorm = np.full((config.max_iters, B), np.nan)
    decreasing = np.zeros(B, dtype=int)
    last_obj = np.full(B, -np.inf)
    for t in range(config.max_iters):
        if not active.any():
            break
        gamma = config.gamma(t)
        with np.errstate(over="ignore", invalid="ignore"):
            lz, g_hat, _ = _grad_log_z(family, theta, config, N, rng)
        grad = g_bar - g_hat
        # tied coordinates: each unordered pair counted once
        penalty = (lam / n) * np.sum(np.abs(np.triu(theta, 0 if config.penalize_diagonal else 1)),
                                     axis=(1, 2))
        cur_obj = _mean_log_q(family, theta, s_bar) - lz - penalty
        obj[t, active] = cur_obj[active]
        gnorm[t, active] = np.linalg.norm(grad, axis=(1, 2))[active]
        stepped = theta + gamma * grad
        shrunk = np.where(pen_mask, soft_threshold(stepped, gamma * thr_scale), stepped)
        new = project(family, shrunk)
        if not np.all(np.isfinite(new[active])):
            raise DivergenceError("iterates became non-finite; reduce step_size")
        rel = np.linalg.norm(new - theta, axis=(1, 2)) / np.maximum(
            1.0, np.linalg.norm(theta, axis=(1, 2)))
        theta = np.where(active[:, None, None], new, theta)
        iters[active] += 1
        decreasing = np.where(active & (cur_obj < last_obj), decreasing + 1, 0)
        last_obj = np.where(active, cur_obj, last_obj)
        if np.any(decreasing >= config.divergence_window):
            raise DivergenceError(
                f"objective estimate decreased for {config.divergence_window} consecutive "
                "iterations; use a smaller step_size")
        active &= ~(rel < config.tol)
    converged = ~active
    return theta, obj, gnorm, iters, converged


def _final_diagnostics(family, theta, g_bar, config, rng):
    """Fresh-batch estimate of ``grad log z`` at the fit with entrywise MC standard errors."""
    p = theta.shape[0]
    N = config.batch_size(p)
    if config.z_mode == "exact":
        g = grad_log_z_exact(family, theta)
        return {"grad_log_z": g, "mc_se": np.zeros_like(g), "ess": float("inf"),
                "log_z_hat": log_z_exact(family, theta),
                "stationarity": float(np.linalg.norm(g_bar - g))}
    rows = draw_independent(family, np.diag(theta), N, rng)
    w = log_weights(family, theta, rows)
    wt = softmax(w)
    g = weighted_grad(family, wt, rows)
    per_row = grad_log_q(family, rows)
    se = np.sqrt(np.einsum("i,ijk->jk", wt * wt, (per_row - g) ** 2))
    return {"grad_log_z": g, "mc_se": se, "ess": float(1.0 / np.sum(wt * wt)),
            "log_z_hat": float(log_z_phi(family, theta) + logsumexp(w) - math.log(N)),
            "stationarity": float(np.linalg.norm(g_bar - g))}


def fit_many(family, datasets, lams, config=None, sample_weights=None, theta_init=None):
    """Fit a stack of (dataset, lambda) problems in one vectorized loop.

    ``datasets`` is a list of ``(n_b, p)`` arrays or a single array shared by
    every problem; ``lams`` a scalar or one penalty per problem.
    """
    family = as_family(family)
    config = config or FitConfig()
    lams = np.atleast_1d(np.asarray(lams, dtype=float))
    if isinstance(datasets, np.ndarray) and datasets.ndim == 2:
        datasets = [datasets] * len(lams)
    datasets = [validate_data(family, d) for d in datasets]
    if len(lams) == 1 and len(datasets) > 1:
        lams = np.repeat(lams, len(datasets))
    if len(lams) != len(datasets):
        raise ConfigurationError("need one penalty per dataset")
    if np.any(lams < 0):
        raise ConfigurationError("lambda must be nonnegative")
    if sample_weights is None:
        sample_weights = [None] * len(datasets)
    stats = [_data_stats(family, d, w) for d, w in zip(datasets, sample_weights)]
    g_bar = np.array([s[0] for s in stats])
    s_bar = np.array([s[1] for s in stats])
    n = np.array([d.shape[0] for d in datasets], dtype=float)
    if theta_init is None:
        theta0 = np.array([initial_theta(family, d, w) for d, w in zip(datasets, sample_weights)])
    else:
        theta0 = np.broadcast_to(np.asarray(theta_init, dtype=float),
                                 (len(datasets),) + datasets[0].shape[1:] * 2).copy()
    for t in theta0:
        check_feasible(family, t)
    rng = make_rng(config.seed)
    theta, obj, gnorm, iters, conv = _ascent(family, g_bar, s_bar, n, lams, config, theta0, rng)
    results = []
    diag_rng = make_rng(task_seed(config.seed, 10**6))
    for b in range(len(datasets)):
        k = iters[b]
        results.append(FitResult(
            theta_hat=theta[b], objective=obj[:k, b], grad_norm=gnorm[:k, b],
            iterations=int(k), converged=bool(conv[b]), lam=float(lams[b]),
            diagnostics=_final_diagnostics(family, theta[b], g_bar[b], config, diag_rng)))
    return results


def penalized_fit(family, data, lam, config=None, sample_weight=None):
    """l1-penalized likelihood estimate via proximal stochastic gradient ascent.

    The threshold applied at step ``t`` is ``gamma_t * lam / n`` on the tied
    coordinates; ``lam = 0`` reproduces :func:`mle_fit` exactly.
    """
    data = np.asarray(data, dtype=float)
    weights = None if sample_weight is None else [sample_weight]
    return fit_many(family, [data], [lam], config, sample_weights=weights)[0]


def mle_fit(family, data, config=None, sample_weight=None):
    """Maximum likelihood estimate by projected stochastic gradient ascent."""
    return penalized_fit(family, data, 0.0, config, sample_weight)


def held_out_loglik(family, theta, data, N, seed=None):
    """``sum_i log q(x_i) - n log z_hat(theta)`` with ``z`` from a fresh batch of size ``N``."""
    from .importance import log_z_hat
    family = as_family(family)
    data = validate_data(family, data)
    return float(np.sum(log_q(family, theta, data, check=False))
                 - data.shape[0] * log_z_hat(family, theta, N, seed))


def cross_validate(family, data, lambda_grid, K=5, config=None):
    """K-fold choice of lambda by held-out log-likelihood.

    Returns ``(lambda_star, path)`` where ``path`` holds full-data fits at
    every grid value.  Ties go to the larger lambda.
    """
    family = as_family(family)
    config = config or FitConfig()
    data = validate_data(family, data)
    grid = np.asarray(sorted(np.atleast_1d(lambda_grid)), dtype=float)
    if grid.size == 0:
        raise ConfigurationError("lambda grid is empty")
    if K < 2:
        raise ConfigurationError("K must be at least 2")
    n, p = data.shape
    folds = np.array_split(make_rng(task_seed(config.seed, 7)).permutation(n), K)
    if any(len(f) == 0 for f in folds):
        raise ConfigurationError(f"cannot split {n} rows into {K} nonempty folds")
    N_eval = 10 * config.batch_size(p)
    scores = np.zeros(grid.size)
    for k, test_idx in enumerate(folds):
        train = np.delete(data, test_idx, axis=0)
        cfg = replace(config, seed=task_seed(config.seed, 100 + k))
        fits = fit_many(family, train, grid, cfg)
        for r, fit in enumerate(fits):
            scores[r] += held_out_loglik(family, fit.theta_hat, data[test_idx], N_eval,
                                         seed=task_seed(config.seed, 1000 * (k + 1) + r))
    best = np.flatnonzero(scores == scores.max()).max() if grid.size > 1 else 0
    path = fit_many(family, data, grid, config)
    for fit, s in zip(path, scores):
        fit.diagnostics["cv_loglik"] = float(s)
    return float(grid[best]), path


def lambda_max(family, data):
    """Smallest total-scale penalty at which the independence start has no edges.

    At the diagonal fit the tied off-diagonal gradient of the average
    log-likelihood is ``2 (mean x_j x_k - mean x_j mean x_k)``; the threshold
    ``lam / n`` must exceed its largest magnitude.
    """
    family = as_family(family)
    data = validate_data(family, data)
    n = data.shape[0]
    m = data.mean(axis=0)
    c = data.T @ data / n - np.outer(m, m)
    np.fill_diagonal(c, 0.0)
    if family is Family.PGM:
        c = np.minimum(c, 0.0)
    return float(2.0 * n * np.max(np.abs(c)))


def default_lambda_grid(family, data, R=10, ratio=0.2):
    """``R`` log-spaced total-scale penalties from ``ratio * lambda_max`` to ``lambda_max``."""
    lmax = lambda_max(family, data)
    if lmax <= 0:
        return np.zeros(1)
    return np.geomspace(ratio * lmax, lmax, R)


def graph_from_theta(theta, tol=0.0):
    """Unordered pairs ``(j, k)``, ``j < k``, with ``|theta_jk| > tol``."""
    theta = np.asarray(theta)
    j, k = np.triu_indices(theta.shape[0], 1)
    keep = np.abs(theta[j, k]) > tol
    return list(zip(j[keep].tolist(), k[keep].tolist()))


def _select(freq, pi_thr, p, grid):
    j, k = np.triu_indices(p, 1)
    keep = freq[j, k] > pi_thr
    edges = list(zip(j[keep].tolist(), k[keep].tolist()))
    return GraphEstimate(p=p, selection_frequency=freq, edges=edges, pi_thr=pi_thr,
                         lambda_grid=grid)


def stability_select(family, data, lambda_grid, pi_thr=0.6, config=None):
    """Edges selected in more than ``pi_thr`` of the fits along ``lambda_grid`` (no subsampling)."""
    if not 0 < pi_thr < 1:
        raise ConfigurationError("pi_thr must lie in (0, 1)")
    grid = np.atleast_1d(np.asarray(lambda_grid, dtype=float))
    if grid.size < 1:
        raise ConfigurationError("lambda grid is empty")
    data = np.asarray(data, dtype=float)
    fits = fit_many(family, data, grid, config)
    ind = np.array([f.theta_hat != 0 for f in fits], dtype=float)
    freq = ind.mean(axis=0)
    np.fill_diagonal(freq, 0.0)
    est = _select(freq, pi_thr, data.shape[1], grid)
    est.fits = fits
    return est


def bootstrap_ci(family, data, B=500, level=0.95, config=None):
    """Nonparametric percentile bootstrap intervals for every entry of the MLE.

    Rows are resampled with replacement ``B`` times and each resample is fit
    by unpenalized :func:`mle_fit` (vectorized across resamples).
    """
    family = as_family(family)
    config = config or FitConfig()
    if B < 2:
        raise ConfigurationError("B must be at least 2")
    if not 0 < level < 1:
        raise ConfigurationError("level must lie in (0, 1)")
    data = validate_data(family, data)
    n = data.shape[0]
    if np.all(data == data[0]):
        theta = mle_fit(family, data, config).theta_hat
        est = np.broadcast_to(theta, (B,) + theta.shape).copy()
        return BootstrapCI(lower=theta.copy(), upper=theta.copy(), estimates=est, level=level)
    rng = make_rng(task_seed(config.seed, 31337))
    resamples = [data[rng.integers(0, n, n)] for _ in range(B)]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        fits = fit_many(family, resamples, np.zeros(B),
                        replace(config, common_random_numbers=False))
    est = np.array([f.theta_hat for f in fits])
    alpha = (1.0 - level) / 2.0
    lower = np.quantile(est, alpha, axis=0, method="inverted_cdf")
    upper = np.quantile(est, 1.0 - alpha, axis=0, method="inverted_cdf")
    return BootstrapCI(lower=lower, upper=upper, estimates=est, level=level)
