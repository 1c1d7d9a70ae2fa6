"""Posterior sampling with constrained HMC and a Laplace scale-mixture prior.

The state is ``v = vech(theta)`` (entries ``j <= k``), which is exactly the
tied coordinate system of :func:`pegm.families.grad_log_q`.  The potential is

    U(v) = -sum_i log q(x_i) + n log z(theta) - log prior(v | latents)

with ``log z`` and its gradient replaced by importance-sampling estimates
(or by enumeration in exact mode).  Positions that would leave the parameter
space are not taken; the momentum is reflected off the boundary instead.

Laplace hierarchy, over all ``j <= k``::

    theta_jk | rho2_jk, lam ~ N(0, rho2_jk / lam)
    rho2_jk ~ Exp(rate 1/2),   lam ~ Gamma(a, rate b)

truncated jointly to the parameter space, so that the latent full
conditionals are the untruncated ones:

    1 / rho2_jk | theta, lam ~ InverseGaussian(mean 1/(|theta_jk| sqrt(lam)), shape 1)
    lam | theta, rho2 ~ Gamma(a + K/2, rate b + sum theta_jk^2 / (2 rho2_jk))
"""

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import stats
from scipy.special import expit, logsumexp

from ._rng import make_rng
from .errors import (ConfigurationError, DegeneracyError, SamplerDiagnosticError)
from .exact import grad_log_z_exact, ising_exact_sample, log_z_exact
from .families import Family, as_family, grad_log_q, is_feasible, validate_data
from .importance import log_weights, recommended_N, weighted_grad
from .optimize import initial_theta
from .samplers import draw_independent, log_z_phi

__all__ = [
    "PriorSpec",
    "HMCConfig",
    "PosteriorDraws",
    "vech",
    "unvech",
    "reflect",
    "constraint",
    "log_prior",
    "hmc_transition",
    "gibbs_update_rho",
    "gibbs_update_lambda",
    "posterior_sample",
    "mh_reference",
    "geweke_test",
]

RHO_FLOOR = 1e-10


@dataclass(frozen=True)
class PriorSpec:
    """``mode = "lowdim"``: N(0, ``normal_var``) entries, except PGM off-diagonals
    whose negation is Exp(``exp_rate``).  ``mode = "laplace"``: the scale-mixture
    hierarchy with Gamma(``a_lambda``, ``b_lambda``) on the global rate."""

    mode: str = "lowdim"
    normal_var: float = 100.0
    exp_rate: float = 0.01
    a_lambda: float = 1.0
    b_lambda: float = 1.0

    def __post_init__(self):
        if self.mode not in ("lowdim", "laplace"):
            raise ConfigurationError(f"unknown prior mode {self.mode!r}")
        if min(self.normal_var, self.exp_rate, self.a_lambda, self.b_lambda) <= 0:
            raise ConfigurationError("prior scale/rate/shape parameters must be positive")


@dataclass(frozen=True)
class HMCConfig:
    step_size: float = 0.05
    n_leapfrog: int = 10
    mc_n: Optional[int] = None
    u_batch: Optional[int] = None
    z_mode: str = "mc"
    common_random_numbers: bool = True
    seed: int = 0
    adapt: bool = True
    target_accept: tuple = (0.4, 0.9)

    def __post_init__(self):
        if self.step_size < 0 or self.n_leapfrog < 1:
            raise ConfigurationError("need step_size >= 0 and n_leapfrog >= 1")
        if self.z_mode not in ("mc", "exact"):
            raise ConfigurationError(f"unknown z_mode {self.z_mode!r}")

    def grad_batch(self, p):
        return self.mc_n if self.mc_n is not None else recommended_N(p, 100)

    def energy_batch(self, p):
        return self.u_batch if self.u_batch is not None else 10 * recommended_N(p, 100)


@dataclass
class PosteriorDraws:
    draws: np.ndarray
    acceptance_rate: float
    energy: np.ndarray
    step_size: float
    rho2: Optional[np.ndarray] = None
    lam: Optional[np.ndarray] = None
    aborted: int = 0
    info: dict = field(default_factory=dict)

    def mean(self):
        return self.draws.mean(axis=0)

    def credible_interval(self, level=0.95):
        a = (1 - level) / 2
        return (np.quantile(self.draws, a, axis=0), np.quantile(self.draws, 1 - a, axis=0))


def vech(theta):
    theta = np.asarray(theta, dtype=float)
    return theta[np.triu_indices(theta.shape[-1])]


def unvech(v, p):
    out = np.zeros((p, p))
    j, k = np.triu_indices(p)
    out[j, k] = v
    out[k, j] = v
    return out


def reflect(p, r):
    """Householder reflection ``p - 2 (r'p) r`` for a unit vector ``r``."""
    return p - 2.0 * np.dot(r, p) * r


def constraint(family, theta):
    """``C(theta)`` with ``C >= 0`` on the parameter space, and the unit normal ``r``.

    Ising: ``C = 1`` and no normal.  PGM: ``C = -max_{j<k} theta_jk``; the
    normal is ``-e`` at the argmax entry (smallest vech index on ties).
    """
    family = as_family(family)
    p = theta.shape[0]
    if family is Family.ISING or p == 1:
        return 1.0, None
    v = vech(theta)
    off = np.array([j != k for j, k in zip(*np.triu_indices(p))])
    masked = np.where(off, v, -np.inf)
    i = int(np.argmax(masked))
    r = np.zeros_like(v)
    r[i] = -1.0
    return float(-masked[i]), r


def log_prior(family, theta_v, p, prior, latents=None):
    """Log prior density (up to a constant) and its gradient in vech coordinates."""
    family = as_family(family)
    diag = np.array([j == k for j, k in zip(*np.triu_indices(p))])
    if prior.mode == "laplace":
        rho2, lam = latents
        prec = lam / rho2
        return float(-0.5 * np.sum(prec * theta_v ** 2)), -prec * theta_v
    lp = -0.5 * theta_v ** 2 / prior.normal_var
    g = -theta_v / prior.normal_var
    if family is Family.PGM:
        lp = np.where(diag, lp, prior.exp_rate * theta_v)
        g = np.where(diag, g, prior.exp_rate)
    return float(lp.sum()), g


def _poisson_inverse_cdf(u, rates):
    """Column-wise Poisson quantiles of uniforms ``u`` (monotone coupling across rates)."""
    out = np.empty_like(u)
    for j, rate in enumerate(rates):
        top = int(stats.poisson.isf(1e-15, rate)) + 2
        cdf = stats.poisson.cdf(np.arange(top), rate)
        out[:, j] = np.searchsorted(cdf, u[:, j], side="right")
    return out


class _Potential:
    """Potential energy and its gradient for fixed data, prior and latents."""

    def __init__(self, family, data, prior, latents, config, rng):
        self.family = family
        self.p = data.shape[1]
        self.n = data.shape[0]
        self.g_data = vech(grad_log_q(family, data).sum(axis=0)) if self.n else np.zeros(
            self.p * (self.p + 1) // 2)
        self.prior = prior
        self.latents = latents
        self.config = config
        self.rng = rng

    def _log_z_grad(self, theta):
        if self.config.z_mode == "exact":
            return vech(grad_log_z_exact(self.family, theta))
        N = self.config.grad_batch(self.p)
        rows = draw_independent(self.family, np.diag(theta), N, self.rng)
        w = log_weights(self.family, theta, rows)
        lse = logsumexp(w)
        if not np.isfinite(lse) or lse - math.log(N) < -745.0:
            raise DegeneracyError("importance weights underflow in HMC gradient", ess=0.0)
        wt = np.exp(w - lse)
        return vech(weighted_grad(self.family, wt, rows))

    def grad(self, v):
        theta = unvech(v, self.p)
        _, gp = log_prior(self.family, v, self.p, self.prior, self.latents)
        g = -self.g_data - gp
        if self.n:
            g = g + self.n * self._log_z_grad(theta)
        return g

    def energy(self, v, uniforms=None):
        """``U(v)``; ``uniforms`` supplies shared randomness for the ``log z`` estimate."""
        theta = unvech(v, self.p)
        lp, _ = log_prior(self.family, v, self.p, self.prior, self.latents)
        u = -float(v @ self.g_data) - lp
        if self.n:
            u += self.n * self._log_z(theta, uniforms)
        return u

    def _log_z(self, theta, uniforms):
        if self.config.z_mode == "exact":
            return log_z_exact(self.family, theta)
        d = np.diag(theta)
        if uniforms is None:
            rows = draw_independent(self.family, d, self.config.energy_batch(self.p), self.rng)
        elif self.family is Family.ISING:
            rows = (uniforms < expit(d)).astype(float)
        else:
            rows = _poisson_inverse_cdf(uniforms, np.exp(d))
        w = log_weights(self.family, theta, rows)
        return float(log_z_phi(self.family, theta) + logsumexp(w) - math.log(w.size))

    def shared_uniforms(self):
        if self.config.z_mode == "exact" or not self.config.common_random_numbers or not self.n:
            return None
        return self.rng.random((self.config.energy_batch(self.p), self.p))


def hmc_transition(family, theta, latents, data, config, prior=None, rng=None,
                   step_size=None):
    """One constrained-HMC update of ``theta`` given the latents.

    Returns ``(theta_new, accepted, info)``; ``info`` carries the acceptance
    probability, the energies and the number of reflections.  A degenerate
    gradient estimate aborts the transition, which then counts as a rejection.
    """
    family = as_family(family)
    prior = prior or PriorSpec()
    rng = rng if rng is not None else make_rng(config.seed)
    theta = np.asarray(theta, dtype=float)
    p = theta.shape[0]
    data = np.asarray(data, dtype=float).reshape(-1, p)
    eps = config.step_size if step_size is None else step_size
    pot = _Potential(family, data, prior, latents, config, rng)
    v0 = vech(theta)
    mom0 = rng.standard_normal(v0.size)
    info = {"reflections": 0, "aborted": False}
    if eps == 0:
        info.update(accept_prob=1.0, energy=np.nan)
        return theta.copy(), True, info
    try:
        v = v0.copy()
        mom = mom0 - 0.5 * eps * pot.grad(v)
        for step in range(config.n_leapfrog):
            cand = v + eps * mom
            c, r = constraint(family, unvech(cand, p))
            if c >= 0:
                v = cand
                if step < config.n_leapfrog - 1:
                    mom = mom - eps * pot.grad(v)
            else:
                mom = reflect(mom, r)
                info["reflections"] += 1
        mom = mom - 0.5 * eps * pot.grad(v)
    except DegeneracyError:
        info.update(aborted=True, accept_prob=0.0, energy=np.nan)
        return theta.copy(), False, info
    shared = pot.shared_uniforms()
    h0 = pot.energy(v0, shared) + 0.5 * mom0 @ mom0
    h1 = pot.energy(v, shared) + 0.5 * mom @ mom
    log_a = h0 - h1
    acc_prob = 1.0 if log_a >= 0 else (math.exp(log_a) if np.isfinite(log_a) else 0.0)
    accepted = bool(rng.random() < acc_prob)
    new = unvech(v, p) if accepted else theta.copy()
    info.update(accept_prob=acc_prob, energy=h1 - 0.5 * mom @ mom if accepted else
                h0 - 0.5 * mom0 @ mom0)
    return new, accepted, info


def gibbs_update_rho(theta_v, lam, rng):
    """Draw ``rho2`` given ``vech(theta)`` and ``lam`` via inverse-Gaussian ``1/rho2``."""
    if lam <= 0:
        raise ConfigurationError("lam must be positive")
    a = np.maximum(np.abs(np.asarray(theta_v, dtype=float)), RHO_FLOOR)
    inv = rng.wald(1.0 / (a * math.sqrt(lam)), 1.0)
    return 1.0 / np.maximum(inv, np.finfo(float).tiny)


def gibbs_update_lambda(theta_v, rho2, a_lambda, b_lambda, rng):
    """Conjugate gamma draw of the global rate ``lam``."""
    theta_v = np.asarray(theta_v, dtype=float)
    rho2 = np.asarray(rho2, dtype=float)
    if np.any(rho2 <= 0):
        raise ConfigurationError("rho2 must be positive")
    shape = a_lambda + 0.5 * theta_v.size
    rate = b_lambda + 0.5 * np.sum(theta_v ** 2 / rho2)
    return float(rng.gamma(shape, 1.0 / rate))


def _initial_state(family, data, p):
    if data.shape[0] == 0:
        return np.zeros((p, p))
    return initial_theta(family, data)


def posterior_sample(family, data, prior=None, n_draws=1000, burn_in=500, config=None,
                     theta_init=None, latents_init=None):
    """Run the HMC-within-Gibbs sampler and return post-burn-in draws.

    The step size is adapted only during burn-in, towards acceptance in
    ``config.target_accept``; afterwards the kernel is fixed.
    """
    family = as_family(family)
    if family is Family.GAUSSIAN:
        raise ConfigurationError("posterior sampling covers the ising and pgm families")
    prior = prior or PriorSpec()
    config = config or HMCConfig()
    data = np.asarray(data, dtype=float)
    if data.ndim != 2:
        raise ConfigurationError("data must be a 2-D array (use shape (0, p) for no data)")
    if data.shape[0]:
        data = validate_data(family, data)
    p = data.shape[1]
    if config.z_mode == "exact" and family is not Family.ISING:
        raise ConfigurationError("exact mode is available for the Ising model only")
    rng = make_rng(config.seed)
    theta = _initial_state(family, data, p) if theta_init is None else np.asarray(theta_init, float)
    K = p * (p + 1) // 2
    laplace = prior.mode == "laplace"
    if laplace:
        lam, rho2 = latents_init if latents_init is not None else (
            prior.a_lambda / prior.b_lambda, np.full(K, 2.0))
    eps = config.step_size
    lo, hi = config.target_accept
    mid = 0.5 * (lo + hi)
    draws = np.empty((n_draws, p, p))
    rho_tr = np.empty((n_draws, K)) if laplace else None
    lam_tr = np.empty(n_draws) if laplace else None
    energy = np.empty(n_draws)
    acc = 0
    aborted = 0
    for it in range(burn_in + n_draws):
        latents = (rho2, lam) if laplace else None
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            theta, accepted, info = hmc_transition(family, theta, latents, data, config,
                                                   prior, rng, step_size=eps)
        aborted += info["aborted"]
        if laplace:
            v = vech(theta)
            rho2 = gibbs_update_rho(v, lam, rng)
            lam = gibbs_update_lambda(v, rho2, prior.a_lambda, prior.b_lambda, rng)
        if it < burn_in:
            if config.adapt:
                eps *= math.exp((info["accept_prob"] - mid) / math.sqrt(it + 1.0))
            continue
        k = it - burn_in
        if not is_feasible(family, theta):
            raise AssertionError("sampler emitted an infeasible draw")
        draws[k] = theta
        energy[k] = info["energy"]
        acc += accepted
        if laplace:
            rho_tr[k] = rho2
            lam_tr[k] = lam
    rate = acc / n_draws if n_draws else 0.0
    if n_draws and rate < 0.05:
        raise SamplerDiagnosticError(
            f"HMC acceptance rate {rate:.3f} is below 0.05 after adaptation")
    return PosteriorDraws(draws=draws, acceptance_rate=rate, energy=energy, step_size=eps,
                          rho2=rho_tr, lam=lam_tr, aborted=aborted)


def mh_reference(data, prior=None, n_draws=20000, burn_in=2000, scale=0.1, seed=0,
                 theta_init=None):
    """Random-walk Metropolis on the exact Ising posterior (enumerated ``log z``).

    Serves as the reference chain for checking the HMC sampler in exact mode.
    """
    prior = prior or PriorSpec()
    if prior.mode != "lowdim":
        raise ConfigurationError("the reference chain uses the fixed low-dimensional prior")
    data = validate_data(Family.ISING, data)
    n, p = data.shape
    rng = make_rng(seed)
    g_data = vech(grad_log_q(Family.ISING, data).sum(axis=0))

    def log_post(v):
        lp, _ = log_prior(Family.ISING, v, p, prior)
        return float(v @ g_data) - n * log_z_exact(Family.ISING, unvech(v, p)) + lp

    v = vech(initial_theta(Family.ISING, data) if theta_init is None else theta_init)
    cur = log_post(v)
    out = np.empty((n_draws, v.size))
    acc = 0
    for it in range(burn_in + n_draws):
        prop = v + scale * rng.standard_normal(v.size)
        new = log_post(prop)
        if math.log(rng.random()) < new - cur:
            v, cur = prop, new
            acc += it >= burn_in
        if it >= burn_in:
            out[it - burn_in] = v
    return np.array([unvech(r, p) for r in out]), acc / max(n_draws, 1)


def _batch_means_var(x, n_batches=50):
    """Variance of the mean of a correlated series by batch means."""
    m = len(x) // n_batches
    b = x[: m * n_batches].reshape(n_batches, m).mean(axis=1)
    return b.var(ddof=1) / n_batches


def geweke_test(p=2, n=5, prior=None, n_marginal=20000, n_successive=20000,
                config=None, seed=0, functions=None):
    """Joint-distribution test of the Laplace-hierarchy Ising sampler.

    Compares test functions of ``(theta, rho2, lam)`` drawn from the prior
    (marginal-conditional simulator) with those produced by alternating the
    posterior kernel (exact-z HMC plus latent Gibbs updates) with fresh data
    draws (successive-conditional simulator).  Returns a dict of two-sided
    p-values.
    """
    prior = prior or PriorSpec(mode="laplace", a_lambda=5.0, b_lambda=5.0)
    config = config or HMCConfig(z_mode="exact", step_size=0.2, n_leapfrog=5, adapt=False)
    rng = make_rng(seed)
    K = p * (p + 1) // 2
    off = int(np.flatnonzero([j != k for j, k in zip(*np.triu_indices(p))])[0])
    functions = functions or {
        "theta_00": lambda v, r, l: v[0],
        "theta_01": lambda v, r, l: v[off],
        "theta_01_sq": lambda v, r, l: v[off] ** 2,
        "log_lambda": lambda v, r, l: math.log(l),
        "log_rho2_00": lambda v, r, l: math.log(r[0]),
    }

    def prior_draw():
        lam = rng.gamma(prior.a_lambda, 1.0 / prior.b_lambda)
        rho2 = rng.exponential(2.0, K)
        v = rng.standard_normal(K) * np.sqrt(rho2 / lam)
        return v, rho2, lam

    marg = {k: np.empty(n_marginal) for k in functions}
    for i in range(n_marginal):
        v, r, l = prior_draw()
        for k, f in functions.items():
            marg[k][i] = f(v, r, l)
    succ = {k: np.empty(n_successive) for k in functions}
    v, rho2, lam = prior_draw()
    for i in range(n_successive):
        x = ising_exact_sample(unvech(v, p), n, rng)
        theta, _, _ = hmc_transition(Family.ISING, unvech(v, p), (rho2, lam), x, config,
                                     prior, rng)
        v = vech(theta)
        rho2 = gibbs_update_rho(v, lam, rng)
        lam = gibbs_update_lambda(v, rho2, prior.a_lambda, prior.b_lambda, rng)
        for k, f in functions.items():
            succ[k][i] = f(v, rho2, lam)
    out = {}
    for k in functions:
        se = math.sqrt(marg[k].var(ddof=1) / n_marginal + _batch_means_var(succ[k]))
        z = (marg[k].mean() - succ[k].mean()) / se
        out[k] = float(2 * stats.norm.sf(abs(z)))
    return out
