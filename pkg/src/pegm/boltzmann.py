"""Restricted and full Boltzmann machines trained by Monte Carlo EM.

A Boltzmann machine is an Ising model over ``p`` visible and ``m`` hidden
units with parameter ``theta`` partitioned as ``[[vv, vh], [hv, hh]]`` and a
symmetric boolean ``mask`` of allowed interactions.  The package-wide
convention applies, so the hidden conditional of an RBM is

    P(h_k = 1 | v) = sigmoid(theta_kk + 2 sum_j theta_jk v_j).

Training ascends the observed (marginal) log-likelihood.  Its gradient in
tied coordinates is ``E_data E[grad log q(v, h) | v] - grad log z(theta)``:
the first term is exact for an RBM (the hidden conditional factorizes) and a
self-normalized importance estimate for a general BM; the second term is the
importance-sampling estimate over the joint model.
"""

import math
import re
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import expit, logsumexp, softmax

from ._rng import make_rng
from .errors import ConfigurationError, ContractError, ResourceError
from .exact import MAX_ENUM_BITS, binary_states, grad_log_z_exact, log_z_exact
from .families import Family, log_q, validate_data
from .importance import log_weights, recommended_N, weighted_grad
from .samplers import draw_independent, log_z_phi

__all__ = [
    "BoltzmannModel",
    "TrainConfig",
    "make_mask",
    "init_model",
    "rbm_conditional_hidden",
    "rbm_conditional_visible",
    "hidden_conditional_theta",
    "marginal_grad",
    "rbm_fit",
    "bm_fit",
    "cd_k_fit",
    "reconstruct",
    "brier_loss",
    "visible_log_marginal",
    "exact_marginal_loglik",
    "marginal_log_likelihood",
    "total_variation_exact",
    "probit_binary_data",
]


@dataclass
class BoltzmannModel:
    p: int
    m: int
    theta: np.ndarray
    mask: np.ndarray
    mask_spec: str = "rbm"
    trace: Optional[np.ndarray] = None

    def __post_init__(self):
        d = self.p + self.m
        self.theta = np.asarray(self.theta, dtype=float)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.theta.shape != (d, d) or self.mask.shape != (d, d):
            raise ContractError(f"theta and mask must be {d}x{d}")
        if not np.array_equal(self.theta, self.theta.T) or not np.array_equal(self.mask, self.mask.T):
            raise ContractError("theta and mask must be symmetric")
        if np.any(self.theta[~self.mask] != 0):
            raise ContractError("theta is nonzero outside the mask")

    @property
    def is_rbm(self):
        return _is_bipartite(self.mask, self.p)

    @property
    def weights(self):
        """The visible-hidden block ``theta_vh`` (p x m)."""
        return self.theta[: self.p, self.p:]

    def copy(self):
        return BoltzmannModel(self.p, self.m, self.theta.copy(), self.mask.copy(), self.mask_spec)


@dataclass(frozen=True)
class TrainConfig:
    """``N_t = round(N0 (1 + t / growth))`` Monte Carlo draws at epoch ``t``;
    ``N0 = None`` means ``recommended_N(p + m, 20)``.  Step sizes follow
    ``step_size / (1 + t / t0)``.  Every epoch uses the full data set."""

    step_size: float = 0.5
    t0: float = 100.0
    N0: Optional[int] = None
    growth: float = 50.0
    max_epochs: int = 1000
    seed: int = 0
    z_mode: str = "mc"
    init_scale: float = 0.01

    def __post_init__(self):
        if self.step_size <= 0 or self.t0 <= 0 or self.growth <= 0:
            raise ConfigurationError("step_size, t0 and growth must be positive")
        if self.max_epochs < 0:
            raise ConfigurationError("max_epochs must be nonnegative")
        if self.z_mode not in ("mc", "exact"):
            raise ConfigurationError(f"unknown z_mode {self.z_mode!r}")

    def gamma(self, t):
        return self.step_size / (1.0 + t / self.t0)

    def n_draws(self, t, d):
        n0 = self.N0 if self.N0 is not None else recommended_N(d, 20)
        return int(round(n0 * (1.0 + t / self.growth)))


def _is_bipartite(mask, p):
    d = mask.shape[0]
    off = mask & ~np.eye(d, dtype=bool)
    return not off[:p, :p].any() and not off[p:, p:].any()


def make_mask(spec, p, m):
    """Boolean interaction mask: ``"rbm"``, ``"full"`` or ``"dbm:<m1>,<m2>,..."``.

    For a DBM the hidden units are split into consecutive layers of the given
    sizes and only adjacent layers (visible, layer 1, layer 2, ...) connect.
    The diagonal is always allowed.
    """
    d = p + m
    spec = str(spec).strip().lower()
    if spec == "full":
        return np.ones((d, d), dtype=bool)
    mask = np.eye(d, dtype=bool)
    if spec == "rbm":
        mask[:p, p:] = True
        mask[p:, :p] = True
        return mask
    match = re.fullmatch(r"dbm:(\d+(?:,\d+)*)", spec)
    if not match:
        raise ConfigurationError(f"unknown mask spec {spec!r}")
    sizes = [p] + [int(s) for s in match.group(1).split(",")]
    if sum(sizes[1:]) != m:
        raise ConfigurationError(f"DBM layer sizes {sizes[1:]} do not sum to m={m}")
    edges = np.cumsum([0] + sizes)
    for a in range(len(sizes) - 1):
        lo, mid, hi = edges[a], edges[a + 1], edges[a + 2]
        mask[lo:mid, mid:hi] = True
        mask[mid:hi, lo:mid] = True
    return mask


def init_model(data, m, mask="rbm", init_scale=0.01, seed=None):
    """Small random interactions, visible biases at the data log-odds, hidden biases 0."""
    data = validate_data(Family.ISING, data)
    n, p = data.shape
    spec = mask if isinstance(mask, str) else "custom"
    mk = make_mask(mask, p, m) if isinstance(mask, str) else np.asarray(mask, dtype=bool)
    rng = make_rng(seed)
    d = p + m
    u = rng.uniform(-init_scale, init_scale, (d, d))
    theta = np.triu(u, 1)
    theta = (theta + theta.T) * mk
    np.fill_diagonal(theta, 0.0)
    mean = np.clip(data.mean(axis=0), 0.5 / n, 1 - 0.5 / n)
    theta[np.arange(p), np.arange(p)] = np.log(mean) - np.log1p(-mean)
    return BoltzmannModel(p, m, theta, mk, spec)


def _require_rbm(model):
    if not model.is_rbm:
        raise ContractError("operation needs a bipartite (RBM) mask")


def rbm_conditional_hidden(model, v):
    """``P(h_k = 1 | v)`` for each hidden unit (rows of ``v`` give rows of output)."""
    _require_rbm(model)
    v = np.asarray(v, dtype=float)
    p = model.p
    return expit(np.diag(model.theta)[p:] + 2.0 * v @ model.weights)


def rbm_conditional_visible(model, h):
    """``P(v_j = 1 | h)`` for each visible unit."""
    _require_rbm(model)
    h = np.asarray(h, dtype=float)
    p = model.p
    return expit(np.diag(model.theta)[:p] + 2.0 * h @ model.weights.T)


def hidden_conditional_theta(model, v):
    """Parameter of the hidden-block Ising model ``h | v`` (stacked over rows of ``v``).

    Off-diagonals are ``theta_hh``; diagonals are shifted to
    ``theta_kk + 2 sum_j theta_jk v_j``.
    """
    v = np.atleast_2d(np.asarray(v, dtype=float))
    p = model.p
    hh = model.theta[p:, p:]
    out = np.broadcast_to(hh - np.diag(np.diag(hh)), (v.shape[0],) + hh.shape).copy()
    idx = np.arange(model.m)
    out[:, idx, idx] = np.diag(hh) + 2.0 * v @ model.weights
    return out


def _tied(M):
    """Tied gradient from a (batched) second-moment matrix with means on the diagonal."""
    g = 2.0 * M
    idx = np.arange(M.shape[-1])
    g[..., idx, idx] = M[..., idx, idx]
    return g


def _hidden_moments(model, V, mode, N, rng, force_is=False):
    """``E[h | v]`` (U, m) and ``E[h h' | v]`` (U, m, m) for each unique visible row.

    Exact sigmoid products for an RBM unless ``force_is``; otherwise
    enumeration (``mode = "exact"``) or self-normalized importance sampling
    from ``diag(theta_{h|v})``.
    """
    m = model.m
    idx = np.arange(m)
    if model.is_rbm and not force_is:
        mu = rbm_conditional_hidden(model, V)
        hh = mu[:, :, None] * mu[:, None, :]
        hh[:, idx, idx] = mu
        return mu, hh
    thetas = hidden_conditional_theta(model, V)
    diag = np.diagonal(thetas, axis1=1, axis2=2)
    if mode == "exact":
        H = binary_states(m)
        off = thetas[0] - np.diag(diag[0])
        lq = diag @ H.T + np.einsum("nk,kl,nl->n", H, off, H)[None, :]
        w = softmax(lq, axis=-1)
        return w @ H, np.einsum("un,nk,nl->ukl", w, H, H)
    rows = draw_independent(Family.ISING, diag, N, rng)
    w = softmax(log_weights(Family.ISING, thetas, rows), axis=-1)
    return (np.einsum("un,unk->uk", w, rows),
            np.einsum("un,unk,unl->ukl", w, rows, rows))


def _zero_diag_diag(t):
    out = np.zeros_like(t)
    idx = np.arange(t.shape[-1])
    out[..., idx, idx] = t[..., idx, idx]
    return out


def _positive_phase(model, V, counts, mode, N, rng, force_is=False):
    """Data average of ``E[grad log q(v, h) | v]`` in tied coordinates."""
    p, m = model.p, model.m
    w = counts / counts.sum()
    d = p + m
    M = np.zeros((d, d))
    M[:p, :p] = np.einsum("u,uj,uk->jk", w, V, V)
    if m:
        mu, hh = _hidden_moments(model, V, mode, N, rng, force_is)
        vh = np.einsum("u,uj,uk->jk", w, V, mu)
        M[:p, p:] = vh
        M[p:, :p] = vh.T
        M[p:, p:] = np.einsum("u,ukl->kl", w, hh)
    return _tied(M)


def _negative_phase(model, mode, N, rng):
    if mode == "exact":
        return grad_log_z_exact(Family.ISING, model.theta)
    theta = model.theta
    rows = draw_independent(Family.ISING, np.diag(theta), N, rng)
    wt = softmax(log_weights(Family.ISING, theta, rows))
    return weighted_grad(Family.ISING, wt, rows)


def _unique_rows(data):
    V, counts = np.unique(data, axis=0, return_counts=True)
    return V, counts.astype(float)


def marginal_grad(model, data, N=None, mode="mc", seed=None):
    """Gradient of the average observed log-likelihood (masked, tied coordinates)."""
    data = validate_data(Family.ISING, data)
    rng = make_rng(seed)
    N = N or recommended_N(model.p + model.m, 20)
    V, counts = _unique_rows(data)
    g = _positive_phase(model, V, counts, mode, N, rng) - _negative_phase(model, mode, N, rng)
    return g * model.mask


def exact_marginal_loglik(model, data):
    """Average observed log-likelihood by enumeration."""
    data = validate_data(Family.ISING, data)
    table = visible_log_marginal(model.theta, model.p)
    codes = data.astype(np.int64) @ (1 << np.arange(model.p - 1, -1, -1))
    return float(table[codes].mean())


def _train(model, data, config, positive, trace_loglik=False):
    data = validate_data(Family.ISING, data)
    if data.shape[1] != model.p:
        raise ContractError("data width does not match the visible layer")
    rng = make_rng(config.seed)
    model = model.copy()
    V, counts = _unique_rows(data)
    d = model.p + model.m
    trace = []
    for t in range(config.max_epochs):
        N = config.n_draws(t, d)
        grad = positive(model, V, counts, N, rng) - _negative_phase(model, config.z_mode, N, rng)
        model.theta = model.theta + config.gamma(t) * grad * model.mask
        if trace_loglik:
            trace.append(exact_marginal_loglik(model, data))
    model.trace = np.array(trace)
    return model


def rbm_fit(data, m, config=None, model=None, trace_loglik=False):
    """Full-likelihood RBM training with importance-sampling negative phase."""
    config = config or TrainConfig()
    model = model or init_model(data, m, "rbm", config.init_scale, seed=config.seed + 1)
    _require_rbm(model)
    return _train(model, data, config,
                  lambda mdl, V, c, N, rng: _positive_phase(mdl, V, c, config.z_mode, N, rng),
                  trace_loglik)


def bm_fit(data, m, mask="full", config=None, model=None, trace_loglik=False):
    """Monte Carlo EM for a Boltzmann machine with an arbitrary mask.

    The E-step estimates ``E[h | v]`` and ``E[h h' | v]`` for each distinct
    visible row by self-normalized importance sampling from ``diag(theta_{h|v})``
    (by enumeration in exact mode); the M-step is one gradient step with the
    importance estimate of ``grad log z`` over the joint model.
    """
    config = config or TrainConfig()
    model = model or init_model(data, m, mask, config.init_scale, seed=config.seed + 1)

    return _train(model, data, config,
                  lambda mdl, V, c, N, rng: _positive_phase(mdl, V, c, config.z_mode, N, rng,
                                                            force_is=True),
                  trace_loglik)


def cd_k_fit(data, m, k=1, config=None, model=None):
    """Contrastive divergence: ``k`` block-Gibbs alternations started at the data rows."""
    if k < 1:
        raise ConfigurationError("k must be at least 1")
    config = config or TrainConfig()
    data = validate_data(Family.ISING, data)
    model = (model or init_model(data, m, "rbm", config.init_scale, seed=config.seed + 1)).copy()
    _require_rbm(model)
    rng = make_rng(config.seed)
    p = model.p
    n = data.shape[0]
    d = p + m

    def stats(v, mu):
        M = np.zeros((d, d))
        M[:p, :p] = v.T @ v / n
        M[:p, p:] = v.T @ mu / n
        M[p:, :p] = M[:p, p:].T
        hh = mu.T @ mu / n
        np.fill_diagonal(hh, mu.mean(axis=0))
        M[p:, p:] = hh
        return _tied(M)

    for t in range(config.max_epochs):
        mu0 = rbm_conditional_hidden(model, data)
        v = data
        mu = mu0
        for _ in range(k):
            h = (rng.random(mu.shape) < mu).astype(float)
            v = (rng.random((n, p)) < rbm_conditional_visible(model, h)).astype(float)
            mu = rbm_conditional_hidden(model, v)
        grad = stats(data, mu0) - stats(v, mu)
        model.theta = model.theta + config.gamma(t) * grad * model.mask
    return model


def _gibbs_hidden(thetas, h, sweeps, rng):
    """Single-site Gibbs sweeps on stacked hidden Ising models ``thetas`` (U, m, m)."""
    m = h.shape[1]
    off = thetas - _zero_diag_diag(thetas)
    diag = np.diagonal(thetas, axis1=1, axis2=2)
    for _ in range(sweeps):
        for k in range(m):
            eta = diag[:, k] + 2.0 * np.einsum("ul,ul->u", off[:, k, :], h)
            h[:, k] = rng.random(h.shape[0]) < expit(eta)
    return h


def reconstruct(model, v_test, seed=None, sweeps=50):
    """Reconstruction probabilities for each row of ``v_test``.

    RBM: ``h ~ p(h | v)`` exactly, then ``P(v | h)``.  General BM: ``h`` from
    ``sweeps`` Gibbs sweeps on the hidden conditional Ising, then the visible
    node conditionals given ``h`` and the other test visibles.
    """
    v = np.atleast_2d(validate_data(Family.ISING, v_test))
    rng = make_rng(seed)
    p = model.p
    if model.m == 0:
        h = np.zeros((v.shape[0], 0))
    elif model.is_rbm:
        mu = rbm_conditional_hidden(model, v)
        h = (rng.random(mu.shape) < mu).astype(float)
        return rbm_conditional_visible(model, h)
    else:
        thetas = hidden_conditional_theta(model, v)
        h0 = (rng.random((v.shape[0], model.m)) < expit(np.diagonal(thetas, axis1=1, axis2=2)))
        h = _gibbs_hidden(thetas, h0.astype(float), sweeps, rng)
    vv = model.theta[:p, :p]
    lin = v @ (vv - np.diag(np.diag(vv)))
    eta = np.diag(vv) + 2.0 * lin + 2.0 * h @ model.weights.T
    return expit(eta)


def brier_loss(v_test, probs):
    """Mean squared difference between binary truths and predicted probabilities."""
    v = np.asarray(v_test, dtype=float)
    q = np.asarray(probs, dtype=float)
    if v.shape != q.shape:
        raise ContractError(f"shape mismatch {v.shape} vs {q.shape}")
    if np.any((q < 0) | (q > 1)):
        raise ContractError("probabilities must lie in [0, 1]")
    return float(np.mean((v - q) ** 2))


def visible_log_marginal(theta, p):
    """``log p(v)`` for all ``2**p`` visible states (ordered as ``binary_states(p)``).

    Hidden units are summed in closed form when the hidden block has no
    interactions and by enumeration otherwise.
    """
    theta = np.asarray(theta, dtype=float)
    d = theta.shape[0]
    m = d - p
    if p > MAX_ENUM_BITS or m > MAX_ENUM_BITS:
        raise ResourceError("enumeration cap exceeded for the visible or hidden layer")
    V = binary_states(p)
    vv = theta[:p, :p]
    base = log_q(Family.ISING, vv, V, check=False)
    if m == 0:
        out = base
    else:
        a = np.diag(theta)[p:] + 2.0 * V @ theta[:p, p:]
        hh = theta[p:, p:]
        if not np.any(hh - np.diag(np.diag(hh))):
            out = base + np.logaddexp(0.0, a).sum(axis=1)
        else:
            if p + m > MAX_ENUM_BITS:
                raise ResourceError("joint enumeration over visible and hidden units exceeds the cap")
            H = binary_states(m)
            off = hh - np.diag(np.diag(hh))
            pair = np.einsum("nk,kl,nl->n", H, off, H)
            out = base + logsumexp(a @ H.T + pair[None, :], axis=1)
    return out - logsumexp(out)


def total_variation_exact(theta_a, theta_b, p, m_a=None, m_b=None):
    """``sum_v |p_a(v) - p_b(v)|`` over ``{0,1}^p`` (the unhalved L1 distance, in [0, 2]).

    Conventional total variation is half this value.
    """
    theta_a = np.asarray(theta_a, dtype=float)
    theta_b = np.asarray(theta_b, dtype=float)
    if m_a is not None and theta_a.shape[0] != p + m_a:
        raise ContractError("theta_a does not match p + m_a")
    if m_b is not None and theta_b.shape[0] != p + m_b:
        raise ContractError("theta_b does not match p + m_b")
    pa = np.exp(visible_log_marginal(theta_a, p))
    pb = np.exp(visible_log_marginal(theta_b, p))
    return float(np.abs(pa - pb).sum())


def marginal_log_likelihood(model, v, n_probes=50, N=None, seed=None, mode="mc", probes=None):
    """Estimate ``log p(v)`` through ``log p(v, h) - log p(h | v)`` at probe hidden states.

    Each probe gets its own estimates of the joint ``log z`` and the
    conditional ``log z_{h|v}``; the per-probe values are combined by
    log-mean-exp.  With ``mode = "exact"`` both constants are enumerated and
    every probe gives the same value.
    """
    v = np.atleast_2d(validate_data(Family.ISING, v))
    rng = make_rng(seed)
    p, m = model.p, model.m
    d = p + m
    N = N or 10 * recommended_N(d, 100)
    if probes is None:
        probes = (rng.random((n_probes, m)) < 0.5).astype(float)
    probes = np.atleast_2d(np.asarray(probes, dtype=float)).reshape(-1, m)
    thetas = hidden_conditional_theta(model, v) if m else None
    vals = np.empty((probes.shape[0], v.shape[0]))
    for r, h in enumerate(probes):
        x = np.hstack([v, np.broadcast_to(h, (v.shape[0], m))])
        joint = log_q(Family.ISING, model.theta, x, check=False)
        if mode == "exact":
            lz = log_z_exact(Family.ISING, model.theta)
        else:
            rows = draw_independent(Family.ISING, np.diag(model.theta), N, rng)
            w = log_weights(Family.ISING, model.theta, rows)
            lz = log_z_phi(Family.ISING, model.theta) + logsumexp(w) - math.log(N)
        if m == 0:
            vals[r] = joint - lz
            continue
        cond = np.array([log_q(Family.ISING, t, h, check=False) for t in thetas])
        if mode == "exact":
            lzc = np.array([log_z_exact(Family.ISING, t) for t in thetas])
        else:
            diag = np.diagonal(thetas, axis1=1, axis2=2)
            rows = draw_independent(Family.ISING, diag, N, rng)
            w = log_weights(Family.ISING, thetas, rows)
            lzc = log_z_phi(Family.ISING, thetas) + logsumexp(w, axis=-1) - math.log(N)
        vals[r] = joint - lz - (cond - lzc)
    out = logsumexp(vals, axis=0) - math.log(probes.shape[0])
    return float(out[0]) if out.size == 1 else out


def probit_binary_data(n, p, rho=0.5, seed=None):
    """Binary rows ``1{z > 0}`` with ``z`` equicorrelated Gaussian (correlation ``rho``)."""
    rng = make_rng(seed)
    cov = np.full((p, p), rho)
    np.fill_diagonal(cov, 1.0)
    z = rng.multivariate_normal(np.zeros(p), cov, size=n)
    return (z > 0).astype(float)
