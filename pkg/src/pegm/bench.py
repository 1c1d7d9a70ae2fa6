"""Experiment harness: synthetic designs, metrics and experiment drivers.

Every driver is deterministic given its ``seed``: replication ``r`` of a
driver uses seeds derived with :func:`task_seed`, so reruns reproduce every
number exactly (wall-clock fields aside).
"""

import csv
import math
import platform
import time
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy

from ._rng import make_rng, task_seed
from .bayes import HMCConfig, PriorSpec, posterior_sample
from .boltzmann import (TrainConfig, cd_k_fit, init_model, make_mask, rbm_fit,
                        total_variation_exact)
from .errors import (ConfigurationError, ConstraintViolation, DivergenceError,
                     ResourceError)
from .families import Family, as_family, is_feasible, project, untie, variance_condition
from .importance import estimate, gibbs_grad_log_z
from .io import write_json
from .optimize import (FitConfig, bootstrap_ci, cross_validate, default_lambda_grid,
                       mle_fit, stability_select)
from .pseudo import (mple_cross_validate, mple_fit, mple_stability_select,
                     nodewise_fit_many)
from .samplers import accept_reject_sample, gibbs_sample, log_z_phi

__all__ = [
    "SimDesign",
    "MetricsReport",
    "SETTINGS",
    "generate_theta0",
    "generate_data",
    "mcc",
    "frobenius_sq",
    "ggm_theta",
    "ggm_oracle_suite",
    "run_simulation",
    "run_coverage",
    "run_boltzmann",
    "gibbs_vs_importance",
]

METHODS = ("pmle", "pmple", "bayes")

#: Simulation settings: (p, n) pairs with sparsity and edge magnitude
SETTINGS = {
    "ld": {"pn": [(3, 100), (5, 100)], "omega": 0.9, "eta": -0.8},
    "hd": {"pn": [(20, 100), (30, 100), (40, 100), (50, 100)], "omega": 0.05, "eta": -3.0},
    "uhd": {"pn": [(100, 200), (200, 400), (300, 600)], "omega": 0.05, "eta": -3.0},
}


@dataclass(frozen=True)
class SimDesign:
    family: str
    p: int
    n: int
    omega: float
    eta: float
    seed: int = 0
    R: int = 10
    diagonal: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.omega <= 1.0:
            raise ConfigurationError("omega must lie in [0, 1]")
        if self.p < 1 or self.n < 1 or self.R < 0:
            raise ConfigurationError("need p >= 1, n >= 1, R >= 0")
        as_family(self.family)


@dataclass
class MetricsReport:
    """Per-replication rows plus a per-group summary of means and sds."""

    name: str
    rows: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def summary(self, by=("method",), exclude=("replication", "seed")):
        groups = {}
        for row in self.rows:
            key = tuple(row.get(b) for b in by)
            groups.setdefault(key, []).append(row)
        out = {}
        for key, rows in groups.items():
            stats = {}
            for col in rows[0]:
                if col in by or col in exclude:
                    continue
                vals = [r[col] for r in rows if isinstance(r.get(col), (int, float, np.number))
                        and not isinstance(r.get(col), bool)]
                if not vals:
                    continue
                vals = np.asarray(vals, dtype=float)
                stats[col] = {"mean": float(np.mean(vals)),
                              "sd": float(np.std(vals, ddof=1)) if vals.size > 1 else 0.0,
                              "count": int(vals.size)}
            out["/".join(str(k) for k in key)] = stats
        return out

    def mean(self, column, **where):
        vals = [r[column] for r in self.rows
                if all(r.get(k) == v for k, v in where.items())]
        return float(np.mean(vals)) if vals else float("nan")

    def write(self, out_dir, by=("method",)):
        """Write ``<name>.json`` (summary, meta, rows) and ``<name>.csv`` (tidy rows)."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_json(out / f"{self.name}.json",
                   {"name": self.name, "meta": self.meta, "summary": self.summary(by),
                    "rows": self.rows})
        cols = []
        for r in self.rows:
            cols += [c for c in r if c not in cols]
        with open(out / f"{self.name}.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=cols)
            w.writeheader()
            for r in self.rows:
                w.writerow({c: r.get(c, "") for c in cols})
        return out


def _meta(seed, **extra):
    return {"seed": seed, "bit_generator": "Philox", "numpy": np.__version__,
            "scipy": scipy.__version__, "python": platform.python_version(), **extra}


# ---------------------------------------------------------------- generators

def generate_theta0(design, seed=None):
    """Sparse symmetric ``theta0``: each pair is an edge w.p. ``omega`` with value ``eta``."""
    family = as_family(design.family)
    if family is Family.PGM and design.eta > 0 and design.omega > 0:
        raise ConstraintViolation("PGM edges must be nonpositive (eta > 0 given)")
    rng = make_rng(design.seed if seed is None else seed)
    p = design.p
    j, k = np.triu_indices(p, 1)
    z = rng.random(j.size) < design.omega
    theta = np.zeros((p, p))
    theta[j[z], k[z]] = design.eta
    theta = theta + theta.T
    np.fill_diagonal(theta, design.diagonal)
    if not is_feasible(family, theta):
        raise ConstraintViolation("generated theta0 is infeasible")
    return theta


def generate_data(family, theta0, n, seed=None, method="gibbs", burn_in=2000, thin=10):
    """``n`` rows from ``p_theta0`` by single-chain Gibbs or (PGM) exact accept-reject."""
    family = as_family(family)
    if method == "gibbs":
        return gibbs_sample(family, theta0, n, burn_in=burn_in, thin=thin, seed=seed)
    if method == "accept_reject":
        return accept_reject_sample(family, theta0, n, seed=seed)[0]
    raise ConfigurationError(f"unknown data generation method {method!r}")


# ---------------------------------------------------------------- metrics

def _edge_vector(g, p=None):
    if hasattr(g, "adjacency"):
        g = g.adjacency()
    if isinstance(g, (list, tuple)) and p is not None:
        a = np.zeros((p, p), dtype=bool)
        for j, k in g:
            a[j, k] = a[k, j] = True
        g = a
    g = np.asarray(g)
    j, k = np.triu_indices(g.shape[0], 1)
    return (g[j, k] != 0) | (g[k, j] != 0)


def mcc(graph_true, graph_hat, p=None):
    """Matthews correlation between edge indicators over unordered pairs.

    Graphs are adjacency or parameter matrices (nonzero off-diagonal means an
    edge), :class:`GraphEstimate` objects, or edge lists with ``p`` given.
    Returns 0 when a margin of the confusion table is empty.
    """
    a = _edge_vector(graph_true, p)
    b = _edge_vector(graph_hat, p)
    if a.shape != b.shape:
        raise ConfigurationError("graphs have different dimensions")
    tp = float(np.sum(a & b))
    tn = float(np.sum(~a & ~b))
    fp = float(np.sum(~a & b))
    fn = float(np.sum(a & ~b))
    den = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    if den == 0:
        return 0.0
    return (tp * tn - fp * fn) / math.sqrt(den)


def frobenius_sq(theta_hat, theta0):
    d = np.asarray(theta_hat, dtype=float) - np.asarray(theta0, dtype=float)
    return float(np.sum(d * d))


# ---------------------------------------------------------------- Gaussian oracle

def ggm_theta(design, p, seed=0, max_tries=10000):
    """Precision matrix for the Gaussian-oracle designs.

    ``"band"``: 3 on the diagonal, 0.3 on the first off-diagonals.
    ``"mixed"``: covariance with 2 on the diagonal and U(-0.6, 0.6) elsewhere,
    redrawn until positive definite with a feasible variance condition; the
    precision is its inverse.
    """
    if design == "band":
        theta = 3.0 * np.eye(p)
        idx = np.arange(p - 1)
        theta[idx, idx + 1] = theta[idx + 1, idx] = 0.3
    elif design == "mixed":
        rng = make_rng(seed)
        for _ in range(max_tries):
            u = rng.uniform(-0.6, 0.6, (p, p))
            sigma = np.triu(u, 1)
            sigma = sigma + sigma.T + 2.0 * np.eye(p)
            if not is_feasible(Family.GAUSSIAN, sigma):
                continue
            theta = np.linalg.inv(sigma)
            theta = 0.5 * (theta + theta.T)
            if variance_condition(Family.GAUSSIAN, theta, 0.1):
                break
        else:
            raise ConstraintViolation("could not draw a feasible mixed-covariance design")
    else:
        raise ConfigurationError(f"unknown Gaussian design {design!r}")
    if not variance_condition(Family.GAUSSIAN, theta, 0.1):
        raise ConstraintViolation(f"{design} design violates the variance condition")
    return theta


def _ggm_reference(theta):
    """Exact ``z(theta)/z(phi)`` and ``grad log z`` with an inverse self-check."""
    p = theta.shape[0]
    inv = np.linalg.inv(theta)
    err = np.max(np.abs(theta @ inv - np.eye(p)))
    if err > 1e-10:
        raise ConstraintViolation(f"precision inverse self-check failed ({err:.2e})")
    _, logdet = np.linalg.slogdet(theta)
    log_z = 0.5 * p * math.log(2 * math.pi) - 0.5 * logdet
    ratio = math.exp(log_z - log_z_phi(Family.GAUSSIAN, theta))
    return ratio, -0.5 * inv


def ggm_oracle_suite(design="band", p=50, N_list=(5000,), R=100, seed=0):
    """Replicated accuracy of the importance estimates on Gaussian designs.

    Metrics per replication: ``se_z = (z(theta)/z(phi) - T_z)^2``,
    ``fr_grad_z`` and ``fr_grad_log_z``, the Frobenius norms of the errors in
    ``grad z / z(phi)`` and ``grad log z`` divided by ``p^2``.  Gradients are
    compared entrywise (untied).
    """
    theta = ggm_theta(design, p, seed)
    ratio, g_true = _ggm_reference(theta)
    report = MetricsReport(name=f"ggm_{design}_p{p}",
                           meta=_meta(seed, design=design, p=p, N_list=list(N_list), R=R))
    for N in N_list:
        for r in range(R):
            s = task_seed(seed, 1_000_003 * int(N) + r)
            t0 = time.perf_counter()
            out = estimate(Family.GAUSSIAN, theta, int(N), seed=s)
            ms = 1e3 * (time.perf_counter() - t0)
            g_hat = untie(out.grad_log_z)
            report.rows.append({
                "design": design, "p": p, "N": int(N), "replication": r, "seed": s,
                "se_z": (ratio - out.z_ratio) ** 2,
                "fr_grad_z": float(np.linalg.norm(ratio * g_true - out.z_ratio * g_hat)) / p ** 2,
                "fr_grad_log_z": float(np.linalg.norm(g_true - g_hat)) / p ** 2,
                "ess": out.ess, "runtime_ms": ms,
            })
    return report


def gibbs_vs_importance(p=100, N=5000, seed=0, R=5, design="band", gibbs_draws=None):
    """``grad log z`` accuracy of importance sampling vs a Gibbs average at equal wall-clock.

    Each replication times the importance estimate with ``N`` draws, then
    runs a single-chain Gibbs sampler for the same wall-clock budget
    (discarding the first half of its sweeps) and averages ``grad log q``
    over the retained states.  A fixed ``gibbs_draws`` replaces the
    wall-clock budget, which makes the whole report seed-deterministic.
    """
    theta = ggm_theta(design, p, seed)
    _, g_true = _ggm_reference(theta)
    report = MetricsReport(name=f"gibbs_vs_is_{design}_p{p}", meta=_meta(seed, N=N, p=p))
    for r in range(R):
        s = task_seed(seed, r)
        t0 = time.perf_counter()
        out = estimate(Family.GAUSSIAN, theta, N, seed=s)
        budget = time.perf_counter() - t0
        rng = make_rng(task_seed(seed, 10_000 + r))
        states = []
        x = None
        t0 = time.perf_counter()
        while True:
            x = gibbs_sample(Family.GAUSSIAN, theta, 1, burn_in=0, thin=1, seed=rng, init=x)
            states.append(x[0])
            if gibbs_draws is not None:
                if len(states) >= gibbs_draws:
                    break
            elif time.perf_counter() - t0 >= budget:
                break
        kept = np.array(states[len(states) // 2:])
        g_gibbs = untie(gibbs_grad_log_z(Family.GAUSSIAN, theta, kept))
        for method, g, extra in (("importance", untie(out.grad_log_z), N),
                                 ("gibbs", g_gibbs, len(states))):
            report.rows.append({"method": method, "replication": r, "seed": s,
                                "fr_grad_log_z": float(np.linalg.norm(g_true - g)) / p ** 2,
                                "draws": extra, "budget_ms": 1e3 * budget})
    return report


# ---------------------------------------------------------------- graph-recovery simulations

def _bayes_graph(draws, level=0.95):
    lo, hi = draws.credible_interval(level)
    return (lo > 0) | (hi < 0)


def _fit_method(method, family, data, lowdim, seed, fit_config, hmc_config, bayes_draws,
                cv):
    if method == "pmle":
        cfg = replace(fit_config, seed=seed)
        if lowdim:
            return mle_fit(family, data, cfg).theta_hat, None
        grid = default_lambda_grid(family, data)
        graph = stability_select(family, data, grid, 0.6, cfg)
        if not cv:
            return None, graph
        _, path = cross_validate(family, data, grid, 5, cfg)
        best = int(np.argmax([f.diagnostics["cv_loglik"] for f in path]))
        return path[best].theta_hat, graph
    if method == "pmple":
        if lowdim:
            return mple_fit(family, data, 0.0), None
        graph = mple_stability_select(family, data)
        if not cv:
            return None, graph
        _, theta = mple_cross_validate(family, data, seed=seed)
        return theta, graph
    if method == "bayes":
        draws = posterior_sample(family, data, PriorSpec(mode="laplace"), n_draws=bayes_draws,
                                 burn_in=bayes_draws // 2, config=replace(hmc_config, seed=seed))
        return draws.mean(), (None if lowdim else _bayes_graph(draws))
    raise ConfigurationError(f"unknown method {method!r}; choose from {METHODS}")


def run_simulation(setting, family, methods=METHODS, seed=0, R=10, p_list=None,
                   allow_long=False, fit_config=None, hmc_config=None, bayes_draws=1000,
                   cv=True, out_dir=None):
    """Generate, fit and score replicated datasets for one simulation setting.

    In the low-dimensional setting the estimators are unpenalized (``pmle``
    is the MLE, ``pmple`` the MPLE) and only the squared Frobenius error is
    reported.  Otherwise each method reports the MCC of its stability-selected
    graph over the default penalty grid and, when ``cv`` is set, its
    Frobenius error at the cross-validated penalty.  The Bayes graph keeps
    the edges whose 95% credible interval excludes zero.

    ``fit_config`` defaults to :class:`FitConfig` with ``mc_n = 500 p``
    outside the low-dimensional setting.
    """
    setting = setting.lower()
    if setting not in SETTINGS:
        raise ConfigurationError(f"unknown setting {setting!r}")
    if setting == "uhd" and not allow_long:
        raise ResourceError("UHD runs take hours; pass allow_long=True (--allow-long)")
    family = as_family(family)
    methods = [m for m in methods]
    for m in methods:
        if m not in METHODS:
            raise ConfigurationError(f"unknown method {m!r}; choose from {METHODS}")
    cfg_set = SETTINGS[setting]
    hmc_config = hmc_config or HMCConfig()
    report = MetricsReport(name=f"sim_{setting}_{family.value}",
                           meta=_meta(seed, setting=setting, family=family.value,
                                      methods=methods, R=R))
    if not methods:
        return report
    lowdim = setting == "ld"
    for (p, n) in cfg_set["pn"]:
        if p_list is not None and p not in p_list:
            continue
        for r in range(R):
            s = task_seed(seed, 1000 * p + r)
            design = SimDesign(family.value, p, n, cfg_set["omega"], cfg_set["eta"], seed=s, R=R)
            theta0 = generate_theta0(design)
            data = generate_data(family, theta0, n, seed=task_seed(s, 1))
            cfg = fit_config or FitConfig(mc_n=None if lowdim else 500 * p)
            for method in methods:
                t0 = time.perf_counter()
                row = {"setting": setting, "family": family.value, "p": p, "n": n,
                       "method": method, "replication": r, "seed": s}
                try:
                    with warnings.catch_warnings():
                        warnings.simplefilter("ignore", RuntimeWarning)
                        theta_hat, graph = _fit_method(method, family, data, lowdim,
                                                       task_seed(s, 2), cfg,
                                                       hmc_config, bayes_draws, cv)
                    if theta_hat is not None:
                        row["frobenius_sq"] = frobenius_sq(theta_hat, theta0)
                    if graph is not None:
                        row["mcc"] = mcc(theta0, graph)
                    row["status"] = "ok"
                except DivergenceError as exc:
                    row["status"] = f"diverged: {exc}"
                row["runtime_ms"] = 1e3 * (time.perf_counter() - t0)
                report.rows.append(row)
    if out_dir is not None:
        report.write(out_dir, by=("p", "method"))
    return report


# ---------------------------------------------------------------- bootstrap coverage

def _mple_bootstrap(family, data, B, level, seed, max_iter=2000):
    """Percentile intervals from unpenalized MPLE refits.

    Resamples whose node-wise fits do not converge (separation) keep the
    iterate reached after ``max_iter`` steps, mirroring the capped
    likelihood ascent; their number is returned.
    """
    n = data.shape[0]
    rng = make_rng(task_seed(seed, 31337))
    resamples = [data[rng.integers(0, n, n)] for _ in range(B)]
    fits = nodewise_fit_many(family, resamples, 0.0, max_iter=max_iter, strict=False)
    separated = sum(not f.converged.all() for f in fits)
    est = np.array([project(family, f.theta()) for f in fits])
    a = (1.0 - level) / 2.0
    return (np.quantile(est, a, axis=0, method="inverted_cdf"),
            np.quantile(est, 1 - a, axis=0, method="inverted_cdf"), separated)


def run_coverage(family="ising", p=3, n=100, B=200, R=30, edge_value=-1.0, level=0.95,
                 seed=0, fit_config=None, methods=("mle", "mple")):
    """Coverage and width of percentile bootstrap intervals for the edge parameters.

    ``theta0`` has ``edge_value`` on every off-diagonal entry and zero
    diagonal.  Coverage and width are averaged over the ``p(p-1)/2`` edges.
    """
    family = as_family(family)
    fit_config = fit_config or FitConfig()
    theta0 = np.full((p, p), float(edge_value))
    np.fill_diagonal(theta0, 0.0)
    j, k = np.triu_indices(p, 1)
    report = MetricsReport(name=f"coverage_{family.value}_p{p}",
                           meta=_meta(seed, p=p, n=n, B=B, R=R, edge_value=edge_value))
    for r in range(R):
        s = task_seed(seed, r)
        data = generate_data(family, theta0, n, seed=s)
        for method in methods:
            t0 = time.perf_counter()
            separated = 0
            try:
                if method == "mle":
                    lo, hi = bootstrap_ci(family, data, B, level,
                                          replace(fit_config, seed=task_seed(s, 5)))
                elif method == "mple":
                    lo, hi, separated = _mple_bootstrap(family, data, B, level, task_seed(s, 5))
                else:
                    raise ConfigurationError(f"unknown coverage method {method!r}")
            except DivergenceError as exc:
                report.rows.append({"method": method, "replication": r, "seed": s,
                                    "status": f"diverged: {exc}"})
                continue
            cover = (lo[j, k] <= theta0[j, k]) & (theta0[j, k] <= hi[j, k])
            report.rows.append({"method": method, "replication": r, "seed": s,
                                "coverage": float(np.mean(cover)),
                                "avg_width": float(np.mean(hi[j, k] - lo[j, k])),
                                "separated_resamples": separated, "status": "ok",
                                "runtime_ms": 1e3 * (time.perf_counter() - t0)})
    return report


# ---------------------------------------------------------------- Boltzmann machines

def _random_rbm(p, m, rng):
    """Bipartite ``theta0``: each allowed entry is 0 w.p. 1/2, else U(-1, 1)."""
    d = p + m
    mask = make_mask("rbm", p, m)
    vals = np.where(rng.random((d, d)) < 0.5, 0.0, rng.uniform(-1.0, 1.0, (d, d)))
    theta = np.triu(vals * mask)
    return theta + np.triu(theta, 1).T


def _sample_visible(theta, p, n, rng):
    from .exact import ising_exact_sample
    return ising_exact_sample(theta, n, rng)[:, :p]


def run_boltzmann(p=2, m0=2, m=4, n=1000, R=10, seed=0, config=None, cd_k=1,
                  methods=("fl", "cd")):
    """Total variation between fitted and true visible laws for RBM training methods.

    The true model is a sparse RBM with ``m0`` hidden units and the data are
    exact draws of its visible units.  ``fl`` is full-likelihood training with
    Monte Carlo plug-ins; ``cd`` is CD-``k``.
    The reported ``tv`` is the L1 distance ``sum_v |p(v) - p_hat(v)|``.
    """
    config = config or TrainConfig()
    report = MetricsReport(name=f"boltzmann_p{p}_m{m}",
                           meta=_meta(seed, p=p, m0=m0, m=m, n=n, R=R))
    for r in range(R):
        s = task_seed(seed, r)
        rng = make_rng(s)
        truth = _random_rbm(p, m0, rng)
        data = _sample_visible(truth, p, n, rng)
        start = init_model(data, m, make_mask("rbm", p, m), config.init_scale, task_seed(s, 3))
        for method in methods:
            t0 = time.perf_counter()
            cfg = replace(config, seed=task_seed(s, 4))
            if method == "fl":
                fit = rbm_fit(data, m, cfg, model=start.copy())
            elif method == "cd":
                fit = cd_k_fit(data, m, cd_k, cfg, model=start.copy())
            else:
                raise ConfigurationError(f"unknown Boltzmann method {method!r}")
            report.rows.append({"method": method, "replication": r, "seed": s,
                                "tv": total_variation_exact(truth, fit.theta, p, m0, m),
                                "runtime_ms": 1e3 * (time.perf_counter() - t0)})
    return report
