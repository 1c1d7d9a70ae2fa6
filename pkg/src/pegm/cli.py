"""Command-line interface.

Numerical modules are imported lazily so that ``PEGM_NUM_THREADS`` can cap
the BLAS thread pools before numpy loads them.
"""

import argparse
import os
import sys
import time

THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


def _apply_thread_env():
    n = os.environ.get("PEGM_NUM_THREADS")
    if n:
        for var in THREAD_VARS:
            os.environ.setdefault(var, n)


def _floats(text):
    return [float(x) for x in text.split(",") if x.strip()]


def _emit(obj, out):
    from .io import to_jsonable, write_json
    if out:
        write_json(out, obj)
    else:
        import json
        json.dump(to_jsonable(obj), sys.stdout, indent=2)
        sys.stdout.write("\n")


def _fit_config(args, **extra):
    from .optimize import FitConfig
    kw = dict(seed=args.seed, max_iters=args.max_iters, tol=args.tol, step_size=args.step_size,
              penalize_diagonal=args.penalize_diagonal, z_mode=args.z_mode)
    if args.mc_n is not None:
        kw["mc_n"] = args.mc_n
    kw.update(extra)
    return FitConfig(**kw)


def _fit_payload(fit):
    return {"theta_hat": fit.theta_hat, "lambda": fit.lam, "iterations": fit.iterations,
            "converged": fit.converged, "trace": fit.trace,
            "diagnostics": {k: v for k, v in fit.diagnostics.items()}}


def _maybe_theta_out(args, theta):
    if getattr(args, "theta_out", None):
        from .io import write_theta_csv
        write_theta_csv(args.theta_out, theta)


# ---------------------------------------------------------------- commands

def cmd_sample(args):
    from .io import read_theta_csv, write_data_csv
    from .samplers import accept_reject_sample, gibbs_sample, sample_independence
    theta = read_theta_csv(args.theta)
    if args.method == "independence":
        x = sample_independence(args.family, theta, args.n, seed=args.seed).rows
    elif args.method == "gibbs":
        x = gibbs_sample(args.family, theta, args.n, burn_in=args.burn_in, thin=args.thin,
                         seed=args.seed)
    else:
        x, _ = accept_reject_sample(args.family, theta, args.n, seed=args.seed)
    write_data_csv(args.out, x)


def cmd_estimate(args):
    from .importance import estimate
    from .io import read_theta_csv
    theta = read_theta_csv(args.theta)
    t0 = time.perf_counter()
    out = estimate(args.family, theta, args.n, seed=args.seed)
    ms = 1e3 * (time.perf_counter() - t0)
    value = {"z": out.z_ratio, "grad": out.grad_z_ratio, "gradlogz": out.grad_log_z}[args.metric]
    _emit({"metric": args.metric, "estimate": value, "log_z_hat": out.log_z_hat,
           "ess": out.ess, "N": out.N, "runtime_ms": ms}, args.json_out)


def cmd_fit(args):
    from .io import read_data_csv
    from .optimize import penalized_fit
    data = read_data_csv(args.data)
    lam = getattr(args, "lam", 0.0)
    fit = penalized_fit(args.family, data, lam, _fit_config(args))
    _maybe_theta_out(args, fit.theta_hat)
    _emit(_fit_payload(fit), args.json_out)


def cmd_cv(args):
    from .io import read_data_csv
    from .optimize import cross_validate
    data = read_data_csv(args.data)
    lam, path = cross_validate(args.family, data, _floats(args.lambda_grid), args.k,
                               _fit_config(args))
    best = next(f for f in path if f.lam == lam)
    _maybe_theta_out(args, best.theta_hat)
    _emit({"lambda_star": lam, "theta_hat": best.theta_hat,
           "cv_loglik": {f.lam: f.diagnostics["cv_loglik"] for f in path},
           "trace": best.trace, "diagnostics": best.diagnostics}, args.json_out)


def cmd_stability(args):
    from .io import read_data_csv
    from .optimize import stability_select
    data = read_data_csv(args.data)
    est = stability_select(args.family, data, _floats(args.lambda_grid), args.pi_thr,
                           _fit_config(args))
    _emit({"edges": est.edges, "selection_frequency": est.selection_frequency,
           "pi_thr": est.pi_thr, "lambda_grid": est.lambda_grid}, args.json_out)


def cmd_bootstrap(args):
    from .io import read_data_csv
    from .optimize import bootstrap_ci
    data = read_data_csv(args.data)
    ci = bootstrap_ci(args.family, data, args.b, args.level, _fit_config(args))
    _emit({"lower": ci.lower, "upper": ci.upper, "level": ci.level, "B": args.b},
          args.json_out)


def cmd_mple(args):
    from .io import read_data_csv
    from .pseudo import mple_fit, mple_stability_select
    data = read_data_csv(args.data)
    if args.stability:
        grid = _floats(args.lambda_grid) if args.lambda_grid else None
        est = mple_stability_select(args.family, data, grid, args.pi_thr)
        _emit({"edges": est.edges, "selection_frequency": est.selection_frequency,
               "pi_thr": est.pi_thr, "lambda_grid": est.lambda_grid}, args.json_out)
        return
    theta = mple_fit(args.family, data, args.lam)
    _maybe_theta_out(args, theta)
    _emit({"theta_hat": theta, "lambda": args.lam}, args.json_out)


def cmd_bayes(args):
    import numpy as np
    from .bayes import HMCConfig, PriorSpec, posterior_sample
    from .io import read_data_csv
    data = read_data_csv(args.data)
    cfg = HMCConfig(seed=args.seed, step_size=args.step_size, n_leapfrog=args.leapfrog,
                    z_mode=args.z_mode)
    post = posterior_sample(args.family, data, PriorSpec(mode=args.prior), args.draws,
                            args.burn_in, cfg)
    lo, hi = post.credible_interval(args.level)
    if args.draws_out:
        p = data.shape[1]
        j, k = np.triu_indices(p)
        np.savetxt(args.draws_out, post.draws[:, j, k], delimiter=",", fmt="%.10g",
                   header=",".join(f"theta_{a + 1}_{b + 1}" for a, b in zip(j, k)),
                   comments="")
    _emit({"posterior_mean": post.mean(), "lower": lo, "upper": hi, "level": args.level,
           "acceptance_rate": post.acceptance_rate, "step_size": post.step_size,
           "aborted_trajectories": post.aborted}, args.json_out)


def _save_model(model, out):
    from pathlib import Path
    from .io import write_json, write_theta_csv
    out = Path(out)
    theta_path = out.with_suffix(".theta.csv")
    write_theta_csv(theta_path, model.theta)
    write_json(out, {"p": model.p, "m": model.m, "mask": model.mask_spec,
                     "mask_matrix": model.mask.astype(int), "theta_csv": theta_path.name})


def _load_model(path):
    import json
    from pathlib import Path
    import numpy as np
    from .boltzmann import BoltzmannModel
    from .io import read_theta_csv
    path = Path(path)
    meta = json.loads(path.read_text())
    theta = read_theta_csv(path.parent / meta["theta_csv"])
    return BoltzmannModel(meta["p"], meta["m"], theta, np.array(meta["mask_matrix"], bool),
                          meta["mask"])


def cmd_train(args, bm):
    from .boltzmann import TrainConfig, bm_fit, cd_k_fit, rbm_fit
    from .io import read_data_csv
    data = read_data_csv(args.data)
    cfg = TrainConfig(seed=args.seed, max_epochs=args.epochs, step_size=args.step_size,
                      z_mode=args.z_mode)
    if bm:
        model = bm_fit(data, args.m, args.mask, cfg)
    elif args.cd_k:
        model = cd_k_fit(data, args.m, args.cd_k, cfg)
    else:
        model = rbm_fit(data, args.m, cfg)
    _save_model(model, args.out)


def cmd_bm_eval(args):
    import numpy as np
    from .boltzmann import (brier_loss, marginal_log_likelihood, reconstruct,
                            total_variation_exact)
    from .io import read_data_csv
    model = _load_model(args.model)
    test = read_data_csv(args.test)
    probs = reconstruct(model, test, seed=args.seed)
    out = {"brier": brier_loss(test, probs)}
    ll = marginal_log_likelihood(model, test, n_probes=args.probes, seed=args.seed,
                                 mode=args.z_mode)
    out["mean_marginal_loglik"] = float(np.mean(ll))
    if args.reference:
        ref = _load_model(args.reference)
        out["tv"] = total_variation_exact(ref.theta, model.theta, model.p)
    _emit(out, args.json_out)


def cmd_bench_ggm(args):
    from .bench import ggm_oracle_suite, gibbs_vs_importance
    rep = ggm_oracle_suite(args.design, args.p, [int(x) for x in _floats(args.n_list)],
                           args.r, args.seed)
    if args.out_dir:
        rep.write(args.out_dir, by=("N",))
    summary = {"oracle": rep.summary(by=("N",))}
    if args.gibbs:
        cmp_ = gibbs_vs_importance(args.p, int(_floats(args.n_list)[0]), args.seed,
                                   design=args.design)
        if args.out_dir:
            cmp_.write(args.out_dir)
        summary["gibbs_vs_importance"] = cmp_.summary()
    _emit(summary, args.json_out)


def cmd_bench_sim(args):
    from .bench import run_coverage, run_simulation
    if args.coverage:
        rep = run_coverage(args.family, args.p or 3, 100, args.b, args.r, seed=args.seed)
        if args.out_dir:
            rep.write(args.out_dir)
        _emit(rep.summary(), args.json_out)
        return
    methods = [m for m in args.methods.split(",") if m]
    p_list = [args.p] if args.p else None
    rep = run_simulation(args.setting, args.family, methods, args.seed, args.r, p_list,
                         args.allow_long, bayes_draws=args.draws, cv=not args.no_cv,
                         out_dir=args.out_dir)
    _emit(rep.summary(by=("p", "method")), args.json_out)


def cmd_bench_bm(args):
    from .bench import run_boltzmann
    rep = run_boltzmann(args.p, args.m0, args.m, args.n, args.r, args.seed)
    if args.out_dir:
        rep.write(args.out_dir)
    _emit(rep.summary(), args.json_out)


# ---------------------------------------------------------------- parser

def _common(sp, family=True):
    if family:
        sp.add_argument("--family", choices=["ising", "pgm", "gaussian"], default="ising")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--json-out", help="write JSON here instead of stdout")


def _fit_flags(sp):
    sp.add_argument("--data", required=True)
    sp.add_argument("--max-iters", type=int, default=2000)
    sp.add_argument("--tol", type=float, default=1e-4)
    sp.add_argument("--step-size", type=float, default=1.0)
    sp.add_argument("--mc-n", type=int)
    sp.add_argument("--z-mode", choices=["mc", "exact"], default="mc")
    sp.add_argument("--penalize-diagonal", action="store_true")
    sp.add_argument("--theta-out")


def build_parser():
    ap = argparse.ArgumentParser(prog="pegm", description=(
        "Likelihood-based inference for pairwise exponential-family graphical models"))
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("sample", help="draw data from a model")
    _common(sp)
    sp.add_argument("--theta", required=True)
    sp.add_argument("--method", choices=["independence", "gibbs", "accept-reject"],
                    default="gibbs")
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--burn-in", type=int, default=2000)
    sp.add_argument("--thin", type=int, default=10)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_sample)

    sp = sub.add_parser("estimate", help="importance estimates of z and its gradients")
    _common(sp)
    sp.add_argument("--theta", required=True)
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--metric", choices=["z", "grad", "gradlogz"], default="gradlogz")
    sp.set_defaults(func=cmd_estimate)

    sp = sub.add_parser("fit", help="maximum likelihood estimate")
    _common(sp)
    _fit_flags(sp)
    sp.set_defaults(func=cmd_fit, lam=0.0)

    sp = sub.add_parser("fit-l1", help="l1-penalized likelihood estimate")
    _common(sp)
    _fit_flags(sp)
    sp.add_argument("--lambda", dest="lam", type=float, required=True)
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("cv", help="K-fold cross-validation over a penalty grid")
    _common(sp)
    _fit_flags(sp)
    sp.add_argument("--lambda-grid", required=True, help="comma-separated penalties")
    sp.add_argument("--k", type=int, default=5)
    sp.set_defaults(func=cmd_cv)

    sp = sub.add_parser("stability", help="edge selection frequencies over a penalty grid")
    _common(sp)
    _fit_flags(sp)
    sp.add_argument("--lambda-grid", required=True)
    sp.add_argument("--pi-thr", type=float, default=0.6)
    sp.set_defaults(func=cmd_stability)

    sp = sub.add_parser("bootstrap", help="percentile bootstrap intervals for the MLE")
    _common(sp)
    _fit_flags(sp)
    sp.add_argument("--b", type=int, default=500)
    sp.add_argument("--level", type=float, default=0.95)
    sp.set_defaults(func=cmd_bootstrap)

    sp = sub.add_parser("mple", help="node-wise pseudo-likelihood estimate")
    _common(sp)
    sp.add_argument("--data", required=True)
    sp.add_argument("--lambda", dest="lam", type=float, default=0.0)
    sp.add_argument("--stability", action="store_true")
    sp.add_argument("--lambda-grid", help="per-observation penalties (default: data-driven)")
    sp.add_argument("--pi-thr", type=float, default=0.6)
    sp.add_argument("--theta-out")
    sp.set_defaults(func=cmd_mple)

    sp = sub.add_parser("bayes", help="posterior sampling by constrained HMC")
    _common(sp)
    sp.add_argument("--data", required=True)
    sp.add_argument("--prior", choices=["lowdim", "laplace"], default="lowdim")
    sp.add_argument("--draws", type=int, default=1000)
    sp.add_argument("--burn-in", type=int, default=500)
    sp.add_argument("--step-size", type=float, default=0.05)
    sp.add_argument("--leapfrog", type=int, default=10)
    sp.add_argument("--z-mode", choices=["mc", "exact"], default="mc")
    sp.add_argument("--level", type=float, default=0.95)
    sp.add_argument("--draws-out", help="CSV dump of every draw (upper triangle)")
    sp.set_defaults(func=cmd_bayes)

    for name, bm in (("rbm-train", False), ("bm-train", True)):
        sp = sub.add_parser(name, help=f"train a {'Boltzmann machine' if bm else 'RBM'}")
        _common(sp, family=False)
        sp.add_argument("--data", required=True)
        sp.add_argument("--m", type=int, required=True)
        sp.add_argument("--mask", default="full" if bm else "rbm",
                        help="rbm, full or dbm:<m1>,<m2>,...")
        sp.add_argument("--epochs", type=int, default=1000)
        sp.add_argument("--step-size", type=float, default=0.5)
        sp.add_argument("--z-mode", choices=["mc", "exact"], default="mc")
        if not bm:
            sp.add_argument("--cd-k", type=int, default=0, help="train by CD-k instead")
        sp.add_argument("--out", required=True, help="model JSON path")
        sp.set_defaults(func=lambda a, bm=bm: cmd_train(a, bm))

    sp = sub.add_parser("bm-eval", help="Brier loss, marginal likelihood and TV of a model")
    _common(sp, family=False)
    sp.add_argument("--model", required=True)
    sp.add_argument("--test", required=True)
    sp.add_argument("--reference", help="model JSON for an exact TV comparison")
    sp.add_argument("--probes", type=int, default=50)
    sp.add_argument("--z-mode", choices=["mc", "exact"], default="mc")
    sp.set_defaults(func=cmd_bm_eval)

    sp = sub.add_parser("bench-ggm", help="Gaussian-oracle accuracy suite")
    _common(sp, family=False)
    sp.add_argument("--design", choices=["band", "mixed"], default="band")
    sp.add_argument("--p", type=int, default=50)
    sp.add_argument("--n-list", default="5000")
    sp.add_argument("--r", type=int, default=100)
    sp.add_argument("--gibbs", action="store_true", help="also run the equal-time Gibbs comparison")
    sp.add_argument("--out-dir")
    sp.set_defaults(func=cmd_bench_ggm)

    sp = sub.add_parser("bench-sim", help="simulation tables (estimation, structure, coverage)")
    _common(sp)
    sp.add_argument("--setting", choices=["ld", "hd", "uhd"], default="ld")
    sp.add_argument("--methods", default="pmle,pmple,bayes")
    sp.add_argument("--p", type=int, help="restrict to one dimension of the setting")
    sp.add_argument("--r", type=int, default=10)
    sp.add_argument("--draws", type=int, default=1000, help="posterior draws for bayes")
    sp.add_argument("--no-cv", action="store_true", help="skip CV Frobenius in hd/uhd")
    sp.add_argument("--allow-long", action="store_true")
    sp.add_argument("--coverage", action="store_true", help="run the bootstrap coverage study")
    sp.add_argument("--b", type=int, default=500)
    sp.add_argument("--out-dir")
    sp.set_defaults(func=cmd_bench_sim)

    sp = sub.add_parser("bench-bm", help="RBM training: full likelihood vs CD")
    _common(sp, family=False)
    sp.add_argument("--p", type=int, default=2)
    sp.add_argument("--m0", type=int, default=2)
    sp.add_argument("--m", type=int, default=4)
    sp.add_argument("--n", type=int, default=1000)
    sp.add_argument("--r", type=int, default=10)
    sp.add_argument("--out-dir")
    sp.set_defaults(func=cmd_bench_bm)
    return ap


def main(argv=None):
    _apply_thread_env()
    args = build_parser().parse_args(argv)
    from .errors import PEGMError
    try:
        args.func(args)
    except PEGMError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
