"""Command-line interface: ``grr <command> [options]``.

Exit status is 0 on success, 2 on usage errors and 1 on runtime errors.
Commands that draw random numbers (``bootstrap``, ``simulate``) refuse to run
without ``--seed``.
"""
from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import __version__
from .bootstrap import BootstrapConfig, run_bootstrap
from .cqr import variance_convergence_check
from .densities import make_density
from .errors import GRRError, InvalidParameterError
from .io import (
    RunManifest,
    destandardize,
    file_digest,
    load_csv,
    load_manifest,
    load_result,
    resolve_data_path,
    save_result,
)
from .optimizer import FitOptions, fit
from .scores import (
    builtin_generator,
    flatten,
    generator_from_spec,
    score_table,
)
from .simulation import (
    METHODS,
    NoiseModel,
    SimConfig,
    SolverSettings,
    ar1_covariance,
    canonical_method,
    run_table,
    table_grid,
)

NOISE_CHOICES = ("normal", "laplace", "cauchy", "mixture", "smoothed-uniform")


# ----------------------------------------------------------------------------- helpers

def _add_data_args(p):
    p.add_argument("--data", required=True,
                   help="numeric CSV file ('@sample' for the bundled example)")
    p.add_argument("--no-header", action="store_true", help="the CSV has no header row")
    p.add_argument("--response", default=None,
                   help="response column name or 0-based index (default: last column)")
    p.add_argument("--standardize", action="store_true",
                   help="centre and scale all columns before fitting")


def _add_solver_args(p):
    p.add_argument("--score", default="wilcoxon",
                   help="wilcoxon | sign | sinusoidal | single-level:TAU | optimal:DENSITY | "
                        "optimal-est (default: wilcoxon)")
    p.add_argument("--t1", type=int, default=50, help="stage-one iterations (default 50)")
    p.add_argument("--t2", type=int, default=150, help="stage-two iterations (default 150)")
    p.add_argument("--zeta", type=float, default=2.0 / 3.0, help="step decay exponent")
    p.add_argument("--step-scale", type=float, default=1.0, help="step constant C")
    p.add_argument("--step", type=float, default=None,
                   help="stage-two constant step (default C * t1^-zeta)")
    p.add_argument("--normalize-first-step", action="store_true",
                   help="scale the first stage-one update to unit length")


def _fit_options(args):
    return FitOptions(t1=args.t1, zeta=args.zeta, step_scale=args.step_scale, t2=args.t2,
                      step=args.step, normalize_first_step=args.normalize_first_step)


def _load(args):
    path = resolve_data_path(args.data)
    data = load_csv(path, has_header=not args.no_header, response_column=args.response,
                    standardize=args.standardize)
    return path, data


def _resolve_score(spec, data, opts):
    name = spec.split(":", 1)[0].replace("_", "-")
    if name == "optimal-est":
        pilot = fit(data, builtin_generator("wilcoxon"), opts)
        return generator_from_spec(spec, residuals=data.residuals(pilot.beta))
    if name == "optimal":
        density = spec.split(":", 1)[1] if ":" in spec else ""
        return generator_from_spec("optimal", density=_density(density))
    return generator_from_spec(spec)


def _density(name):
    if not name:
        raise InvalidParameterError("optimal:DENSITY needs a density name")
    name = name.replace("-", "_")
    if name == "mixture":
        name = "gaussian_mixture"
    if name.startswith("t") and name[1:].replace(".", "", 1).isdigit():
        return make_density("student_t", df=float(name[1:]))
    return make_density(name)


def _manifest(args, argv, command, inputs=()):
    cfg = {k: v for k, v in vars(args).items() if k not in ("func", "force", "out")}
    return RunManifest.build(command, cfg, getattr(args, "seed", None), argv, inputs)


def _fit_extra(data, result):
    extra = {"column_names": list(data.column_names)}
    if data.standardization is not None:
        extra["standardization"] = data.standardization
        extra["beta_original_scale"] = destandardize(result.beta, data.standardization).tolist()
    return extra


# ----------------------------------------------------------------------------- commands

def cmd_fit(args, argv):
    path, data = _load(args)
    opts = _fit_options(args)
    phi = _resolve_score(args.score, data, opts)
    res = fit(data, phi, opts)
    extra = _fit_extra(data, res)
    save_result(res, args.out, _manifest(args, argv, "fit", [path]), force=args.force,
                extra=extra)
    if "beta_original_scale" in extra:
        orig = np.asarray(extra["beta_original_scale"])
        print(f"beta (original scale) = {np.array2string(orig, precision=6)}")
        print(f"beta (standardized)   = {np.array2string(res.beta, precision=6)}")
    else:
        print(f"beta = {np.array2string(res.beta, precision=6)}")
    return 0


def cmd_bootstrap(args, argv):
    path, data = _load(args)
    opts = _fit_options(args)
    phi = _resolve_score(args.score, data, opts)
    if args.fit:
        kind, point, _ = load_result(args.fit)
        if kind != "fit":
            raise InvalidParameterError(f"{args.fit} does not hold a fit result")
    else:
        point = fit(data, phi, opts)
    cfg = BootstrapConfig(B=args.B, T=args.T, eta=args.eta, alpha=args.alpha, seed=args.seed,
                          interval_mode=args.mode, init=args.init, workers=args.workers)
    res = run_bootstrap(data, score_table(phi, data.n), point, cfg)
    if not args.keep_replicates:
        res.replicates = np.empty((0, data.p))
    extra = {"column_names": list(data.column_names)}
    if data.standardization is not None:
        extra["intervals_original_scale"] = [
            destandardize(res.intervals[:, k], data.standardization).tolist() for k in (0, 1)
        ]
    save_result(res, args.out, _manifest(args, argv, "bootstrap", [path]), force=args.force,
                extra=extra)
    for j, (lo, hi) in enumerate(res.intervals):
        print(f"beta[{j}]: [{lo:.6f}, {hi:.6f}]")
    return 0


def cmd_simulate(args, argv):
    methods = tuple(canonical_method(m.strip()) for m in args.methods.split(",") if m.strip())
    solver = SolverSettings(t1=args.t1, zeta=args.zeta, step_scale=args.step_scale,
                            t2=args.t2, step=args.step)
    if args.full:
        cfgs = table_grid(methods=methods, seed=args.seed, replications=args.reps, solver=solver)
    else:
        cfgs = [SimConfig(n=args.n, p=args.p, noise=NoiseModel.make(args.noise),
                          methods=methods, replications=args.reps, seed=args.seed,
                          rho=args.rho, solver=solver, crossfit_mode=args.crossfit)]
    rows = run_table(cfgs)
    save_result(rows, args.out, _manifest(args, argv, "simulate"), force=args.force)
    for r in rows:
        print(f"{r.noise:>17s} n={r.n:<5d} p={r.p:<3d} {r.method:<9s} "
              f"{r.mean_l2:.4f} ({r.sd_l2:.4f})")
    return 0


def _sigma(spec, p):
    if spec == "identity":
        return np.eye(p)
    if spec.startswith("ar:"):
        return ar1_covariance(p, float(spec[3:]))
    raise InvalidParameterError(f"--sigma must be 'identity' or 'ar:RHO', got {spec!r}")


def _vector(spec, p):
    if spec.startswith("e") and spec[1:].isdigit():
        j = int(spec[1:])
        if not 1 <= j <= p:
            raise InvalidParameterError(f"{spec} is outside 1..{p}")
        v = np.zeros(p)
        v[j - 1] = 1.0
        return v
    v = np.array([float(x) for x in spec.split(",")])
    if v.size != p:
        raise InvalidParameterError(f"--v has {v.size} entries, expected {p}")
    return v


def cmd_variance(args, argv):
    f = _density(args.noise)
    phi = _density_score(args.score, f)
    Ks = [int(k) for k in args.K_list.split(",")]
    rep = variance_convergence_check(phi, f, _sigma(args.sigma, args.p), _vector(args.v, args.p),
                                     Ks)
    header = ["K", "V_K", "sigma2_inf"]
    save_result((header, rep.rows()), args.out, _manifest(args, argv, "variance"),
                force=args.force)
    for k, vk, lim in rep.rows():
        print(f"K={k:<6d} V_K={vk:.6f} limit={lim:.6f}")
    return 0


def _density_score(spec, f=None):
    name = spec.split(":", 1)[0].replace("_", "-")
    if name == "optimal-est":
        raise InvalidParameterError("optimal-est needs data; use 'fit' instead")
    if name == "optimal":
        arg = spec.split(":", 1)[1] if ":" in spec else ""
        return generator_from_spec("optimal", density=_density(arg) if arg else f)
    return generator_from_spec(spec)


def cmd_score_table(args, argv):
    phi = _density_score(args.kind)
    if args.flatten:
        phi = flatten(phi, args.flatten)
    tab = np.asarray(score_table(phi, args.n))
    i = np.arange(1, args.n + 1)
    rows = list(zip(i.tolist(), (i / (args.n + 1.0)).tolist(), tab.tolist()))
    save_result((["i", "u", "a"], rows), args.out, _manifest(args, argv, "score-table"),
                force=args.force)
    return 0


def cmd_score_curve(args, argv):
    phi = _density_score(args.kind)
    if args.flatten:
        phi = flatten(phi, args.flatten)
    rows = list(zip(phi.grid_u.tolist(), phi.grid_v.tolist()))
    save_result((["u", "phi"], rows), args.out, _manifest(args, argv, "score-curve"),
                force=args.force)
    return 0


def cmd_replay(args, argv):
    man = load_manifest(args.source)
    old = list(man.argv)
    if "--out" not in old:
        raise InvalidParameterError("manifest argv has no --out")
    old[old.index("--out") + 1] = args.out
    if args.force and "--force" not in old:
        old.append("--force")
    if "data" in man.config and man.input_digests:
        path = resolve_data_path(man.config["data"])
        digest = man.input_digests.get(os.path.basename(path))
        if digest is not None and file_digest(path) != digest:
            raise InvalidParameterError(f"input {path} changed since the run was recorded")
    return main(old)


# ----------------------------------------------------------------------------- parser

def build_parser():
    parser = argparse.ArgumentParser(prog="grr", description="Generalized rank regression.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def out_args(p, required=True):
        p.add_argument("--out", required=required, help="output file")
        p.add_argument("--force", action="store_true", help="overwrite an existing output")

    p = sub.add_parser("fit", help="fit a GRR model to a CSV data set")
    _add_data_args(p)
    _add_solver_args(p)
    p.add_argument("--seed", type=int, default=None, help="recorded in the manifest")
    out_args(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("bootstrap", help="multiplier-bootstrap confidence intervals")
    _add_data_args(p)
    _add_solver_args(p)
    p.add_argument("--fit", default=None, help="reuse the point estimate stored in this fit JSON")
    p.add_argument("--B", type=int, default=1000, help="number of replicates")
    p.add_argument("--T", type=int, default=None, help="iterations per replicate")
    p.add_argument("--eta", type=float, default=None, help="replicate step size")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--mode", choices=("centered", "percentile"), default="centered")
    p.add_argument("--init", choices=("final", "stage_one"), default="final")
    p.add_argument("--workers", type=int, default=None, help="threads (default GRR_THREADS)")
    p.add_argument("--keep-replicates", action="store_true")
    p.add_argument("--seed", type=int, required=True)
    out_args(p)
    p.set_defaults(func=cmd_bootstrap)

    p = sub.add_parser("simulate", help="Monte-Carlo comparison of estimators")
    p.add_argument("--noise", choices=("cauchy", "mixture", "gaussian-mixture",
                                       "smoothed-uniform", "normal", "laplace"), default="cauchy")
    p.add_argument("--n", type=int, default=1800)
    p.add_argument("--p", type=int, default=5)
    p.add_argument("--rho", type=float, default=0.7)
    p.add_argument("--methods", default="srr,wrr,orr-orc",
                   help=f"comma list from {', '.join(m.lower() for m in METHODS)}")
    p.add_argument("--reps", type=int, default=200)
    p.add_argument("--crossfit", choices=("average", "pooled"), default="average")
    p.add_argument("--full", action="store_true", help="run every cell of the comparison table")
    p.add_argument("--t1", type=int, default=50)
    p.add_argument("--t2", type=int, default=150)
    p.add_argument("--zeta", type=float, default=2.0 / 3.0)
    p.add_argument("--step-scale", type=float, default=1.0)
    p.add_argument("--step", type=float, default=None)
    p.add_argument("--seed", type=int, required=True)
    out_args(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("variance", help="finite-K CQR variance against the GRR limit")
    p.add_argument("--score", default="wilcoxon")
    p.add_argument("--noise", choices=NOISE_CHOICES, default="normal")
    p.add_argument("--sigma", default="identity", help="identity | ar:RHO")
    p.add_argument("--p", type=int, default=2, help="dimension of Sigma")
    p.add_argument("--v", default="e1", help="e<j> or a comma-separated vector")
    p.add_argument("--K-list", dest="K_list", default="10,100,1000")
    out_args(p)
    p.set_defaults(func=cmd_variance)

    for name, fn, helptext in (("score-table", cmd_score_table, "discrete scores a_n(i)"),
                               ("score-curve", cmd_score_curve, "tabulated generator curve")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--kind", default="wilcoxon",
                       help="wilcoxon | sign | sinusoidal | single-level:TAU | optimal:DENSITY")
        p.add_argument("--flatten", type=float, default=0.0, help="flatten outside [eps, 1-eps]")
        if name == "score-table":
            p.add_argument("--n", type=int, required=True)
        out_args(p)
        p.set_defaults(func=fn)

    p = sub.add_parser("replay", help="re-run the command recorded in an output's manifest")
    p.add_argument("source", help="a JSON result or a CSV output with a manifest sidecar")
    out_args(p)
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args, argv)
    except (GRRError, OSError, ValueError) as exc:
        print(f"grr {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
