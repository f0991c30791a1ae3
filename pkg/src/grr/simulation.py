"""Data-generating processes and the Monte-Carlo experiment runner.

Designs follow the simulation protocol: rows ``X = Sigma^{1/2} X~`` with
``Sigma_jk = rho^|j-k|`` and ``X~`` uniform on ``[-sqrt(3/2), sqrt(3/2)]``;
``beta* = (1, ..., 1)``; noise is Cauchy, a narrow two-component normal
mixture, or a smoothed uniform.
"""
from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from . import densities
from .errors import GRRError, InvalidParameterError
from .loss import Dataset
from .optimizer import FitOptions, fit
from .scores import (
    EstimationOptions,
    ScoreGenerator,
    builtin_generator,
    estimate_optimal_generator,
    optimal_generator,
    score_table,
)

METHODS = ("SRR", "WRR", "ORR_est", "ORR_orc", "OracleMLE")
_METHOD_ALIASES = {
    "srr": "SRR", "wrr": "WRR", "orr-est": "ORR_est", "orr_est": "ORR_est",
    "orr-orc": "ORR_orc", "orr_orc": "ORR_orc", "mle": "OracleMLE", "oraclemle": "OracleMLE",
}

NOISE_DEFAULTS = {
    "cauchy": {},
    "gaussian_mixture": {"weights": (0.5, 0.5), "means": (-1.5, 1.5), "sds": (0.1, 0.1)},
    "smoothed_uniform": {"half_width": 1.0, "noise_sd": 0.1},
    "normal": {},
    "laplace": {},
}


def canonical_method(name):
    if name in METHODS:
        return name
    try:
        return _METHOD_ALIASES[name.lower()]
    except KeyError:
        raise InvalidParameterError(f"unknown method {name!r}") from None


@dataclass(frozen=True)
class NoiseModel:
    kind: str
    params: tuple = ()

    @classmethod
    def make(cls, kind, **params):
        kind = {"mixture": "gaussian_mixture", "smoothed-uniform": "smoothed_uniform",
                "gaussian-mixture": "gaussian_mixture"}.get(kind, kind)
        if kind not in NOISE_DEFAULTS and kind != "custom":
            raise InvalidParameterError(f"unknown noise kind {kind!r}")
        merged = dict(NOISE_DEFAULTS.get(kind, {}))
        merged.update(params)
        return cls(kind, tuple(sorted((k, _freeze(v)) for k, v in merged.items())))

    @property
    def density(self):
        return _density(self)

    def sample(self, n, rng):
        return self.density.sample(rng, n)

    def to_dict(self):
        return {"kind": self.kind, **{k: (list(v) if isinstance(v, tuple) else v)
                                      for k, v in self.params}}


def _freeze(v):
    return tuple(v) if isinstance(v, (list, np.ndarray)) else v


@lru_cache(maxsize=32)
def _density(model):
    return densities.make_density(model.kind, **dict(model.params))


@lru_cache(maxsize=32)
def _optimal(model):
    return optimal_generator(model.density)


def _rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def ar1_covariance(p, rho):
    idx = np.arange(p)
    return rho ** np.abs(idx[:, None] - idx[None, :])


def gen_design(n, p, rho=0.7, seed=None):
    """``n x p`` design with AR(1) correlation ``rho`` and variance-1/2 entries."""
    if not abs(rho) < 1:
        raise InvalidParameterError("|rho| must be < 1")
    rng = _rng(seed)
    w, v = np.linalg.eigh(ar1_covariance(p, rho))
    root = (v * np.sqrt(w)) @ v.T
    half = math.sqrt(1.5)
    return rng.uniform(-half, half, size=(n, p)) @ root


def design_covariance(p, rho=0.7):
    """Population ``E[X X']`` of :func:`gen_design` rows (``Sigma / 2``)."""
    return 0.5 * ar1_covariance(p, rho)


def sample_noise(model, n, seed=None):
    return model.sample(n, _rng(seed))


@dataclass
class SolverSettings:
    """Iteration budget used for every GRR method inside the simulations."""

    t1: int = 50
    zeta: float = 2.0 / 3.0
    step_scale: float = 1.0
    t2: int = 150
    step: float | None = None
    normalize_first_step: bool = False

    def options(self, **overrides):
        kw = dict(t1=self.t1, zeta=self.zeta, step_scale=self.step_scale, t2=self.t2,
                  step=self.step, normalize_first_step=self.normalize_first_step)
        kw.update(overrides)
        return FitOptions(**kw)


@dataclass
class SimConfig:
    n: int
    p: int
    noise: NoiseModel
    methods: tuple = ("SRR", "WRR", "ORR_orc")
    replications: int = 200
    seed: int = 0
    rho: float = 0.7
    solver: SolverSettings = field(default_factory=SolverSettings)
    crossfit_mode: str = "average"
    noiseless: bool = False

    def __post_init__(self):
        if not self.n > self.p >= 1:
            raise InvalidParameterError("need n > p >= 1")
        if self.replications < 1:
            raise InvalidParameterError("replications must be >= 1")
        self.methods = tuple(canonical_method(m) for m in self.methods)
        if not self.methods:
            raise InvalidParameterError("methods must be non-empty")
        if self.crossfit_mode not in ("average", "pooled"):
            raise InvalidParameterError("crossfit_mode must be 'average' or 'pooled'")


def make_dataset(cfg, rep_index):
    """The dataset for replication ``rep_index``; seeds are derived, not shared."""
    ss = np.random.SeedSequence([cfg.seed, rep_index])
    rx, re = (np.random.default_rng(s) for s in ss.spawn(2))
    X = gen_design(cfg.n, cfg.p, cfg.rho, rx)
    beta_star = np.ones(cfg.p)
    eps = np.zeros(cfg.n) if cfg.noiseless else sample_noise(cfg.noise, cfg.n, re)
    return Dataset(X, X @ beta_star + eps), beta_star


def _fit_beta(data, generator, solver, **overrides):
    return fit(data, generator, solver.options(**overrides)).beta


def crossfit_orr(data, solver, folds=3, mode="average", seed=0, est_options=None):
    """Optimal-score rank regression with a cross-fitted score estimate.

    For each fold, a pilot Wilcoxon fit on the remaining folds supplies the
    residuals from which the score is estimated.  ``average`` fits each fold
    with its own score and averages the fold estimates; ``pooled`` averages the
    fold scores into one generator and fits on the full sample.
    """
    if mode not in ("average", "pooled"):
        raise InvalidParameterError("mode must be 'average' or 'pooled'")
    if not 2 <= folds <= data.n:
        raise InvalidParameterError("folds must lie in [2, n]")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(data.n)
    parts = np.array_split(perm, folds)
    wil = builtin_generator("wilcoxon")
    estimates, generators = [], []
    for k in range(folds):
        rest = np.sort(np.concatenate([parts[j] for j in range(folds) if j != k]))
        held = np.sort(parts[k])
        pilot_data = data.subset(rest)
        pilot = _fit_beta(pilot_data, wil, solver)
        phi = estimate_optimal_generator(pilot_data.residuals(pilot), est_options)
        generators.append(phi)
        if mode == "average":
            estimates.append(_fit_beta(data.subset(held), phi, solver))
    if mode == "average":
        return np.mean(estimates, axis=0)
    u = generators[0].grid_u
    pooled = ScoreGenerator("tabulated", {"source": "crossfit-pooled"}, u,
                            np.mean([g.grid_v for g in generators], axis=0))
    return _fit_beta(data, pooled, solver)


def oracle_mle(data, density, init, n_iter=300, tol=1e-12):
    """Maximise the true log-likelihood by Fisher-scoring steps from ``init``.

    Each step is a gradient step preconditioned by ``(I(f) X'X/n)^{-1}``, with
    step halving whenever the likelihood would decrease (the Cauchy and mixture
    likelihoods are not concave).
    """
    from .scores import fisher_information

    X, Y = data.X, data.Y
    info = fisher_information(density)
    precond = np.linalg.inv(info * (X.T @ X) / data.n)
    beta = np.array(init, dtype=float)

    def nll(b):
        return -float(np.mean(density.logpdf(Y - X @ b)))

    cur = nll(beta)
    for _ in range(n_iter):
        grad = (X.T @ density.score(Y - X @ beta)) / data.n  # gradient of the nll
        direction = -precond @ grad
        step = 1.0
        while step > 1e-8:
            cand = beta + step * direction
            val = nll(cand)
            if val <= cur:
                break
            step *= 0.5
        else:
            break
        converged = cur - val < tol
        beta, cur = cand, val
        if converged:
            break
    return beta


def run_trial(cfg, rep_index, est_options=None):
    """One replication: returns ``{method: (l2_error, runtime_ms, error_message)}``."""
    data, beta_star = make_dataset(cfg, rep_index)
    out = {}
    wrr_beta = None
    for method in cfg.methods:
        t0 = time.perf_counter()
        try:
            if method == "SRR":
                beta = _fit_beta(data, builtin_generator("single_level", tau=0.5), cfg.solver)
            elif method == "WRR":
                beta = wrr_beta = _fit_beta(data, builtin_generator("wilcoxon"), cfg.solver)
            elif method == "ORR_orc":
                beta = _fit_beta(data, _optimal(cfg.noise), cfg.solver)
            elif method == "ORR_est":
                beta = crossfit_orr(data, cfg.solver, mode=cfg.crossfit_mode,
                                    seed=[cfg.seed, rep_index, 7], est_options=est_options)
            elif method == "OracleMLE":
                if wrr_beta is None:
                    wrr_beta = _fit_beta(data, builtin_generator("wilcoxon"), cfg.solver)
                beta = oracle_mle(data, cfg.noise.density, wrr_beta)
            err = float(np.linalg.norm(beta - beta_star))
            msg = None
        except GRRError as exc:
            err, msg = math.nan, f"{type(exc).__name__}: {exc}"
        out[method] = (err, 1000.0 * (time.perf_counter() - t0), msg)
    return out


@dataclass
class CellSummary:
    noise: str
    n: int
    p: int
    method: str
    mean_l2: float
    sd_l2: float
    mean_runtime_ms: float
    reps: int
    failures: int
    errors: np.ndarray = field(repr=False, default=None)

    def row(self):
        return {"noise": self.noise, "n": self.n, "p": self.p, "method": self.method,
                "mean_l2": self.mean_l2, "sd_l2": self.sd_l2,
                "mean_runtime_ms": self.mean_runtime_ms}

    @property
    def se(self):
        return self.sd_l2 / math.sqrt(max(self.reps - self.failures, 1))


def run_cell(cfg, progress=None):
    """All replications of one configuration, summarised per method."""
    errs = {m: [] for m in cfg.methods}
    times = {m: [] for m in cfg.methods}
    for r in range(cfg.replications):
        res = run_trial(cfg, r)
        for m, (e, ms, _) in res.items():
            errs[m].append(e)
            times[m].append(ms)
        if progress is not None:
            progress(r)
    out = []
    for m in cfg.methods:
        e = np.asarray(errs[m])
        ok = e[np.isfinite(e)]
        out.append(CellSummary(
            noise=cfg.noise.kind, n=cfg.n, p=cfg.p, method=m,
            mean_l2=float(ok.mean()) if len(ok) else math.nan,
            sd_l2=float(ok.std(ddof=1)) if len(ok) > 1 else math.nan,
            mean_runtime_ms=float(np.mean(times[m])),
            reps=len(e), failures=int(np.sum(~np.isfinite(e))), errors=e,
        ))
    return out


def run_table(configs, replications=None, progress=None):
    """Summaries for a grid of configurations (one :class:`CellSummary` per method)."""
    rows = []
    for cfg in configs:
        if replications is not None:
            cfg = replace(cfg, replications=replications)
        if cfg.replications < 2:
            raise InvalidParameterError("run_table needs at least 2 replications")
        rows.extend(run_cell(cfg, progress))
    return rows


def table_grid(noises=("cauchy", "gaussian_mixture", "smoothed_uniform"),
               ns=(1800, 2400, 3000), ps=(5, 10), methods=METHODS, seed=0, replications=200,
               solver=None):
    """Every cell of the published comparison table."""
    solver = solver or SolverSettings()
    return [SimConfig(n=n, p=p, noise=NoiseModel.make(k), methods=methods, seed=seed,
                      replications=replications, solver=solver)
            for k in noises for n in ns for p in ps]


def write_table_csv(rows, path):
    fields = ["noise", "n", "p", "method", "mean_l2", "sd_l2", "mean_runtime_ms"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for r in rows:
            w.writerow(r.row())


__all__ = [
    "METHODS", "NoiseModel", "SimConfig", "SolverSettings", "CellSummary", "gen_design",
    "design_covariance", "ar1_covariance", "sample_noise", "make_dataset", "run_trial",
    "run_cell", "run_table", "table_grid", "crossfit_orr", "oracle_mle", "write_table_csv",
    "EstimationOptions", "score_table",
]
