"""Multiplier-bootstrap confidence intervals for GRR estimates.

Each replicate reweights observation ``i`` by ``1 + e_i`` with Rademacher
``e_i`` and runs constant-step subgradient descent on the reweighted loss from
a common starting point.  Replicates are processed in fixed-size chunks with a
vectorised subgradient; chunk boundaries and per-replicate random streams do
not depend on the number of worker threads, so results are reproducible.
"""
from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import loss as _loss
from .errors import DivergenceError, InvalidParameterError

CHUNK = 128
MIN_STABLE_B = 20


def _stream(seed, b):
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(b)]))


def rademacher_multipliers(n, seed):
    """``1 + e`` with ``e`` i.i.d. +-1; entries are 0 or 2."""
    if n < 1:
        raise InvalidParameterError("n must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return 2.0 * rng.integers(0, 2, size=n)


def replicate_multipliers(n, seed, b):
    """Multipliers of replicate ``b``; a pure function of ``(seed, b)``."""
    return rademacher_multipliers(n, _stream(seed, b))


def _cap(init, radius_cap):
    return 10.0 * (np.linalg.norm(init) + 1.0) if radius_cap is None else radius_cap


def bootstrap_replicate(init, data, table, multipliers, T, eta, radius_cap=None):
    """``T`` constant-step descent steps on the reweighted loss from ``init``."""
    beta = np.array(init, dtype=float)
    start, cap = beta.copy(), _cap(beta, radius_cap)
    for t in range(1, T + 1):
        beta = beta - eta * _loss.weighted_subgradient(beta, data, table, multipliers)
        if not np.all(np.isfinite(beta)) or np.linalg.norm(beta - start) > cap:
            raise DivergenceError(f"bootstrap replicate diverged at step {t}")
    return beta


def _run_chunk(init, data, table, mult, T, eta, cap):
    betas = np.tile(np.asarray(init, dtype=float), (mult.shape[0], 1))
    for t in range(1, T + 1):
        betas = betas - eta * _loss.batch_weighted_subgradient(betas, data, table, mult)
        if not np.all(np.isfinite(betas)) or \
                np.any(np.linalg.norm(betas - init, axis=1) > cap):
            raise DivergenceError(f"bootstrap replicate diverged at step {t}")
    return betas


def empirical_quantile(x, q):
    """``inf{z : F_B(z) >= q}`` for the empirical distribution of ``x`` (along axis 0)."""
    x = np.sort(np.asarray(x, dtype=float), axis=0)
    B = x.shape[0]
    k = max(int(math.ceil(q * B - 1e-9)), 1)
    return x[min(k, B) - 1]


def _thread_count(workers):
    if workers is not None:
        return max(int(workers), 1)
    env = os.environ.get("GRR_THREADS")
    if env:
        try:
            return max(int(env), 1)
        except ValueError:
            raise InvalidParameterError(f"GRR_THREADS must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


@dataclass
class BootstrapConfig:
    B: int = 1000
    T: int | None = None
    eta: float | None = None
    alpha: float = 0.05
    seed: int = 0
    interval_mode: str = "centered"
    init: str = "final"
    workers: int | None = None
    radius_cap: float | None = None

    def __post_init__(self):
        if self.B < 1:
            raise InvalidParameterError("B must be >= 1")
        if not 0.0 < self.alpha < 1.0:
            raise InvalidParameterError("alpha must lie in (0, 1)")
        if self.interval_mode not in ("centered", "percentile"):
            raise InvalidParameterError("interval_mode must be 'centered' or 'percentile'")
        if self.init not in ("final", "stage_one"):
            raise InvalidParameterError("init must be 'final' or 'stage_one'")
        if self.T is not None and self.T < 0:
            raise InvalidParameterError("T must be >= 0")
        if self.eta is not None and self.eta < 0:
            raise InvalidParameterError("eta must be >= 0")


def intervals_from(replicates, center, alpha, mode):
    """Per-coordinate ``(lower, upper)`` intervals, shape ``(p, 2)``."""
    reps = np.asarray(replicates, dtype=float)
    lo_q, hi_q = alpha / 2.0, 1.0 - alpha / 2.0
    if mode == "percentile":
        lo, hi = empirical_quantile(reps, lo_q), empirical_quantile(reps, hi_q)
    elif mode == "centered":
        delta = reps - center
        lo = center - empirical_quantile(delta, hi_q)
        hi = center - empirical_quantile(delta, lo_q)
    else:
        raise InvalidParameterError(f"unknown interval mode {mode!r}")
    return np.column_stack([lo, hi])


@dataclass
class BootstrapResult:
    replicates: np.ndarray
    intervals: np.ndarray
    center: np.ndarray
    config: dict
    warnings: list = field(default_factory=list)

    def interval(self, alpha=None, mode=None):
        return intervals_from(self.replicates, self.center,
                              self.config["alpha"] if alpha is None else alpha,
                              self.config["interval_mode"] if mode is None else mode)

    def to_dict(self, keep_replicates=True):
        out = {"intervals": self.intervals.tolist(), "center": self.center.tolist(),
               "config": dict(self.config), "warnings": list(self.warnings)}
        if keep_replicates:
            out["replicates"] = self.replicates.tolist()
        return out

    @classmethod
    def from_dict(cls, d):
        reps = np.asarray(d.get("replicates", np.empty((0, len(d["center"])))), dtype=float)
        return cls(replicates=reps.reshape(-1, len(d["center"])),
                   intervals=np.asarray(d["intervals"], dtype=float),
                   center=np.asarray(d["center"], dtype=float),
                   config=dict(d["config"]), warnings=list(d.get("warnings", [])))


def run_bootstrap(data, table, point_fit, cfg, multiplier_fn=None):
    """Bootstrap replicates around ``point_fit`` and the resulting intervals.

    ``T`` and ``eta`` default to the point fit's stage-two settings.
    ``multiplier_fn(b)`` overrides the Rademacher draws (used for diagnostics).
    """
    T = cfg.T if cfg.T is not None else int(point_fit.iterations_used[1])
    eta = cfg.eta if cfg.eta is not None else float(point_fit.config["step"])
    init = np.asarray(point_fit.beta if cfg.init == "final" else point_fit.stage_one_best,
                      dtype=float)
    center = np.asarray(point_fit.beta, dtype=float)
    cap = _cap(init, cfg.radius_cap)
    notes = []
    if cfg.B < MIN_STABLE_B:
        msg = f"B={cfg.B} < {MIN_STABLE_B}: interval endpoints are unstable"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        notes.append(msg)
    draw = multiplier_fn or (lambda b: replicate_multipliers(data.n, cfg.seed, b))

    def work(start):
        stop = min(start + CHUNK, cfg.B)
        mult = np.stack([draw(b) for b in range(start, stop)])
        return _run_chunk(init, data, table, mult, T, eta, cap)

    starts = list(range(0, cfg.B, CHUNK))
    workers = min(_thread_count(cfg.workers), len(starts))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(work, starts))
    else:
        chunks = [work(s) for s in starts]
    reps = np.vstack(chunks)
    echo = {"B": cfg.B, "T": T, "eta": eta, "alpha": cfg.alpha, "seed": cfg.seed,
            "interval_mode": cfg.interval_mode, "init": cfg.init}
    return BootstrapResult(reps, intervals_from(reps, center, cfg.alpha, cfg.interval_mode),
                           center, echo, notes)


__all__ = [
    "BootstrapConfig", "BootstrapResult", "rademacher_multipliers", "replicate_multipliers",
    "bootstrap_replicate", "run_bootstrap", "empirical_quantile", "intervals_from",
]
