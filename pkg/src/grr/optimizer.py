"""Two-stage subgradient descent for generalized rank regression.

Stage one runs decaying steps ``C * t**(-zeta)`` on a convex surrogate (a
monotone score) and keeps the iterate with the smallest surrogate loss.  Stage
two starts there and takes constant steps on the target, possibly non-convex,
loss; its last iterate is the estimate.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import loss as _loss
from .errors import ConfigurationError, DivergenceError, InvalidParameterError
from .scores import ScoreGenerator, builtin_generator, is_monotone, score_table


def step_schedule(C, zeta, t):
    """Decaying step ``C * t**(-zeta)`` for iteration ``t >= 1``."""
    if t < 1:
        raise InvalidParameterError("t must be >= 1")
    return C * t ** (-zeta)


@dataclass
class StageOneConfig:
    surrogate: ScoreGenerator = None
    n_iter: int = 50
    step_scale: float = 1.0
    decay: float = 2.0 / 3.0
    beta0: np.ndarray | None = None
    normalize_first_step: bool = False
    radius_cap: float | None = None

    def __post_init__(self):
        if self.surrogate is None:
            self.surrogate = builtin_generator("wilcoxon")
        if not 0.5 < self.decay < 1.0:
            raise ConfigurationError("decay exponent must lie strictly inside (1/2, 1)")
        if self.step_scale <= 0:
            raise ConfigurationError("step_scale must be positive")
        if self.n_iter < 0:
            raise ConfigurationError("n_iter must be non-negative")


@dataclass
class StageTwoConfig:
    n_iter: int = 150
    step: float = 50.0 ** (-2.0 / 3.0)
    radius_cap: float | None = None

    def __post_init__(self):
        if self.step < 0:
            raise ConfigurationError("step must be non-negative")
        if self.n_iter < 0:
            raise ConfigurationError("n_iter must be non-negative")


@dataclass
class Trace:
    iterates: np.ndarray
    losses: np.ndarray
    grad_norms: np.ndarray


def _radius(start, cap):
    return 10.0 * (np.linalg.norm(start) + 1.0) if cap is None else cap


def _guard(beta, start, cap, t):
    if not np.all(np.isfinite(beta)):
        raise DivergenceError(f"non-finite iterate at step {t}")
    if np.linalg.norm(beta - start) > cap:
        raise DivergenceError(f"iterate left the safety ball (radius {cap:.3g}) at step {t}")


def stage_one(data, cfg):
    """Decaying-step subgradient descent on the surrogate; returns (best, trace)."""
    table = score_table(cfg.surrogate, data.n)
    if not is_monotone(table):
        raise ConfigurationError("stage-one surrogate must have monotone scores")
    beta = np.zeros(data.p) if cfg.beta0 is None else np.array(cfg.beta0, dtype=float)
    if beta.shape != (data.p,):
        raise InvalidParameterError(f"beta0 must have length {data.p}")
    start, cap = beta.copy(), _radius(beta, cfg.radius_cap)
    T = cfg.n_iter
    iterates = np.empty((T + 1, data.p))
    losses = np.empty(T + 1)
    norms = np.empty(T)
    iterates[0] = beta
    losses[0] = _loss.loss(beta, data, table)
    for t in range(1, T + 1):
        g = _loss.subgradient(beta, data, table)
        gn = float(np.linalg.norm(g))
        norms[t - 1] = gn
        eta = step_schedule(cfg.step_scale, cfg.decay, t)
        if t == 1 and cfg.normalize_first_step and gn > 0:
            g = g / gn
        beta = beta - eta * g
        _guard(beta, start, cap, t)
        iterates[t] = beta
        losses[t] = _loss.loss(beta, data, table)
    best = iterates[int(np.argmin(losses))].copy()
    return best, Trace(iterates, losses, norms)


def stage_two(init, data, table, cfg):
    """Constant-step subgradient descent on the target loss; returns (last, trace)."""
    beta = np.array(init, dtype=float)
    if beta.shape != (data.p,):
        raise InvalidParameterError(f"init must have length {data.p}")
    start, cap = beta.copy(), _radius(beta, cfg.radius_cap)
    T = cfg.n_iter
    iterates = np.empty((T + 1, data.p))
    losses = np.empty(T + 1)
    norms = np.empty(T)
    iterates[0] = beta
    losses[0] = _loss.loss(beta, data, table)
    for t in range(1, T + 1):
        g = _loss.subgradient(beta, data, table)
        norms[t - 1] = np.linalg.norm(g)
        beta = beta - cfg.step * g
        _guard(beta, start, cap, t)
        iterates[t] = beta
        losses[t] = _loss.loss(beta, data, table)
    return beta, Trace(iterates, losses, norms)


@dataclass
class FitOptions:
    """Solver settings.  ``step`` defaults to ``step_scale * t1**(-zeta)``."""

    t1: int = 50
    zeta: float = 2.0 / 3.0
    step_scale: float = 1.0
    t2: int = 150
    step: float | None = None
    surrogate: ScoreGenerator | None = None
    beta0: np.ndarray | None = None
    normalize_first_step: bool = False
    radius_cap: float | None = None

    @property
    def resolved_step(self):
        if self.step is not None:
            return float(self.step)
        return self.step_scale * max(self.t1, 1) ** (-self.zeta)

    def echo(self):
        return {
            "t1": self.t1, "zeta": self.zeta, "step_scale": self.step_scale, "t2": self.t2,
            "step": self.resolved_step, "normalize_first_step": self.normalize_first_step,
            "surrogate": None if self.surrogate is None else self.surrogate.kind,
            "beta0": None if self.beta0 is None else np.asarray(self.beta0, float).tolist(),
            "radius_cap": self.radius_cap,
        }


@dataclass
class FitResult:
    beta: np.ndarray
    stage_one_best: np.ndarray
    stage_one_loss: np.ndarray
    stage_two_loss: np.ndarray
    grad_norm_trace: np.ndarray
    path: np.ndarray
    iterations_used: tuple
    config: dict
    score: dict | None = None
    extra: dict = field(default_factory=dict)

    @property
    def loss_trace(self):
        return np.concatenate([self.stage_one_loss, self.stage_two_loss[1:]])

    def to_dict(self):
        out = {}
        for k, v in asdict(self).items():
            out[k] = v.tolist() if isinstance(v, np.ndarray) else v
        out["iterations_used"] = list(self.iterations_used)
        return out

    @classmethod
    def from_dict(cls, d):
        arrays = ("beta", "stage_one_best", "stage_one_loss", "stage_two_loss",
                  "grad_norm_trace", "path")
        kw = {k: (np.asarray(d[k], dtype=float) if k in arrays else d[k])
              for k in d if k in cls.__dataclass_fields__}
        kw["iterations_used"] = tuple(d["iterations_used"])
        return cls(**kw)


def fit(data, target, options=None):
    """Two-stage GRR fit with ``target`` scores (a generator or a ready table)."""
    opt = options or FitOptions()
    cfg1 = StageOneConfig(
        surrogate=opt.surrogate, n_iter=opt.t1, step_scale=opt.step_scale, decay=opt.zeta,
        beta0=opt.beta0, normalize_first_step=opt.normalize_first_step,
        radius_cap=opt.radius_cap,
    )
    best, tr1 = stage_one(data, cfg1)
    if isinstance(target, ScoreGenerator):
        table = score_table(target, data.n)
        score = target.to_dict()
    else:
        table, score = target, None
    cfg2 = StageTwoConfig(n_iter=opt.t2, step=opt.resolved_step, radius_cap=opt.radius_cap)
    final, tr2 = stage_two(best, data, table, cfg2)
    return FitResult(
        beta=final,
        stage_one_best=best,
        stage_one_loss=tr1.losses,
        stage_two_loss=tr2.losses,
        grad_norm_trace=np.concatenate([tr1.grad_norms, tr2.grad_norms]),
        path=tr2.iterates,
        iterations_used=(opt.t1, opt.t2),
        config=opt.echo(),
        score=score,
    )


def stationarity_gap(beta, data, table):
    """Norm of the subgradient at ``beta`` (a cheap convergence diagnostic)."""
    return float(np.linalg.norm(_loss.subgradient(beta, data, table)))


def default_step(t1=50, zeta=2.0 / 3.0, step_scale=1.0):
    return step_scale * t1 ** (-zeta)


__all__ = [
    "step_schedule", "StageOneConfig", "StageTwoConfig", "Trace", "stage_one", "stage_two",
    "FitOptions", "FitResult", "fit", "stationarity_gap", "default_step",
]
