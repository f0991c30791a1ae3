"""Score-generating functions, score tables and related functionals.

A :class:`ScoreGenerator` is a function ``phi`` on ``[0, 1]`` normalised so that
``int phi = 0`` and ``int phi^2 = 1``.  Built-in kinds evaluate in closed form;
everything else is tabulated on ``M`` knots ``u_k = (k - 1/2) / M`` and linearly
interpolated, extended constantly beyond the outermost knots.  Jump points get
duplicated knots carrying the left and right limits.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .densities import NoiseDensity
from .errors import (
    IllPosedDensityError,
    InsufficientDataError,
    InvalidParameterError,
    NumericError,
    ZeroVarianceError,
)

GRID_SIZE = 4096
BUILTIN_KINDS = ("wilcoxon", "sign", "single_level", "sinusoidal")


def base_grid(m=GRID_SIZE):
    return (np.arange(1, m + 1) - 0.5) / m


def _with_jumps(u, jumps):
    """Insert each jump point twice into a sorted knot vector."""
    jumps = [j for j in jumps if u[0] < j < u[-1]]
    if not jumps:
        return u
    u = u[~np.isin(u, jumps)]
    return np.sort(np.concatenate([u, np.repeat(jumps, 2)]), kind="stable")


def _trapezoid(u, v):
    """Trapezoid rule on [0, 1] with constant extension beyond the end knots."""
    inner = np.sum(np.diff(u) * (v[1:] + v[:-1])) / 2.0
    return inner + u[0] * v[0] + (1.0 - u[-1]) * v[-1]


@dataclass(frozen=True, eq=False)
class ScoreGenerator:
    kind: str
    params: dict
    grid_u: np.ndarray
    grid_v: np.ndarray
    jump_points: tuple = ()
    bound: float = field(default=math.nan)

    def __post_init__(self):
        u = np.asarray(self.grid_u, dtype=float)
        v = np.asarray(self.grid_v, dtype=float)
        if u.shape != v.shape or u.ndim != 1 or len(u) == 0:
            raise InvalidParameterError("grid_u and grid_v must be 1-d of equal length")
        if np.any(u <= 0) or np.any(u >= 1):
            raise InvalidParameterError("grid knots must lie in (0, 1)")
        du = np.diff(u)
        dup = u[1:][du == 0]
        if np.any(du < 0) or not set(dup.tolist()) <= set(self.jump_points):
            raise InvalidParameterError("grid knots must increase (duplicates only at jumps)")
        u.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "grid_u", u)
        object.__setattr__(self, "grid_v", v)
        object.__setattr__(self, "jump_points", tuple(sorted(float(j) for j in self.jump_points)))
        gmax = float(np.max(np.abs(v)))
        if math.isnan(self.bound):
            object.__setattr__(self, "bound", gmax)
        elif self.bound < gmax - 1e-12:
            raise InvalidParameterError("bound must dominate the tabulated values")

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        kind = self.kind
        if kind == "wilcoxon":
            return math.sqrt(12.0) * (u - 0.5)
        if kind == "sign":
            return np.sign(u - 0.5)
        if kind == "single_level":
            tau = self.params["tau"]
            return (tau - (u <= tau)) / math.sqrt(tau * (1.0 - tau))
        if kind == "sinusoidal":
            return math.sqrt(2.0) * np.sin((2.0 * u - 1.0) * np.pi)
        if kind == "flattened":
            base = self.params["_base"]
            eps = self.params["eps"]
            raw = base(np.clip(u, eps, 1.0 - eps))
            return (raw - self.params["center"]) / self.params["scale"]
        return np.interp(u, self.grid_u, self.grid_v)

    @property
    def grid_size(self):
        return len(self.grid_u)

    def integrals(self):
        """(int phi, int phi^2) by the trapezoid rule on the grid."""
        return _trapezoid(self.grid_u, self.grid_v), _trapezoid(self.grid_u, self.grid_v**2)

    def to_dict(self):
        params = {k: v for k, v in self.params.items() if not k.startswith("_")}
        if self.kind == "flattened":
            params["base"] = self.params["_base"].to_dict()
        return {
            "kind": self.kind,
            "params": params,
            "grid": np.column_stack([self.grid_u, self.grid_v]).tolist(),
            "jump_points": list(self.jump_points),
            "bound": self.bound,
        }

    @classmethod
    def from_dict(cls, d):
        params = dict(d.get("params", {}))
        if d["kind"] == "flattened":
            params["_base"] = cls.from_dict(params.pop("base"))
        grid = np.asarray(d["grid"], dtype=float)
        return cls(d["kind"], params, grid[:, 0], grid[:, 1], tuple(d.get("jump_points", ())),
                   float(d["bound"]))

    def __repr__(self):
        shown = {k: v for k, v in self.params.items() if not k.startswith("_")}
        return f"ScoreGenerator(kind={self.kind!r}, params={shown}, M={self.grid_size})"


@dataclass(frozen=True, eq=False)
class ScoreTable:
    """Discrete scores ``a_n(1), ..., a_n(n)`` (stored 0-indexed)."""

    scores: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.scores, dtype=float)
        if a.ndim != 1 or len(a) == 0 or not np.all(np.isfinite(a)):
            raise InvalidParameterError("scores must be a non-empty finite vector")
        a.setflags(write=False)
        object.__setattr__(self, "scores", a)

    @property
    def n(self):
        return len(self.scores)

    def __len__(self):
        return len(self.scores)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.scores, dtype=dtype)


def builtin_generator(kind, tau=None, grid_size=GRID_SIZE):
    """Normalised built-in generator: wilcoxon, sign, single_level(tau), sinusoidal."""
    kind = kind.replace("-", "_")
    if kind not in BUILTIN_KINDS:
        raise InvalidParameterError(f"unknown built-in score kind {kind!r}")
    params, jumps = {}, ()
    if kind == "single_level":
        if tau is None or not 0.0 < tau < 1.0:
            raise InvalidParameterError("single_level requires tau in (0, 1)")
        params["tau"] = float(tau)
        jumps = (float(tau),)
        bound = max(tau, 1.0 - tau) / math.sqrt(tau * (1.0 - tau))
    elif kind == "sign":
        jumps = (0.5,)
        bound = 1.0
    elif kind == "wilcoxon":
        bound = math.sqrt(3.0)
    else:
        bound = math.sqrt(2.0)
    u = _with_jumps(base_grid(grid_size), jumps)
    proto = ScoreGenerator(kind, params, u, np.zeros_like(u), jumps, bound)
    v = proto(u)
    if jumps:
        # duplicated knots carry (left limit, right limit)
        for j in jumps:
            idx = np.flatnonzero(u == j)
            if len(idx) == 2:
                v[idx[0]] = proto(j - 1e-12)
                v[idx[1]] = proto(j + 1e-12)
    return ScoreGenerator(kind, params, u, v, jumps, bound)


def tabulated_generator(func, grid_size=GRID_SIZE, jump_points=(), params=None):
    """Tabulate a callable on the standard grid (no normalisation)."""
    u = _with_jumps(base_grid(grid_size), jump_points)
    v = np.asarray(func(u), dtype=float)
    for j in jump_points:
        idx = np.flatnonzero(u == j)
        if len(idx) == 2:
            v[idx[0]] = float(func(np.array([j - 1e-12]))[0])
            v[idx[1]] = float(func(np.array([j + 1e-12]))[0])
    return ScoreGenerator("tabulated", dict(params or {}), u, v, tuple(jump_points))


def normalize(raw):
    """Centre and scale ``raw`` so that its grid integrals are 0 and 1."""
    if raw.grid_size == 0:
        raise InvalidParameterError("empty grid")
    m, _ = raw.integrals()
    centred = raw.grid_v - m
    var = _trapezoid(raw.grid_u, centred**2)
    scale = math.sqrt(var) if var > 0 else 0.0
    if not scale > 1e-12 * max(1.0, float(np.max(np.abs(raw.grid_v)))):
        raise ZeroVarianceError("score-generating function has zero variance")
    params = {k: v for k, v in raw.params.items() if not k.startswith("_")}
    params["source_kind"] = params.get("source_kind", raw.kind)
    return ScoreGenerator("tabulated", params, raw.grid_u, centred / scale, raw.jump_points)


def score_table(phi, n):
    """``a_n(i) = phi(i/(n+1))`` for ``i = 1..n``, re-centred to sum to zero."""
    n = int(n)
    if n < 2:
        raise InvalidParameterError("score tables need n >= 2")
    a = np.asarray(phi(np.arange(1, n + 1) / (n + 1.0)), dtype=float)
    a = a - a.mean()
    return ScoreTable(a)


def is_monotone(table, tol=0.0):
    """True iff the scores are non-decreasing (up to ``tol``)."""
    a = np.asarray(table, dtype=float)
    return bool(np.all(np.diff(a) >= -tol))


# ---------------------------------------------------------------------------
# density functionals


def _tail_limit(f, side, threshold=1e-12):
    """Point beyond the outer quantile where the density drops below ``threshold``."""
    x0 = float(f.ppf(1e-3 if side < 0 else 1.0 - 1e-3))
    step = 1.0
    for _ in range(200):
        x = x0 + side * step
        if f.pdf(x) < threshold:
            return x
        step *= 2.0
    raise IllPosedDensityError("density does not decay; cannot truncate tails")


def fisher_information(f):
    """``E[(f'/f)^2]`` by adaptive quadrature with tails cut where ``f < 1e-12``."""
    lo, hi = _tail_limit(f, -1), _tail_limit(f, +1)
    pts = set(float(p) for p in f.breakpoints() if lo < p < hi)
    centre = float(f.ppf(0.5))
    scale = max(1e-3, float(f.ppf(0.75) - f.ppf(0.25)))
    k = 0.0
    while True:
        r = scale * 2.0**k
        added = False
        for p in (centre - r, centre + r):
            if lo < p < hi:
                pts.add(p)
                added = True
        if not added:
            break
        k += 1
    knots = np.array(sorted(pts | {lo, hi}))

    def integrand(x):
        s = f.score(x)
        return s * s * f.pdf(x)

    pieces = []
    for a, b in zip(knots[:-1], knots[1:]):
        val, err = integrate.quad(integrand, a, b, epsabs=1e-13, epsrel=1e-10, limit=200)
        pieces.append(val)
    total = float(np.sum(pieces))
    if not np.isfinite(total) or total <= 0:
        raise IllPosedDensityError(f"Fisher information is not positive and finite: {total}")
    # tail probe: the integrand mass beyond the cut must be negligible
    probe = max(abs(integrand(lo) * (centre - lo)), abs(integrand(hi) * (hi - centre)))
    if not np.isfinite(probe) or probe > 1e-6 * total:
        raise IllPosedDensityError("Fisher information integrand does not decay in the tails")
    return total


def _stieltjes_grid(jumps, n_fine):
    """Fine u-grid on [0, 1] with the endpoints clustered and jumps as knots."""
    t = np.linspace(0.0, 1.0, n_fine + 1)
    # cosine clustering resolves the behaviour of f(F^{-1}(u)) near 0 and 1
    u = 0.5 - 0.5 * np.cos(np.pi * t)
    u = np.union1d(u, [j for j in jumps if 0 < j < 1])
    return u


def c_h(phi, f, n_fine=2**16):
    """Curvature constant ``-int phi(F(x)) f'(x) dx`` evaluated in u-space.

    Integrating by parts gives ``int phi(u) d[-h(u)]`` with ``h = f o F^{-1}``,
    approximated by a midpoint Riemann-Stieltjes sum.
    """
    u = _stieltjes_grid(phi.jump_points, n_fine)
    with np.errstate(over="ignore", invalid="ignore"):
        h = f.pdf(f.ppf(u))
    h[0] = h[-1] = 0.0
    if not np.all(np.isfinite(h)):
        raise NumericError("non-finite density values in c_H quadrature")
    mid = 0.5 * (u[1:] + u[:-1])
    val = float(np.sum(phi(mid) * -(np.diff(h))))
    if not np.isfinite(val):
        raise NumericError("c_H quadrature did not converge")
    return val


def optimal_generator(f, grid_size=GRID_SIZE):
    """Variance-minimising generator ``-(f'/f)(F^{-1}(u)) / sqrt(I(f))``.

    Tabulated on ``[delta, 1 - delta]`` with ``delta = 1/(2M)`` and extended
    constantly outside, which bounds otherwise unbounded scores (e.g. normal).
    """
    info = fisher_information(f)
    root = math.sqrt(info)

    def func(u):
        return -f.score(f.ppf(u)) / root

    raw = tabulated_generator(func, grid_size, jump_points=f.score_jumps,
                              params={"source": "optimal", "density": f.to_dict(),
                                      "fisher_information": info})
    return normalize(raw)


def flatten(phi, eps, normalize=True):
    """Flatten ``phi`` outside ``[eps, 1 - eps]``; re-normalise unless told not to."""
    if not 0.0 <= eps < 0.5:
        raise InvalidParameterError("eps must lie in [0, 1/2)")
    if eps == 0.0:
        return phi
    jumps = tuple(j for j in phi.jump_points if eps < j < 1.0 - eps)
    # an eps below float resolution at 1 adds no representable knot there
    knots = [k for k in (eps, 1.0 - eps) if 0.0 < k < 1.0]
    u = _with_jumps(np.union1d(base_grid(phi.grid_size), knots), jumps)
    raw_v = np.asarray(phi(np.clip(u, eps, 1.0 - eps)), dtype=float)
    for j in jumps:
        idx = np.flatnonzero(u == j)
        if len(idx) == 2:
            raw_v[idx[0]] = float(phi(np.array([j - 1e-12]))[0])
            raw_v[idx[1]] = float(phi(np.array([j + 1e-12]))[0])
    raw_bound = float(np.max(np.abs(raw_v)))
    if normalize:
        center = _trapezoid(u, raw_v)
        scale = math.sqrt(_trapezoid(u, (raw_v - center) ** 2))
        if scale <= 0:
            raise ZeroVarianceError("flattened generator is constant")
    else:
        center, scale = 0.0, 1.0
    params = {"eps": float(eps), "center": center, "scale": scale,
              "raw_bound": raw_bound, "_base": phi}
    return ScoreGenerator("flattened", params, u, (raw_v - center) / scale, jumps)


# ---------------------------------------------------------------------------
# data-driven optimal score


def silverman_bandwidth(x):
    """``0.9 * min(sd, IQR/1.34) * m^(-1/5)``; falls back to sd when IQR = 0."""
    x = np.asarray(x, dtype=float)
    sd = float(np.std(x, ddof=1))
    q75, q25 = np.percentile(x, [75, 25])
    spread = min(sd, (q75 - q25) / 1.34) if q75 > q25 else sd
    return 0.9 * spread * len(x) ** (-0.2)


def _kde(x_eval, data, bw, chunk=2048):
    """Gaussian KDE density and cdf at ``x_eval``."""
    dens = np.empty(len(x_eval))
    cdf = np.empty(len(x_eval))
    norm = 1.0 / (len(data) * bw * math.sqrt(2.0 * math.pi))
    from scipy.special import ndtr
    for s in range(0, len(x_eval), chunk):
        z = (x_eval[s:s + chunk, None] - data[None, :]) / bw
        dens[s:s + chunk] = norm * np.exp(-0.5 * z * z).sum(axis=1)
        cdf[s:s + chunk] = ndtr(z).mean(axis=1)
    return dens, cdf


@dataclass
class EstimationOptions:
    grid_size: int = GRID_SIZE
    bandwidth_factor: float = 2.0
    floor_ratio: float = 1e-6
    n_eval: int = 8192
    tail_level: float = 1e-3


def estimate_optimal_generator(residuals, options=None):
    """Kernel estimate of the optimal generator from residuals.

    ``g(u) = f_hat(F_hat^{-1}(u))`` is traced along a dense x-grid with a
    Gaussian kernel of width ``bandwidth_factor`` times Silverman's bandwidth
    (the same kernel for density and cdf), and ``-dg/du`` is taken by central
    differences.  The density is floored at ``floor_ratio * max f_hat``.
    """
    opt = options or EstimationOptions()
    r = np.asarray(residuals, dtype=float).ravel()
    if len(r) < 50:
        raise InsufficientDataError("need at least 50 residuals")
    if not np.all(np.isfinite(r)):
        raise InsufficientDataError("residuals must be finite")
    h0 = silverman_bandwidth(r)
    if not h0 > 0:
        raise InsufficientDataError("residuals are degenerate (zero spread)")
    bw = opt.bandwidth_factor * h0
    lo, hi = np.quantile(r, [opt.tail_level, 1.0 - opt.tail_level])
    xs = np.linspace(lo - 3 * bw, hi + 3 * bw, opt.n_eval)
    dens, cdf = _kde(xs, r, bw)
    g = np.maximum(dens, opt.floor_ratio * dens.max())
    # -dg/du along the parametric curve (F_hat(x), f_hat(x)); du floored via g
    dx = np.gradient(xs)
    du = np.maximum(np.gradient(cdf), g * dx)
    slope = -np.gradient(g) / du
    u = base_grid(opt.grid_size)
    keep = np.concatenate([[True], np.diff(cdf) > 0])
    vals = np.interp(u, cdf[keep], slope[keep])
    raw = ScoreGenerator("tabulated", {"source": "estimated", "bandwidth": bw, "m": len(r)},
                         u, vals)
    return normalize(raw)


def generator_from_spec(spec, density=None, residuals=None):
    """Parse a CLI-style score spec such as ``single-level:0.5`` or ``optimal:cauchy``."""
    from .densities import make_density

    spec = spec.strip()
    name, _, arg = spec.partition(":")
    name = name.replace("-", "_")
    if name in ("wilcoxon", "sign", "sinusoidal"):
        return builtin_generator(name)
    if name == "single_level":
        return builtin_generator("single_level", tau=float(arg) if arg else 0.5)
    if name == "optimal":
        f = make_density(arg) if arg else density
        if f is None:
            raise InvalidParameterError("optimal score needs a density")
        return optimal_generator(f)
    if name == "optimal_est":
        if residuals is None:
            raise InvalidParameterError("optimal-est needs pilot residuals")
        return estimate_optimal_generator(residuals)
    raise InvalidParameterError(f"unknown score spec {spec!r}")


__all__ = [
    "GRID_SIZE", "ScoreGenerator", "ScoreTable", "NoiseDensity", "builtin_generator",
    "tabulated_generator", "normalize", "score_table", "is_monotone", "fisher_information",
    "c_h", "optimal_generator", "flatten", "estimate_optimal_generator",
    "EstimationOptions", "silverman_bandwidth", "generator_from_spec",
]
