"""Noise densities with pdf, cdf, quantile and log-density derivative.

Every density here is positive on the whole real line.  ``score(x)`` returns
``f'(x) / f(x)``; ``score_jumps`` lists the probability levels ``u`` at which
``score(F^{-1}(u))`` is discontinuous, so tabulations can keep the jump sharp.
"""
from __future__ import annotations

import numpy as np
from scipy import special, stats

from .errors import InvalidParameterError

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


class NoiseDensity:
    name = "custom"
    score_jumps: tuple = ()

    def pdf(self, x):
        return np.exp(self.logpdf(x))

    def logpdf(self, x):
        raise NotImplementedError

    def cdf(self, x):
        raise NotImplementedError

    def ppf(self, u):
        return _invert_cdf(self, u)

    def score(self, x):
        """Derivative of the log-density, ``f'(x)/f(x)``."""
        x = np.asarray(x, dtype=float)
        h = 1e-5 * (1.0 + np.abs(x))
        return (self.logpdf(x + h) - self.logpdf(x - h)) / (2.0 * h)

    def sample(self, rng, size):
        u = rng.uniform(size=size)
        return self.ppf(u)

    def breakpoints(self):
        """Points where quadrature should split (modes, kinks)."""
        return (0.0,)

    def to_dict(self):
        return {"kind": self.name}

    def __repr__(self):
        params = ", ".join(f"{k}={v!r}" for k, v in self.to_dict().items() if k != "kind")
        return f"{type(self).__name__}({params})"


def _invert_cdf(density, u, lo=-1.0, hi=1.0, iters=200):
    """Vectorised bisection for the quantile function of a continuous cdf."""
    u = np.asarray(u, dtype=float)
    out_shape = u.shape
    u = u.ravel()
    lo = np.full_like(u, lo)
    hi = np.full_like(u, hi)
    # expand brackets until they contain the target level
    for _ in range(200):
        bad = density.cdf(lo) > u
        if not bad.any():
            break
        lo[bad] = 2.0 * lo[bad] - 1.0
    for _ in range(200):
        bad = density.cdf(hi) < u
        if not bad.any():
            break
        hi[bad] = 2.0 * hi[bad] + 1.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if np.all((mid == lo) | (mid == hi)):
            break
        below = density.cdf(mid) < u
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    x = 0.5 * (lo + hi)
    x[u <= 0.0] = -np.inf
    x[u >= 1.0] = np.inf
    return x.reshape(out_shape)


class Normal(NoiseDensity):
    name = "normal"

    def __init__(self, loc=0.0, scale=1.0):
        if scale <= 0:
            raise InvalidParameterError("scale must be positive")
        self.loc, self.scale = float(loc), float(scale)

    def logpdf(self, x):
        z = (np.asarray(x, dtype=float) - self.loc) / self.scale
        return -0.5 * z * z - _LOG_SQRT_2PI - np.log(self.scale)

    def cdf(self, x):
        return special.ndtr((np.asarray(x, dtype=float) - self.loc) / self.scale)

    def ppf(self, u):
        return self.loc + self.scale * special.ndtri(u)

    def score(self, x):
        return -(np.asarray(x, dtype=float) - self.loc) / self.scale**2

    def sample(self, rng, size):
        return rng.normal(self.loc, self.scale, size=size)

    def breakpoints(self):
        return (self.loc,)

    def to_dict(self):
        return {"kind": self.name, "loc": self.loc, "scale": self.scale}


class Laplace(NoiseDensity):
    name = "laplace"
    score_jumps = (0.5,)

    def __init__(self, loc=0.0, scale=1.0):
        if scale <= 0:
            raise InvalidParameterError("scale must be positive")
        self.loc, self.scale = float(loc), float(scale)

    def logpdf(self, x):
        z = np.abs(np.asarray(x, dtype=float) - self.loc) / self.scale
        return -z - np.log(2.0 * self.scale)

    def cdf(self, x):
        return stats.laplace.cdf(x, self.loc, self.scale)

    def ppf(self, u):
        return stats.laplace.ppf(u, self.loc, self.scale)

    def score(self, x):
        return -np.sign(np.asarray(x, dtype=float) - self.loc) / self.scale

    def sample(self, rng, size):
        return rng.laplace(self.loc, self.scale, size=size)

    def breakpoints(self):
        return (self.loc,)

    def to_dict(self):
        return {"kind": self.name, "loc": self.loc, "scale": self.scale}


class Cauchy(NoiseDensity):
    name = "cauchy"

    def __init__(self, loc=0.0, scale=1.0):
        if scale <= 0:
            raise InvalidParameterError("scale must be positive")
        self.loc, self.scale = float(loc), float(scale)

    def logpdf(self, x):
        z = (np.asarray(x, dtype=float) - self.loc) / self.scale
        return -np.log(np.pi * self.scale) - np.log1p(z * z)

    def cdf(self, x):
        return stats.cauchy.cdf(x, self.loc, self.scale)

    def ppf(self, u):
        return stats.cauchy.ppf(u, self.loc, self.scale)

    def score(self, x):
        z = (np.asarray(x, dtype=float) - self.loc) / self.scale
        return -2.0 * z / (1.0 + z * z) / self.scale

    def sample(self, rng, size):
        return self.loc + self.scale * rng.standard_cauchy(size=size)

    def breakpoints(self):
        return (self.loc,)

    def to_dict(self):
        return {"kind": self.name, "loc": self.loc, "scale": self.scale}


class StudentT(NoiseDensity):
    name = "student_t"

    def __init__(self, df, loc=0.0, scale=1.0):
        if df <= 0 or scale <= 0:
            raise InvalidParameterError("df and scale must be positive")
        self.df, self.loc, self.scale = float(df), float(loc), float(scale)

    def logpdf(self, x):
        return stats.t.logpdf(x, self.df, self.loc, self.scale)

    def cdf(self, x):
        return stats.t.cdf(x, self.df, self.loc, self.scale)

    def ppf(self, u):
        return stats.t.ppf(u, self.df, self.loc, self.scale)

    def score(self, x):
        z = (np.asarray(x, dtype=float) - self.loc) / self.scale
        return -(self.df + 1.0) * z / (self.df + z * z) / self.scale

    def sample(self, rng, size):
        return self.loc + self.scale * rng.standard_t(self.df, size=size)

    def breakpoints(self):
        return (self.loc,)

    def to_dict(self):
        return {"kind": self.name, "df": self.df, "loc": self.loc, "scale": self.scale}


class GaussianMixture(NoiseDensity):
    """Finite location-scale mixture of normals."""

    name = "gaussian_mixture"

    def __init__(self, weights=(0.5, 0.5), means=(-1.5, 1.5), sds=(0.1, 0.1)):
        w = np.asarray(weights, dtype=float)
        if w.ndim != 1 or np.any(w <= 0) or not np.isclose(w.sum(), 1.0):
            raise InvalidParameterError("mixture weights must be positive and sum to 1")
        self.weights = w
        self.means = np.asarray(means, dtype=float)
        self.sds = np.asarray(sds, dtype=float)
        if not (len(self.means) == len(self.sds) == len(w)) or np.any(self.sds <= 0):
            raise InvalidParameterError("means/sds must match weights; sds positive")

    def _component_logpdf(self, x):
        z = (x[..., None] - self.means) / self.sds
        return np.log(self.weights) - 0.5 * z * z - _LOG_SQRT_2PI - np.log(self.sds)

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        return special.logsumexp(self._component_logpdf(x), axis=-1)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.sum(self.weights * special.ndtr((x[..., None] - self.means) / self.sds), axis=-1)

    def ppf(self, u):
        spread = float(np.max(np.abs(self.means)) + 10 * np.max(self.sds))
        return _invert_cdf(self, u, lo=-spread, hi=spread)

    def score(self, x):
        x = np.asarray(x, dtype=float)
        lc = self._component_logpdf(x)
        resp = np.exp(lc - special.logsumexp(lc, axis=-1, keepdims=True))
        return np.sum(resp * (-(x[..., None] - self.means) / self.sds**2), axis=-1)

    def sample(self, rng, size):
        comp = rng.choice(len(self.weights), size=size, p=self.weights)
        return rng.normal(self.means[comp], self.sds[comp])

    def breakpoints(self):
        return tuple(sorted(set(self.means.tolist()) | {0.0}))

    def to_dict(self):
        return {"kind": self.name, "weights": self.weights.tolist(),
                "means": self.means.tolist(), "sds": self.sds.tolist()}


class SmoothedUniform(NoiseDensity):
    """Law of ``U + noise_sd * Z`` with ``U ~ Unif[-half_width, half_width]``."""

    name = "smoothed_uniform"

    def __init__(self, half_width=1.0, noise_sd=0.1):
        if half_width <= 0 or noise_sd <= 0:
            raise InvalidParameterError("half_width and noise_sd must be positive")
        self.half_width, self.noise_sd = float(half_width), float(noise_sd)

    def _log_mass(self, x):
        # log(Phi(a) - Phi(b)) with a = (|x|+c)/s, b = (|x|-c)/s, computed on the
        # upper tail to avoid cancellation; the density is symmetric.
        ax = np.abs(np.asarray(x, dtype=float))
        a = (ax + self.half_width) / self.noise_sd
        b = (ax - self.half_width) / self.noise_sd
        la, lb = special.log_ndtr(-a), special.log_ndtr(-b)
        return lb + np.log1p(-np.exp(la - lb)), a, b

    def logpdf(self, x):
        lm, _, _ = self._log_mass(x)
        return lm - np.log(2.0 * self.half_width)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        s, c = self.noise_sd, self.half_width

        def antideriv(t):
            # integral of Phi(t/s) dt
            z = t / s
            return t * special.ndtr(z) + s * np.exp(-0.5 * z * z) / np.sqrt(2 * np.pi)

        return (antideriv(x + c) - antideriv(x - c)) / (2.0 * c)

    def ppf(self, u):
        spread = self.half_width + 40 * self.noise_sd
        return _invert_cdf(self, u, lo=-spread, hi=spread)

    def score(self, x):
        x = np.asarray(x, dtype=float)
        lm, a, b = self._log_mass(x)
        lphi_a = -0.5 * a * a - _LOG_SQRT_2PI
        lphi_b = -0.5 * b * b - _LOG_SQRT_2PI
        mag = (np.exp(lphi_a - lm) - np.exp(lphi_b - lm)) / self.noise_sd
        return np.sign(x) * mag

    def sample(self, rng, size):
        return rng.uniform(-self.half_width, self.half_width, size=size) + \
            self.noise_sd * rng.standard_normal(size=size)

    def breakpoints(self):
        return (-self.half_width, 0.0, self.half_width)

    def to_dict(self):
        return {"kind": self.name, "half_width": self.half_width, "noise_sd": self.noise_sd}


_REGISTRY = {
    "normal": Normal,
    "laplace": Laplace,
    "cauchy": Cauchy,
    "student_t": StudentT,
    "gaussian_mixture": GaussianMixture,
    "mixture": GaussianMixture,
    "smoothed_uniform": SmoothedUniform,
    "smoothed-uniform": SmoothedUniform,
}


def make_density(kind, **params):
    """Build a density by name; ``mixture`` defaults to the simulation mixture."""
    try:
        cls = _REGISTRY[kind]
    except KeyError:
        raise InvalidParameterError(f"unknown noise density {kind!r}") from None
    return cls(**params)


def density_from_dict(d):
    d = dict(d)
    return make_density(d.pop("kind"), **d)
