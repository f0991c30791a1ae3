"""Correspondence between GRR scores and weighted composite quantile regression.

With levels ``tau_k = k/n`` and weights ``w_k``, the weighted CQR objective
coincides with a GRR loss whose scores are::

    a_n(i) = sum_k w_k tau_k - sum_{k >= i} w_k

and conversely ``w_i = a_n(i+1) - a_n(i)``.  This module also evaluates the two
asymptotic-variance formulas (GRR and finite-K weighted CQR) and checks that
the latter converges to the former as the number of levels grows.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import (
    ConditionViolationError,
    DegenerateWeightsError,
    DimensionMismatchError,
    InvalidParameterError,
    NumericError,
)
from .scores import ScoreTable, c_h

COND_LIMIT = 1e12


@dataclass(frozen=True, eq=False)
class CqrWeights:
    taus: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.taus, dtype=float).ravel()
        w = np.asarray(self.weights, dtype=float).ravel()
        if t.shape != w.shape or t.size == 0:
            raise InvalidParameterError("taus and weights must be non-empty and of equal length")
        if np.any(t <= 0) or np.any(t >= 1) or np.any(np.diff(t) <= 0):
            raise InvalidParameterError("taus must be strictly increasing inside (0, 1)")
        if not np.all(np.isfinite(w)):
            raise InvalidParameterError("weights must be finite")
        object.__setattr__(self, "taus", t)
        object.__setattr__(self, "weights", w)

    @property
    def K(self):
        return self.taus.size

    @classmethod
    def uniform_levels(cls, weights, n):
        """Weights on the levels ``k/n``, ``k = 1..len(weights)``."""
        w = np.asarray(weights, dtype=float)
        return cls(np.arange(1, len(w) + 1) / n, w)


def weights_to_scores(w, n):
    """Scores of the GRR loss equivalent to weighted CQR at levels ``k/n``.

    ``w`` carries either ``n`` levels ``1/n, ..., n/n`` or the ``n-1`` interior
    levels (then ``w_n = 0``); a bare weight vector is accepted as well.  The
    last level ``tau_n = 1`` cannot be represented by :class:`CqrWeights`, which
    is why the interior form exists.
    """
    n = int(n)
    if isinstance(w, CqrWeights):
        weights, taus = w.weights, w.taus
        if not np.allclose(taus, np.arange(1, w.K + 1) / n, rtol=0, atol=1e-12):
            raise InvalidParameterError("weights_to_scores needs levels tau_k = k/n")
    else:
        weights = np.asarray(w, dtype=float).ravel()
    if weights.size == n - 1:
        weights = np.append(weights, 0.0)
    if weights.size != n:
        raise InvalidParameterError(f"need K = n (or n - 1) weights, got K={weights.size}, n={n}")
    taus = np.arange(1, n + 1) / n
    tail = np.cumsum(weights[::-1])[::-1]  # tail[i] = sum_{k >= i} w_k
    a = float(weights @ taus) - tail
    return ScoreTable(a - a.mean())


def scores_to_weights(table):
    """Forward differences ``w_i = a(i+1) - a(i)`` on the levels ``i/n``."""
    a = np.asarray(table, dtype=float)
    n = a.size
    if n < 2:
        raise InvalidParameterError("need n >= 2 scores")
    return CqrWeights(np.arange(1, n) / n, np.diff(a))


def quadratic_form(sigma, v):
    """``v' Sigma^{-1} v`` by a Cholesky solve; ill-conditioned ``Sigma`` is refused."""
    S = np.atleast_2d(np.asarray(sigma, dtype=float))
    v = np.asarray(v, dtype=float).ravel()
    if S.shape != (v.size, v.size):
        raise DimensionMismatchError(f"Sigma {S.shape} does not match v of length {v.size}")
    if not np.allclose(S, S.T, rtol=1e-10, atol=1e-12):
        raise NumericError("Sigma must be symmetric")
    try:
        cond = np.linalg.cond(S)
        if not np.isfinite(cond) or cond > COND_LIMIT:
            raise NumericError(f"Sigma is too ill-conditioned (condition number {cond:.3g})")
        factor = linalg.cho_factor(S)
    except (linalg.LinAlgError, np.linalg.LinAlgError) as exc:
        raise NumericError(f"Sigma is not positive definite: {exc}") from exc
    return float(v @ linalg.cho_solve(factor, v))


def grr_asymptotic_variance(phi, f, sigma, v, ch=None):
    """Limiting variance of ``sqrt(n) v'(beta_hat - beta*)``: ``v' Sigma^{-1} v / c_H^2``."""
    ch = c_h(phi, f) if ch is None else float(ch)
    if not ch > 0:
        raise ConditionViolationError(f"c_H = {ch:.6g} is not positive")
    return quadratic_form(sigma, v) / ch**2


def cqr_asymptotic_variance(w, f, sigma, v):
    """Limiting variance of weighted CQR with finitely many levels."""
    t, wt = w.taus, w.weights
    lo = np.minimum.outer(t, t)
    hi = np.maximum.outer(t, t)
    num = float(wt @ (lo * (1.0 - hi)) @ wt)
    den = float(wt @ f.pdf(f.ppf(t)))
    if abs(den) <= 1e-300 or abs(den) <= 1e-14 * float(np.abs(wt).sum()):
        raise DegenerateWeightsError("sum_i w_i f(F^{-1}(tau_i)) vanishes")
    return num / den**2 * quadratic_form(sigma, v)


def derivative_weights(phi, K):
    """Levels ``i/K`` (``i = 1..K-1``) with forward-difference weights of ``phi``."""
    K = int(K)
    if K < 2:
        raise InvalidParameterError("K must be >= 2")
    u = np.arange(1, K + 1) / K
    vals = np.asarray(phi(u), dtype=float)
    return CqrWeights(u[:-1], np.diff(vals))


def _lipschitz_and_jumps(phi):
    u, v = phi.grid_u, phi.grid_v
    du, dv = np.diff(u), np.diff(v)
    jump = du == 0
    slopes = np.abs(dv[~jump] / du[~jump])
    return float(slopes.max(initial=0.0)), float(np.abs(dv[jump]).sum())


@dataclass
class ConvergenceReport:
    K: np.ndarray
    V: np.ndarray
    limit: float
    gaps: np.ndarray
    tolerances: np.ndarray

    @property
    def monotone(self):
        return bool(np.all(np.diff(self.gaps) <= 1e-12 * max(self.limit, 1.0)))

    @property
    def within_tolerance(self):
        return bool(np.all(self.gaps <= self.tolerances))

    @property
    def converged(self):
        return self.monotone and self.within_tolerance

    def rows(self):
        return [(int(k), float(vk), self.limit) for k, vk in zip(self.K, self.V)]


def variance_convergence_check(phi, f, sigma, v, K_list):
    """``V_K`` for each ``K`` against the GRR limit.

    The tolerance for level count ``K`` is ``limit * (10 L + 10 J) / K`` with
    ``L`` the largest grid slope of ``phi`` and ``J`` its total jump size.
    """
    Ks = np.array(sorted(int(k) for k in K_list))
    limit = grr_asymptotic_variance(phi, f, sigma, v)
    V = np.array([cqr_asymptotic_variance(derivative_weights(phi, k), f, sigma, v) for k in Ks])
    L, J = _lipschitz_and_jumps(phi)
    tol = limit * (10.0 * L + 10.0 * J) / Ks
    return ConvergenceReport(Ks, V, limit, np.abs(V - limit), tol)


__all__ = [
    "CqrWeights", "weights_to_scores", "scores_to_weights", "quadratic_form",
    "grr_asymptotic_variance", "cqr_asymptotic_variance", "derivative_weights",
    "variance_convergence_check", "ConvergenceReport",
]
