"""Shared generators for property tests."""
import numpy as np

from grr.scores import normalize, tabulated_generator


def random_generator(rng, n_terms=4, jump=None):
    """A random normalised score-generating function.

    An increasing baseline plus a few random Fourier terms, optionally with a
    jump; the result may be non-monotone.
    """
    coef = rng.normal(scale=0.4, size=(n_terms, 2))
    base = rng.uniform(0.2, 1.5)
    jump_at = () if jump is None else (jump,)
    jh = rng.uniform(0.0, 1.0) if jump is not None else 0.0

    def func(u):
        u = np.asarray(u, dtype=float)
        out = base * (u - 0.5)
        for k, (a, b) in enumerate(coef, start=1):
            out = out + a * np.sin(2 * np.pi * k * u) + b * np.cos(2 * np.pi * k * u)
        if jump is not None:
            out = out + jh * (u > jump)
        return out

    return normalize(tabulated_generator(func, jump_points=jump_at))
