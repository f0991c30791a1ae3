import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from grr.densities import Cauchy, GaussianMixture, Laplace, Normal, SmoothedUniform, StudentT
from grr.errors import (
    IllPosedDensityError,
    InsufficientDataError,
    InvalidParameterError,
    ZeroVarianceError,
)
from grr.scores import (
    ScoreGenerator,
    ScoreTable,
    builtin_generator,
    c_h,
    estimate_optimal_generator,
    fisher_information,
    flatten,
    generator_from_spec,
    is_monotone,
    normalize,
    optimal_generator,
    score_table,
    silverman_bandwidth,
    tabulated_generator,
)

SQRT12 = math.sqrt(12.0)


# ----------------------------------------------------------------------------- built-ins

def test_wilcoxon_is_zero_at_half():
    assert builtin_generator("wilcoxon")(np.array([0.5]))[0] == pytest.approx(0.0, abs=1e-15)


def test_sinusoidal_at_three_quarters():
    assert builtin_generator("sinusoidal")(np.array([0.75]))[0] == pytest.approx(math.sqrt(2.0))


def test_single_level_half_at_point_three():
    phi = builtin_generator("single_level", tau=0.5)
    assert phi(np.array([0.3]))[0] == pytest.approx(-1.0)


@pytest.mark.parametrize("tau", [0.0, 1.0, -0.1, 1.5, None])
def test_single_level_rejects_bad_tau(tau):
    with pytest.raises(InvalidParameterError):
        builtin_generator("single_level", tau=tau)


@pytest.mark.parametrize("kind,jumps", [("wilcoxon", ()), ("sign", (0.5,)),
                                        ("sinusoidal", ())])
def test_builtin_jump_points(kind, jumps):
    assert builtin_generator(kind).jump_points == jumps


def test_single_level_jump_at_tau():
    assert builtin_generator("single_level", tau=0.3).jump_points == (0.3,)


@pytest.mark.parametrize("spec", ["wilcoxon", "sign", "sinusoidal", "single-level:0.5",
                                  "single-level:0.2"])
def test_builtin_generators_are_normalized(spec):
    phi = generator_from_spec(spec)
    m, s2 = phi.integrals()
    assert abs(m) <= 1e-6
    assert abs(s2 - 1.0) <= 1e-4
    assert phi.bound >= np.max(np.abs(phi.grid_v))


def test_builtin_integrals_against_quad():
    # independent route: adaptive quadrature of the closed forms
    for kind, f in [("wilcoxon", lambda u: SQRT12 * (u - 0.5)),
                    ("sinusoidal", lambda u: math.sqrt(2) * math.sin((2 * u - 1) * math.pi))]:
        m = integrate.quad(f, 0, 1)[0]
        s2 = integrate.quad(lambda u: f(u) ** 2, 0, 1)[0]
        phi = builtin_generator(kind)
        gm, gs2 = phi.integrals()
        assert gm == pytest.approx(m, abs=1e-6)
        assert gs2 == pytest.approx(s2, abs=1e-5)


def test_jump_is_not_smoothed():
    phi = builtin_generator("sign")
    np.testing.assert_allclose(phi(np.array([0.5 - 1e-9, 0.5 + 1e-9])), [-1.0, 1.0])


# ----------------------------------------------------------------------------- normalize

def test_normalize_identity_gives_wilcoxon():
    raw = tabulated_generator(lambda u: u)
    phi = normalize(raw)
    u = np.linspace(0.01, 0.99, 99)
    np.testing.assert_allclose(phi(u), SQRT12 * (u - 0.5), atol=1e-6)


def test_normalize_is_idempotent():
    phi = builtin_generator("sinusoidal")
    again = normalize(phi)
    np.testing.assert_allclose(again.grid_v, phi.grid_v, atol=1e-8)


def test_normalize_constant_raises():
    with pytest.raises(ZeroVarianceError):
        normalize(tabulated_generator(lambda u: np.full_like(u, 3.0)))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=3, max_size=6))
def test_normalize_polynomials(coefs):
    raw = tabulated_generator(lambda u: np.polyval(coefs, u))
    if np.ptp(raw.grid_v) < 1e-6:
        return
    m, s2 = normalize(raw).integrals()
    assert abs(m) <= 1e-8
    assert abs(s2 - 1.0) <= 1e-6


# ----------------------------------------------------------------------------- tables

def test_wilcoxon_table_n3():
    a = np.asarray(score_table(builtin_generator("wilcoxon"), 3))
    np.testing.assert_allclose(a, [-SQRT12 / 4, 0.0, SQRT12 / 4], atol=1e-12)


def test_sign_table_n4():
    a = np.asarray(score_table(builtin_generator("sign"), 4))
    np.testing.assert_allclose(a, [-1, -1, 1, 1])


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 2000), st.sampled_from(["wilcoxon", "sign", "sinusoidal",
                                              "single-level:0.3"]))
def test_tables_sum_to_zero_and_stay_close(n, spec):
    phi = generator_from_spec(spec)
    a = np.asarray(score_table(phi, n))
    assert abs(a.sum()) <= n * 1e-8
    raw = phi(np.arange(1, n + 1) / (n + 1.0))
    bound = 2.0 * (np.sum(np.abs(raw)) / n) / n
    # re-centring shifts by the mean of the raw values
    assert np.max(np.abs(a - raw)) <= max(bound, abs(raw.mean())) + 1e-12


def test_score_table_needs_two():
    with pytest.raises(InvalidParameterError):
        score_table(builtin_generator("wilcoxon"), 1)


def test_is_monotone():
    assert is_monotone(score_table(builtin_generator("wilcoxon"), 50))
    sin = builtin_generator("sinusoidal")
    # the first decreasing pair of knots i/(n+1) appears at n = 6
    assert is_monotone(score_table(sin, 5), tol=1e-12)  # tied pair, equal up to rounding
    assert all(not is_monotone(score_table(sin, n)) for n in range(6, 60))
    assert is_monotone(ScoreTable([0.0]))


# ----------------------------------------------------------------------------- Fisher information

@pytest.mark.parametrize("f,expected", [(Normal(), 1.0), (Cauchy(), 0.5), (Laplace(), 1.0),
                                        (StudentT(3), 4.0 / 6.0), (Normal(scale=2.0), 0.25)])
def test_fisher_information_closed_forms(f, expected):
    # Student t: (df+1)/(df+3)
    assert fisher_information(f) == pytest.approx(expected, abs=1e-6)


def test_fisher_information_of_narrow_mixture():
    # well-separated components: I ~ 1/sd^2 plus a tiny between-component term
    assert fisher_information(GaussianMixture()) == pytest.approx(100.0, rel=1e-3)


def test_fisher_information_divergent():
    class Bad(Normal):
        def score(self, x):
            return np.exp(np.abs(np.asarray(x, float)) ** 2)

    with pytest.raises(IllPosedDensityError):
        fisher_information(Bad())


# ----------------------------------------------------------------------------- c_H

def _c_h_xspace(phi, f, lo, hi):
    # independent oracle: -int phi(F(x)) f'(x) dx in x-space
    g = lambda x: -float(phi(np.array([f.cdf(x)]))[0]) * float(f.pdf(x) * f.score(x))
    return integrate.quad(g, lo, hi, limit=400, points=[0.0])[0]


def test_c_h_wilcoxon_normal():
    val = c_h(builtin_generator("wilcoxon"), Normal())
    assert val == pytest.approx(math.sqrt(3.0 / math.pi), abs=1e-3)
    assert val == pytest.approx(_c_h_xspace(builtin_generator("wilcoxon"), Normal(), -12, 12),
                                abs=1e-4)


def test_c_h_sinusoidal_cauchy_matches_x_space():
    phi = builtin_generator("sinusoidal")
    assert c_h(phi, Cauchy()) == pytest.approx(_c_h_xspace(phi, Cauchy(), -1e4, 1e4), abs=1e-3)


@pytest.mark.parametrize("f", [Normal(), Laplace(), Cauchy()])
def test_optimal_self_consistency(f):
    phi = optimal_generator(f)
    assert c_h(phi, f) == pytest.approx(math.sqrt(fisher_information(f)), abs=1e-3)


def test_c_h_sign_flip():
    f = Cauchy()
    phi = optimal_generator(f)
    neg = ScoreGenerator("tabulated", {}, phi.grid_u, -phi.grid_v)
    assert c_h(neg, f) == pytest.approx(-math.sqrt(0.5), abs=1e-3)


def test_c_h_single_level_laplace():
    # f(F^{-1}(1/2)) / sqrt(1/4) = (1/2) / (1/2)
    assert c_h(builtin_generator("single_level", tau=0.5), Laplace()) == pytest.approx(1.0, abs=1e-4)


# ----------------------------------------------------------------------------- optimal scores

def test_optimal_cauchy_is_sinusoidal():
    u = np.linspace(0.1, 0.9, 9)
    expected = math.sqrt(2.0) * np.sin((2 * u - 1) * math.pi)
    np.testing.assert_allclose(optimal_generator(Cauchy())(u), expected, atol=1e-4)


def test_optimal_laplace_is_sign():
    phi = optimal_generator(Laplace())
    u = np.array([0.05, 0.2, 0.45, 0.55, 0.8, 0.95])
    np.testing.assert_allclose(phi(u), np.sign(u - 0.5), atol=1e-4)


def test_optimal_normal_is_quantile():
    phi = optimal_generator(Normal())
    u = np.linspace(0.01, 0.99, 50)
    np.testing.assert_allclose(phi(u), stats.norm.ppf(u), atol=2e-3)
    assert abs(phi.integrals()[1] - 1.0) <= 1e-4
    assert not is_monotone(score_table(optimal_generator(Cauchy()), 100))


@pytest.mark.parametrize("f", [GaussianMixture(), SmoothedUniform(), StudentT(3)])
def test_optimal_generator_normalized(f):
    m, s2 = optimal_generator(f).integrals()
    assert abs(m) <= 1e-6 and abs(s2 - 1.0) <= 1e-4


# ----------------------------------------------------------------------------- flatten

def test_flatten_zero_is_identity():
    phi = builtin_generator("sinusoidal")
    assert flatten(phi, 0.0) is phi


def test_flatten_normal_optimal_bound():
    flat = flatten(optimal_generator(Normal()), 0.05, normalize=False)
    assert flat.bound == pytest.approx(stats.norm.ppf(0.95), abs=2e-3)
    assert np.isfinite(flatten(optimal_generator(Normal()), 0.05).bound)


def test_flatten_rejects_half():
    with pytest.raises(InvalidParameterError):
        flatten(builtin_generator("wilcoxon"), 0.5)


def test_flatten_is_constant_outside():
    flat = flatten(builtin_generator("wilcoxon"), 0.1)
    np.testing.assert_allclose(flat(np.array([0.01, 0.05, 0.1])), flat(np.array([0.1] * 3)))
    m, s2 = flat.integrals()
    assert abs(m) < 1e-8 and abs(s2 - 1) < 1e-6


@settings(max_examples=20, deadline=None)
@given(st.floats(0.0, 0.45), st.floats(0.0, 0.45))
def test_flatten_bound_monotone(e1, e2):
    e1, e2 = sorted((e1, e2))
    base = optimal_generator(Normal())
    b1 = flatten(base, e1, normalize=False).bound if e1 > 0 else base.bound
    b2 = flatten(base, e2, normalize=False).bound if e2 > 0 else base.bound
    assert b1 >= b2 - 1e-12


def test_flatten_keeps_interior_jump():
    flat = flatten(builtin_generator("sign"), 0.1)
    assert 0.5 in flat.jump_points


# ----------------------------------------------------------------------------- estimation

def test_silverman_bandwidth_formula():
    x = np.random.default_rng(0).normal(size=1000)
    iqr = np.subtract(*np.percentile(x, [75, 25]))
    expected = 0.9 * min(x.std(ddof=1), iqr / 1.34) * 1000 ** (-0.2)
    assert silverman_bandwidth(x) == pytest.approx(expected)


def test_estimated_laplace_score_shape():
    # tolerance calibrated once on this seed away from the jump at 1/2
    r = np.random.default_rng(123).laplace(size=5000)
    phi = estimate_optimal_generator(r)
    u = np.concatenate([np.linspace(0.1, 0.3, 41), np.linspace(0.7, 0.9, 41)])
    assert np.max(np.abs(phi(u) - np.sign(u - 0.5))) <= 0.25
    v = phi(np.linspace(0.1, 0.9, 81))
    assert np.all(np.diff(v) >= -0.05)
    m, s2 = phi.integrals()
    assert abs(m) <= 1e-6 and abs(s2 - 1) <= 1e-4


def test_estimated_cauchy_score_resembles_sinusoid():
    r = np.random.default_rng(5).standard_cauchy(size=5000)
    phi = estimate_optimal_generator(r)
    u = np.linspace(0.05, 0.95, 91)
    corr = np.corrcoef(phi(u), np.sin((2 * u - 1) * np.pi))[0, 1]
    assert corr > 0.95


def test_estimate_is_shift_invariant():
    r = np.random.default_rng(1).logistic(size=800)
    a = estimate_optimal_generator(r)
    b = estimate_optimal_generator(r + 3.7)
    np.testing.assert_allclose(a.grid_v, b.grid_v, atol=1e-6)


def test_estimate_needs_data():
    with pytest.raises(InsufficientDataError):
        estimate_optimal_generator(np.ones(100))
    with pytest.raises(InsufficientDataError):
        estimate_optimal_generator(np.arange(10.0))


# ----------------------------------------------------------------------------- serialisation

@pytest.mark.parametrize("phi", [builtin_generator("sign"),
                                 flatten(builtin_generator("sinusoidal"), 0.05),
                                 optimal_generator(Cauchy())])
def test_generator_json_round_trip(phi):
    d = json.loads(json.dumps(phi.to_dict()))
    back = ScoreGenerator.from_dict(d)
    u = np.linspace(0.001, 0.999, 333)
    np.testing.assert_array_equal(back(u), phi(u))
    assert back.jump_points == phi.jump_points
    assert back.bound == phi.bound


def test_generator_from_spec_errors():
    with pytest.raises(InvalidParameterError):
        generator_from_spec("nonsense")
    with pytest.raises(InvalidParameterError):
        generator_from_spec("optimal")
