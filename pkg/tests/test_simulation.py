import csv
import math

import numpy as np
import pytest
from scipy import stats

from grr.errors import InvalidParameterError
from grr.simulation import (
    METHODS,
    NoiseModel,
    SimConfig,
    SolverSettings,
    ar1_covariance,
    canonical_method,
    crossfit_orr,
    design_covariance,
    gen_design,
    make_dataset,
    oracle_mle,
    run_cell,
    run_table,
    run_trial,
    sample_noise,
    table_grid,
    write_table_csv,
)

MIX = NoiseModel.make("gaussian_mixture")


# ----------------------------------------------------------------------------- design

def test_design_column_variance_and_correlation():
    X = gen_design(100_000, 4, 0.7, seed=1)
    assert X[:, 0].var() == pytest.approx(0.5, abs=0.02)
    C = np.corrcoef(X, rowvar=False)
    for j in range(3):
        assert C[j, j + 1] == pytest.approx(0.7, abs=0.02)
    np.testing.assert_allclose(X.T @ X / len(X), design_covariance(4), atol=0.02)


def test_design_uncorrelated_at_rho_zero():
    X = gen_design(100_000, 4, 0.0, seed=2)
    C = np.corrcoef(X, rowvar=False)
    assert np.max(np.abs(C - np.eye(4))) <= 0.02
    # entries are uniform on [-sqrt(3/2), sqrt(3/2)]
    assert np.max(np.abs(X)) <= math.sqrt(1.5)


def test_ar1_covariance():
    np.testing.assert_allclose(ar1_covariance(3, 0.5), [[1, .5, .25], [.5, 1, .5], [.25, .5, 1]])
    with pytest.raises(InvalidParameterError):
        gen_design(10, 2, rho=1.0)


# ----------------------------------------------------------------------------- noise

def test_mixture_moments():
    e = sample_noise(MIX, 1_000_000, seed=3)
    assert e.mean() == pytest.approx(0.0, abs=0.005)
    assert e.var() == pytest.approx(2.26, abs=0.02)


def test_cauchy_median():
    e = sample_noise(NoiseModel.make("cauchy"), 1_000_000, seed=4)
    assert np.median(e) == pytest.approx(0.0, abs=0.01)


@pytest.mark.parametrize("kind", ["cauchy", "gaussian_mixture", "smoothed_uniform", "normal", "laplace"])
def test_noise_samplers_match_their_cdf(kind):
    model = NoiseModel.make(kind)
    e = sample_noise(model, 100_000, seed=5)
    assert stats.kstest(e, model.density.cdf).statistic <= 0.01


def test_smoothed_uniform_is_uniform_plus_gaussian():
    e = sample_noise(NoiseModel.make("smoothed_uniform"), 1_000_000, seed=6)
    assert e.var() == pytest.approx(1 / 3 + 0.01, abs=0.005)


def test_noise_model_aliases_and_errors():
    assert NoiseModel.make("mixture") == MIX
    assert MIX.to_dict()["means"] == [-1.5, 1.5]
    with pytest.raises(InvalidParameterError):
        NoiseModel.make("uniform")


def test_method_aliases():
    assert canonical_method("orr-orc") == "ORR_orc"
    assert canonical_method("mle") == "OracleMLE"
    assert set(METHODS) == {"SRR", "WRR", "ORR_est", "ORR_orc", "OracleMLE"}
    with pytest.raises(InvalidParameterError):
        canonical_method("lad")


def test_config_validation():
    with pytest.raises(InvalidParameterError):
        SimConfig(n=5, p=5, noise=MIX)
    with pytest.raises(InvalidParameterError):
        SimConfig(n=50, p=2, noise=MIX, methods=())
    with pytest.raises(InvalidParameterError):
        SimConfig(n=50, p=2, noise=MIX, crossfit_mode="median")


# ----------------------------------------------------------------------------- trials

def test_datasets_are_seeded_per_replication():
    cfg = SimConfig(n=100, p=3, noise=MIX, seed=9)
    a, b = make_dataset(cfg, 0)[0], make_dataset(cfg, 0)[0]
    np.testing.assert_array_equal(a.X, b.X)
    np.testing.assert_array_equal(a.Y, b.Y)
    c = make_dataset(cfg, 1)[0]
    assert not np.array_equal(a.Y, c.Y)
    np.testing.assert_array_equal(make_dataset(cfg, 0)[1], np.ones(3))


def test_noiseless_wilcoxon_recovers_truth():
    # constant steps oscillate at O(step) around the sharp minimum, so a small
    # stage-two step is used for exact recovery
    solver = SolverSettings(t1=500, step=1e-4)
    cfg = SimConfig(n=1000, p=5, noise=MIX, methods=("WRR",), noiseless=True, solver=solver)
    for r in range(3):
        err, _, msg = run_trial(cfg, r)["WRR"]
        assert msg is None and err <= 1e-3


def test_trial_reports_every_method():
    cfg = SimConfig(n=300, p=3, noise=NoiseModel.make("cauchy"), methods=METHODS, seed=1)
    res = run_trial(cfg, 0)
    assert set(res) == set(METHODS)
    for m, (err, ms, msg) in res.items():
        assert msg is None and 0 <= err < 1.0 and ms >= 0


def test_trial_is_deterministic():
    cfg = SimConfig(n=300, p=3, noise=MIX, methods=("WRR", "ORR_est", "OracleMLE"), seed=2)
    a, b = run_trial(cfg, 4), run_trial(cfg, 4)
    assert {m: v[0] for m, v in a.items()} == {m: v[0] for m, v in b.items()}


def test_fit_errors_are_recorded_not_raised():
    cfg = SimConfig(n=200, p=2, noise=NoiseModel.make("cauchy"), methods=("WRR", "SRR"),
                    solver=SolverSettings(step=1e6))
    res = run_trial(cfg, 0)
    for m in ("WRR", "SRR"):
        err, _, msg = res[m]
        assert math.isnan(err) and "DivergenceError" in msg


def test_crossfit_modes():
    data, beta = make_dataset(SimConfig(n=900, p=3, noise=NoiseModel.make("cauchy"), seed=3), 0)
    for mode in ("average", "pooled"):
        b = crossfit_orr(data, SolverSettings(), mode=mode, seed=1)
        assert np.linalg.norm(b - beta) < 0.3
    with pytest.raises(InvalidParameterError):
        crossfit_orr(data, SolverSettings(), mode="median")


def test_oracle_mle_on_normal_matches_least_squares():
    data, _ = make_dataset(SimConfig(n=500, p=3, noise=NoiseModel.make("normal"), seed=4), 0)
    ols = np.linalg.lstsq(data.X, data.Y, rcond=None)[0]
    b = oracle_mle(data, NoiseModel.make("normal").density, np.zeros(3))
    np.testing.assert_allclose(b, ols, atol=1e-6)


def test_mixture_orr_beats_wrr_in_median():
    cfg = SimConfig(n=1800, p=5, noise=MIX, methods=("WRR", "ORR_orc"), replications=50, seed=11)
    wrr, orr = run_cell(cfg)
    assert np.median(orr.errors) < np.median(wrr.errors)


def test_mixture_mle_close_to_orr():
    cfg = SimConfig(n=1800, p=5, noise=MIX, methods=("ORR_orc", "OracleMLE"), replications=30,
                    seed=12)
    orr, mle = run_cell(cfg)
    assert mle.mean_l2 <= orr.mean_l2 + 0.005


# ----------------------------------------------------------------------------- tables

def test_run_table_needs_two_replications():
    cfg = SimConfig(n=50, p=2, noise=MIX, methods=("WRR",))
    with pytest.raises(InvalidParameterError):
        run_table([cfg], replications=1)


def test_run_table_summary_and_csv(tmp_path):
    cfgs = [SimConfig(n=120, p=2, noise=NoiseModel.make(k), methods=("WRR", "ORR_orc"), seed=5)
            for k in ("cauchy", "gaussian_mixture")]
    rows = run_table(cfgs, replications=4)
    assert [(r.noise, r.method) for r in rows] == [
        ("cauchy", "WRR"), ("cauchy", "ORR_orc"),
        ("gaussian_mixture", "WRR"), ("gaussian_mixture", "ORR_orc")]
    for r in rows:
        assert r.reps == 4 and r.failures == 0
        assert r.mean_l2 == pytest.approx(np.mean(r.errors))
        assert r.sd_l2 == pytest.approx(np.std(r.errors, ddof=1))
        assert r.se == pytest.approx(r.sd_l2 / 2)
    again = run_table(cfgs, replications=4)
    assert [r.mean_l2 for r in again] == [r.mean_l2 for r in rows]
    path = tmp_path / "t.csv"
    write_table_csv(rows, path)
    with open(path) as fh:
        got = list(csv.DictReader(fh))
    assert len(got) == 4 and float(got[0]["mean_l2"]) == pytest.approx(rows[0].mean_l2)


def test_table_grid_covers_every_cell():
    grid = table_grid()
    assert len(grid) == 3 * 3 * 2
    assert {(c.noise.kind, c.n, c.p) for c in grid} >= {("cauchy", 1800, 5),
                                                        ("smoothed_uniform", 3000, 10)}
    assert all(c.methods == METHODS for c in grid)
