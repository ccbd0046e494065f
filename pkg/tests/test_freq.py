import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from retestkit.data import PairDataset
from retestkit.errors import DomainError, EstimationError
from retestkit.freq import (
    _score_cubic_roots,
    bootstrap,
    estimate_naive,
    estimate_rho_ce,
    estimate_rho_mle,
    naive_sigma_meas_sq,
    sample_mean_var,
    theoretical_naive_bias,
)
from retestkit.simulate import GeneratorSpec, RetestPolicy, simulate_pairs
from retestkit.stats_core import MeasurementDensity

# 50-digit oracle values at (mu=15, sigma_pop=1, sigma_meas=0.8, c=13)
BIAS_ORACLE = 0.10683074086373332
NAIVE_EXPECT = 0.5331692591362667  # 0.64 - bias
RHO_TRUE = 1.0 / 1.64


def make_data(x1, x2=None, cutoff=13.0, stratum="all"):
    x1 = np.asarray(x1, dtype=float)
    if x2 is None:
        x2 = np.full_like(x1, np.nan)
    return PairDataset(ids=[str(i) for i in range(len(x1))],
                       strata=[stratum] * len(x1), x1=x1, x2=x2,
                       cutoff=np.full(len(x1), cutoff))


def table1_data(n, seed, rate=0.0):
    return simulate_pairs(GeneratorSpec(
        population=MeasurementDensity("normal", location=15.0, scale=1.0),
        measurement=MeasurementDensity("normal", scale=0.8),
        policy=RetestPolicy(cutoff=13.0, rate=rate), n=n, seed=seed))


class TestSampleMeanVar:
    def test_two_points(self):
        assert sample_mean_var(make_data([14.0, 16.0])) == (15.0, 2.0)

    def test_constant(self):
        _, v = sample_mean_var(make_data([15.0] * 10))
        assert v == 0.0

    def test_table1_recovery(self):
        data = table1_data(10_000, 21)
        mu, v = sample_mean_var(data)
        assert abs(mu - 15.0) < 3 * np.sqrt(1.64 / 10_000)
        assert abs(v - 1.64) < 3 * 1.64 * np.sqrt(2.0 / 10_000)

    def test_too_few(self):
        with pytest.raises(EstimationError):
            sample_mean_var(make_data([15.0]))


class TestNaive:
    def test_identical_pairs_give_zero(self):
        x1 = np.array([12.0, 12.5, 12.9])
        assert naive_sigma_meas_sq(make_data(x1, x1.copy())) == 0.0

    def test_unconditioned_pairs_unbiased(self):
        spec = GeneratorSpec(
            population=MeasurementDensity("normal", location=15.0, scale=1.0),
            measurement=MeasurementDensity("normal", scale=0.8),
            policy=RetestPolicy(cutoff=100.0), n=1_000_000, seed=31)
        v = naive_sigma_meas_sq(simulate_pairs(spec))
        se = 0.64 * np.sqrt(2.0 / 1_000_000)  # var-of-variance scale
        assert abs(v - 0.64) < 4 * se

    def test_truncated_pairs_biased_to_oracle(self):
        vals = [naive_sigma_meas_sq(table1_data(200_000, 40 + k)) for k in range(5)]
        assert np.mean(vals) == pytest.approx(NAIVE_EXPECT, abs=0.004)

    def test_requires_two_pairs(self):
        with pytest.raises(EstimationError):
            naive_sigma_meas_sq(make_data([12.0, 14.0], [12.1, np.nan]))


class TestTheoreticalBias:
    def test_oracle_value(self):
        assert theoretical_naive_bias(15.0, 1.0, 0.8, 13.0) == pytest.approx(
            BIAS_ORACLE, rel=1e-12)

    def test_vanishes_when_cutoff_above_everything(self):
        assert theoretical_naive_bias(15.0, 1.0, 0.8, 1e3) == 0.0

    def test_vanishes_tiny_meas(self):
        assert theoretical_naive_bias(15.0, 1.0, 1e-9, 13.0) < 1e-30

    def test_rejects_bad_scales(self):
        with pytest.raises(DomainError):
            theoretical_naive_bias(15.0, 0.0, 0.8, 13.0)

    def test_naive_plus_bias_recovers_truth(self):
        # simulated naive estimate + theoretical bias == true sigma_meas^2
        vals = [naive_sigma_meas_sq(table1_data(200_000, 60 + k)) for k in range(5)]
        assert np.mean(vals) + BIAS_ORACLE == pytest.approx(0.64, abs=0.004)


class TestConditionalExpectation:
    def test_zero_shift_gives_rho_one(self):
        x1 = np.array([12.0, 12.4, 12.8, 14.0, 15.0, 16.0])
        x2 = np.array([12.0, 12.4, 12.8, np.nan, np.nan, np.nan])
        est = estimate_rho_ce(make_data(x1, x2))
        assert est.rho_hat == 1.0
        assert est.sigma_meas_sq_hat == 0.0

    def test_population_level_recovery(self):
        # analytic conditional-mean shift maps back to rho = 1/1.64
        data = table1_data(400_000, 71)
        est = estimate_rho_ce(data)
        assert est.rho_hat == pytest.approx(RHO_TRUE, abs=0.01)
        assert est.sigma_pop_sq_hat == pytest.approx(1.0, abs=0.02)
        assert est.sigma_meas_sq_hat == pytest.approx(0.64, abs=0.02)

    def test_cutoff_taken_from_data(self):
        data = table1_data(50_000, 72)
        assert estimate_rho_ce(data).rho_hat == estimate_rho_ce(data, 13.0).rho_hat

    def test_decomposition_identity_exact(self):
        est = estimate_rho_ce(table1_data(10_000, 73))
        assert est.sigma_pop_sq_hat + est.sigma_meas_sq_hat == est.sigma_total_sq_hat


class TestMle:
    def test_cubic_factorization_at_unit_moments(self):
        roots = _score_cubic_roots(1.0, 1.0, 1.0)
        np.testing.assert_allclose(roots, [1.0], atol=1e-12)

    def test_table1_recovery(self):
        est = estimate_rho_mle(table1_data(400_000, 81))
        assert est.sigma_pop_sq_hat == pytest.approx(1.0, abs=0.02)
        assert est.sigma_meas_sq_hat == pytest.approx(0.64, abs=0.02)

    def test_cutoff_free_score(self):
        data = table1_data(20_000, 82)
        est1 = estimate_rho_mle(data)
        altered = PairDataset(data.ids, data.strata, data.x1, data.x2,
                              np.full(len(data), 99.0))
        est2 = estimate_rho_mle(altered)
        for f in ("mu_hat", "sigma_total_sq_hat", "rho_hat",
                  "sigma_pop_sq_hat", "sigma_meas_sq_hat"):
            assert getattr(est1, f) == getattr(est2, f)

    def test_matches_pearson_without_truncation(self):
        spec = GeneratorSpec(
            population=MeasurementDensity("normal", location=15.0, scale=1.0),
            measurement=MeasurementDensity("normal", scale=0.8),
            policy=RetestPolicy(cutoff=100.0), n=100_000, seed=83)
        data = simulate_pairs(spec)
        est = estimate_rho_mle(data)
        pearson = np.corrcoef(data.x1, data.x2)[0, 1]
        assert est.rho_hat == pytest.approx(pearson, abs=0.01)

    def test_negative_root_clamped(self):
        # anticorrelated standardized pairs push the admissible root negative
        rng = np.random.default_rng(5)
        z = rng.normal(size=200)
        x1 = 15.0 + z
        x2 = 15.0 - z + 0.1 * rng.normal(size=200)
        est = estimate_rho_mle(make_data(x1, x2))
        assert est.rho_hat == 0.0
        assert est.rho_clamped


class TestBootstrap:
    def test_single_replicate_matches_direct_run(self):
        data = table1_data(5_000, 91)
        summary = bootstrap(data, "mle", B=1, seed=17)
        ss = np.random.SeedSequence(17).spawn(1)[0]
        rng = np.random.Generator(np.random.Philox(key=ss.generate_state(1)[0]))
        replicate = data.take(rng.integers(0, len(data), len(data)))
        direct = estimate_rho_mle(replicate)
        assert summary.mean["sigma_meas_sq_hat"] == direct.sigma_meas_sq_hat
        assert summary.sd["sigma_meas_sq_hat"] == 0.0

    def test_spread_matches_sampling_noise(self):
        data = table1_data(10_000, 92)
        summary = bootstrap(data, "mle", B=60, seed=18)
        assert 0.005 < summary.sd["sigma_meas_sq_hat"] < 0.06
        assert summary.q025["sigma_meas_sq_hat"] < summary.mean["sigma_meas_sq_hat"] \
            < summary.q975["sigma_meas_sq_hat"]

    def test_constant_dataset_zero_width(self):
        x1 = np.full(50, 14.0)
        data = make_data(x1, x1.copy(), cutoff=15.0)
        summary = bootstrap(data, "naive", B=25, seed=19)
        assert summary.sd["sigma_meas_sq_hat"] == 0.0
        assert summary.q025["sigma_meas_sq_hat"] == summary.q975["sigma_meas_sq_hat"]

    def test_failure_aggregation(self):
        # two records: most resamples lack 2 complete pairs
        data = make_data([12.0, 12.5], [12.1, np.nan])
        with pytest.raises(EstimationError):
            bootstrap(data, "mle", B=30, seed=20)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), n=st.integers(30, 400),
       method=st.sampled_from(["naive", "ce", "mle"]))
def test_decomposition_identity_and_clamping_property(seed, n, method):
    from retestkit.freq import get_estimator
    rng = np.random.default_rng(seed)
    t = rng.normal(15.0, 1.0, n)
    x1 = t + rng.normal(0.0, 0.8, n)
    x2 = np.where(x1 < 13.8, t + rng.normal(0.0, 0.8, n), np.nan)
    if np.isnan(x2).sum() > n - 2:
        x2[:2] = t[:2] + rng.normal(0.0, 0.8, 2)
    data = make_data(x1, x2, cutoff=13.8)
    try:
        est = get_estimator(method)(data)
    except EstimationError:
        return
    assert est.sigma_pop_sq_hat + est.sigma_meas_sq_hat == est.sigma_total_sq_hat
    assert 0.0 <= est.rho_hat <= 1.0
    assert est.sigma_pop_sq_hat >= 0.0
    assert est.sigma_meas_sq_hat >= 0.0
