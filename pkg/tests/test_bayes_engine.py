import numpy as np
import pytest

from retestkit.bayes_engine import (
    ModelSpec,
    PosteriorDraws,
    PriorSpec,
    adaptive_metropolis,
    effective_sample_size,
    fit_mcmc,
    measurement_share,
    posterior_summary,
    prepare_arrays,
    record_marginal_loglik,
    split_rhat,
    total_log_posterior,
)
from retestkit.bayes_engine.likelihood import (
    StratumArrays,
    conv_single_loglik,
    gh_pair_loglik,
    log_posterior_constrained,
    model_a_mu_score,
)
from retestkit.data import MeasurementPair, PairDataset
from retestkit.errors import DomainError
from retestkit.simulate import GeneratorSpec, RetestPolicy, simulate_pairs
from retestkit.stats_core import (
    MeasurementDensity,
    NormalDist,
    StudentTDist,
    bivariate_normal_logpdf,
    gauss_hermite,
)


def table1_data(n, seed):
    return simulate_pairs(GeneratorSpec(
        population=MeasurementDensity("normal", location=15.0, scale=1.0),
        measurement=MeasurementDensity("normal", scale=0.8),
        policy=RetestPolicy(cutoff=13.0), n=n, seed=seed, stratum="M"))


def single_stratum_model(model_id="a", **kw):
    return ModelSpec(model_id, strata=("M",), **kw)


def theta_a(mu=15.0, sigma_pop=1.0, sigma_meas=0.8):
    return {"M": {"mu": mu, "sigma_pop": sigma_pop, "sigma_meas": sigma_meas}}


class TestModelSpec:
    def test_dim_and_names(self):
        m = ModelSpec("b")
        assert m.dim == 8
        assert m.flat_names[:4] == ["M.mu", "M.sigma_pop", "M.s", "M.df"]

    def test_transform_roundtrip(self):
        m = ModelSpec("c", strata=("M",))
        rng = np.random.default_rng(0)
        for _ in range(50):
            u = rng.normal(scale=2.0, size=m.dim)
            theta, _ = m.to_constrained(u)
            np.testing.assert_allclose(m.from_constrained(theta), u, atol=1e-9)

    def test_mixture_scales_ordered_by_construction(self):
        m = ModelSpec("c", strata=("M",))
        rng = np.random.default_rng(1)
        for _ in range(200):
            theta, _ = m.to_constrained(rng.normal(scale=3.0, size=m.dim))
            b = theta["M"]
            assert b["sigma_meas1"] < b["sigma_meas2"] <= 2.0

    def test_bounds_respected(self):
        m = ModelSpec("b", strata=("M",))
        theta, _ = m.to_constrained(np.array([14.0, 50.0, -50.0, 12.0]))
        b = theta["M"]
        assert 0.2 <= b["sigma_pop"] <= 20.0
        assert 0.2 <= b["s"] <= 20.0
        assert 2.0 <= b["df"] <= 30.0

    def test_bound_overrides(self):
        m = ModelSpec("b", strata=("M",), bounds={"df": (2.0, 1e7)})
        assert m.bounds["df"] == (2.0, 1e7)

    def test_prior_overrides_validated(self):
        with pytest.raises(DomainError):
            PriorSpec.defaults("a", overrides={"nope": ("normal", 0, 1)})

    def test_unknown_model(self):
        with pytest.raises(DomainError):
            ModelSpec("z")


class TestRecordMarginal:
    def test_model_a_singleton_closed_form(self):
        m = single_stratum_model()
        rec = MeasurementPair("r", "M", 13.5, None, 13.0)
        got = record_marginal_loglik(rec, m, theta_a())
        expect = NormalDist(15.0, np.sqrt(1.0 + 0.64)).logpdf(13.5)
        assert got == pytest.approx(float(expect), rel=1e-12)

    def test_model_a_pair_quadrature_matches_closed(self):
        m = single_stratum_model()
        quad = gauss_hermite(32)
        rng = np.random.default_rng(3)
        for _ in range(300):
            mu = rng.uniform(12, 18)
            sp = rng.uniform(0.3, 2.0)
            sm = rng.uniform(0.25, 1.5)
            x1 = rng.normal(mu, 1.5)
            x2 = x1 + rng.normal(0, 0.8)
            rec = MeasurementPair("r", "M", x1, x2, 13.0)
            th = theta_a(mu, sp, sm)
            q = record_marginal_loglik(rec, m, th, quad, method="quadrature")
            c = record_marginal_loglik(rec, m, th, method="closed")
            s_tot = np.sqrt(sp ** 2 + sm ** 2)
            rho = sp ** 2 / (sp ** 2 + sm ** 2)
            assert c == pytest.approx(
                float(bivariate_normal_logpdf(x1, x2, mu, s_tot, rho)), rel=1e-12)
            assert abs(q - c) < 1e-8

    def test_model_a_singleton_quadrature_matches_closed(self):
        m = single_stratum_model()
        rng = np.random.default_rng(4)
        for _ in range(100):
            th = theta_a(rng.uniform(12, 18), rng.uniform(0.3, 2.0),
                         rng.uniform(0.25, 1.5))
            rec = MeasurementPair("r", "M", rng.uniform(10, 20), None, 13.0)
            q = record_marginal_loglik(rec, m, th, method="quadrature")
            c = record_marginal_loglik(rec, m, th, method="closed")
            assert abs(q - c) < 1e-8

    def test_model_b_large_df_matches_model_a(self):
        mb = single_stratum_model("b", bounds={"df": (2.0, 1e7)})
        ma = single_stratum_model("a")
        rec = MeasurementPair("r", "M", 12.5, 12.9, 13.0)
        got = record_marginal_loglik(
            rec, mb, {"M": {"mu": 15.0, "sigma_pop": 1.0, "s": 0.8, "df": 1e6}})
        expect = record_marginal_loglik(rec, ma, theta_a())
        assert got == pytest.approx(expect, abs=1e-4)

    def test_model_c_closed_vs_quadrature(self):
        m = single_stratum_model("c")
        th = {"M": {"mu": 14.8, "sigma_pop": 0.55, "sigma_meas1": 0.45,
                    "sigma_meas2": 2.0, "pi": 0.8}}
        for rec in [MeasurementPair("s", "M", 13.9, None, 13.0),
                    MeasurementPair("p", "M", 12.7, 13.4, 13.0),
                    MeasurementPair("far", "M", 9.5, None, 13.0)]:
            c = record_marginal_loglik(rec, m, th, method="closed")
            q = record_marginal_loglik(rec, m, th, method="quadrature")
            assert q == pytest.approx(c, abs=2e-6)

    def test_model_b_bimodal_singleton_against_brute_force(self):
        # outlying singleton under t error: marginal has mass near both the
        # population center and the measurement; brute-force trapezoid oracle
        from scipy.integrate import quad as scipy_quad
        m = single_stratum_model("b")
        th = {"M": {"mu": 15.74, "sigma_pop": 1.277, "s": 0.36, "df": 2.6}}
        pop = NormalDist(15.74, 1.277)
        err = StudentTDist(0.0, 0.36, 2.6)
        for x in (12.8, 11.0, 15.7, 19.0):
            val, _ = scipy_quad(
                lambda t: np.exp(pop.logpdf(t) + err.logpdf(x - t)),
                15.74 - 16 * 1.277, 15.74 + 16 * 1.277, limit=400)
            rec = MeasurementPair("r", "M", x, None, 13.0)
            got = record_marginal_loglik(rec, m, th)
            assert got == pytest.approx(np.log(val), abs=1e-6)

    def test_model_d_pair_against_brute_force(self):
        from scipy.integrate import quad as scipy_quad
        from retestkit.stats_core import SkewNormalDist
        m = single_stratum_model("d")
        th = {"M": {"mu_loc": 14.8, "mu_scale": 0.55, "mu_skew": 5.0,
                    "s": 0.55, "df": 5.0}}
        pop = SkewNormalDist(14.8, 0.55, 5.0)
        err = StudentTDist(0.0, 0.55, 5.0)
        for x1, x2 in [(13.2, 13.6), (14.9, 15.1), (12.0, 12.2)]:
            val, _ = scipy_quad(
                lambda t: np.exp(pop.logpdf(t) + err.logpdf(x1 - t)
                                 + err.logpdf(x2 - t)),
                14.8 - 12, 14.8 + 12, limit=400)
            rec = MeasurementPair("r", "M", x1, x2, 13.0)
            got = record_marginal_loglik(rec, m, th)
            # skewed population keeps the pair integrand slightly non-Gaussian,
            # so the 32-node rule carries ~1e-5 residual (model a is exact)
            assert got == pytest.approx(np.log(val), abs=5e-5)

    def test_unknown_stratum_rejected(self):
        rec = MeasurementPair("r", "X", 13.5, None, 13.0)
        with pytest.raises(DomainError):
            record_marginal_loglik(rec, single_stratum_model(), theta_a())


class TestTotalLogPosterior:
    def test_no_records_reduces_to_prior(self):
        m = single_stratum_model()
        arrays = {"M": StratumArrays("M", np.zeros(0), np.zeros(0), np.zeros(0))}
        u = np.array([14.5, 0.3, -0.2])
        theta, log_jac = m.to_constrained(u)
        got = total_log_posterior(u, m, arrays)
        assert got == pytest.approx(m.log_prior(theta) + log_jac, rel=1e-12)

    def test_doubling_data_doubles_data_term(self):
        m = single_stratum_model()
        data = table1_data(400, 17)
        arrays1 = prepare_arrays(data, m)
        doubled = PairDataset.concat([data, data])
        arrays2 = prepare_arrays(doubled, m)
        u = m.init_unconstrained(data)
        theta, log_jac = m.to_constrained(u)
        base = m.log_prior(theta) + log_jac
        t1 = total_log_posterior(u, m, arrays1) - base
        t2 = total_log_posterior(u, m, arrays2) - base
        assert t2 == pytest.approx(2.0 * t1, rel=1e-10)

    def test_out_of_bounds_theta_gives_minus_inf(self):
        m = single_stratum_model()
        data = table1_data(100, 18)
        arrays = prepare_arrays(data, m)
        bad = {"M": {"mu": 15.0, "sigma_pop": 100.0, "sigma_meas": 0.8}}
        assert log_posterior_constrained(bad, m, arrays) == -np.inf

    def test_mu_gradient_matches_finite_differences(self):
        m = single_stratum_model()
        data = table1_data(2000, 19)
        arrays = prepare_arrays(data, m)
        th = theta_a(15.2, 1.1, 0.7)
        analytic = model_a_mu_score(th, m, arrays)["M"]
        h = 1e-6
        up = {"M": dict(th["M"], mu=15.2 + h)}
        dn = {"M": dict(th["M"], mu=15.2 - h)}
        fd = (log_posterior_constrained(up, m, arrays)
              - log_posterior_constrained(dn, m, arrays)) / (2 * h)
        assert analytic == pytest.approx(fd, rel=1e-5)

    def test_record_order_invariance(self):
        m = single_stratum_model("b")
        data = table1_data(500, 20)
        rng = np.random.default_rng(0)
        perm = rng.permutation(len(data))
        arrays1 = prepare_arrays(data, m)
        arrays2 = prepare_arrays(data.take(perm), m)
        u = m.init_unconstrained(data)
        a = total_log_posterior(u, m, arrays1)
        b = total_log_posterior(u, m, arrays2)
        assert a == pytest.approx(b, abs=1e-10)


class TestSampler:
    def test_toy_gaussian_moments(self):
        # correlated 2-D Gaussian with known moments
        cov = np.array([[1.0, 0.8], [0.8, 2.0]])
        prec = np.linalg.inv(cov)

        def log_target(u):
            return -0.5 * u @ prec @ u

        rng = np.random.default_rng(42)
        draws, rate = adaptive_metropolis(log_target, np.zeros(2), rng,
                                          warmup=2000, iters=8000)
        ess0 = effective_sample_size(draws[None, :, 0])
        ess1 = effective_sample_size(draws[None, :, 1])
        for j, ess in enumerate((ess0, ess1)):
            se = np.sqrt(cov[j, j] / ess)
            assert abs(draws[:, j].mean()) < 3.5 * se
            assert draws[:, j].var() == pytest.approx(cov[j, j], rel=0.25)
        assert 0.1 < rate < 0.5

    def test_prior_dominance(self):
        priors = PriorSpec.defaults("a", overrides={"mu": ("normal", 14.0, 1e-4)})
        m = single_stratum_model(priors=priors)
        data = table1_data(5, 23)
        fit = fit_mcmc(m, data, chains=2, warmup=300, iters=300, seed=1)
        assert fit.flat("M.mu").mean() == pytest.approx(14.0, abs=1e-3)

    def test_model_a_recovers_table1_variances(self):
        m = single_stratum_model()
        data = table1_data(10_000, 24)
        fit = fit_mcmc(m, data, chains=2, warmup=400, iters=400, seed=2)
        meas_var = fit.flat("M.sigma_meas") ** 2
        assert fit.converged
        assert abs(meas_var.mean() - 0.64) < 3 * meas_var.std()

    def test_requires_two_chains(self):
        with pytest.raises(DomainError):
            fit_mcmc(single_stratum_model(), table1_data(50, 25), chains=1)

    def test_split_rhat_detects_disagreement(self):
        rng = np.random.default_rng(7)
        same = rng.standard_normal((2, 400))
        apart = np.stack([rng.standard_normal(400), 5 + rng.standard_normal(400)])
        assert split_rhat(same) < 1.05
        assert split_rhat(apart) > 2.0


class TestPosteriorSummary:
    def _synthetic_draws(self, values_by_name, model):
        names = model.flat_names
        n = len(next(iter(values_by_name.values())))
        draws = np.empty((2, n // 2, len(names)))
        for j, nm in enumerate(names):
            draws[:, :, j] = np.asarray(values_by_name[nm]).reshape(2, n // 2)
        return PosteriorDraws(model=model, param_names=names, draws=draws,
                              accept_rate=np.array([0.3, 0.3]),
                              rhat={nm: 1.0 for nm in names},
                              ess={nm: float(n) for nm in names},
                              converged=True, seed=0, warmup=0, iters=n // 2)

    def test_symmetric_draws_mean_equals_median(self):
        m = single_stratum_model()
        sym = np.concatenate([np.linspace(-1, 1, 200)]) + 15.0
        vals = {"M.mu": sym, "M.sigma_pop": np.full(200, 1.0),
                "M.sigma_meas": np.full(200, 0.8)}
        table = posterior_summary(self._synthetic_draws(vals, m))
        p = table["parameters"]["M.mu"]
        assert p["mean"] == pytest.approx(p["median"], abs=1e-12)

    def test_variance_share_reproduces_reported_splits(self):
        # posterior-mean parameter arithmetic: ~25.6% male, ~22.7% female
        assert measurement_share(1.63, 0.36, 2.60) == pytest.approx(0.25625114071910933, rel=1e-12)
        assert measurement_share(1.13, 0.36, 3.28) == pytest.approx(0.22713904657684153, rel=1e-12)

    def test_summary_share_for_t_model(self):
        m = single_stratum_model("b")
        n = 200
        vals = {"M.mu": np.full(n, 15.74), "M.sigma_pop": np.full(n, np.sqrt(1.63)),
                "M.s": np.full(n, 0.36), "M.df": np.full(n, 2.60)}
        table = posterior_summary(self._synthetic_draws(vals, m))
        assert table["measurement_share"]["M"]["mean"] == pytest.approx(0.256251, abs=1e-5)


class TestNumericRoutes:
    def test_conv_single_empty(self):
        assert conv_single_loglik(NormalDist(15, 1), NormalDist(0, 0.8),
                                  np.zeros(0)).size == 0

    def test_gh_pair_vectorization_matches_scalar(self):
        pop = NormalDist(14.8, 0.55)
        err = StudentTDist(0.0, 0.55, 5.0)
        x1 = np.array([13.0, 12.5, 14.2])
        x2 = np.array([13.4, 12.6, 13.9])
        batch = gh_pair_loglik(pop, err, x1, x2)
        for i in range(3):
            one = gh_pair_loglik(pop, err, x1[i:i + 1], x2[i:i + 1])
            assert one[0] == pytest.approx(batch[i], rel=1e-12)
