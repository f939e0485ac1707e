import numpy as np
import pytest
from scipy import integrate, stats

from bnpspatial.data import Dataset
from bnpspatial.graph import adjacency
from bnpspatial.model import (
    ComponentParams,
    ModelVariant,
    build_layout,
    combine_covariance,
    component_logliks,
    default_priors,
    draw_from_base,
    separate_covariance,
)
from bnpspatial.sampler import (
    PSBPChain,
    SamplerConfig,
    allocation_log_probs,
    beta_log_target,
    impute_latents,
    run_chain,
    sigma_log_acceptance,
    update_allocations,
    update_beta12,
    update_sigma,
    update_xi,
    xi_posterior_moments,
)
from bnpspatial.trace import ChainTrace
from tests.conftest import make_mixed_dataset


@pytest.fixture
def five_area(rng):
    """Fixed 5-area mixed dataset under M1 with a non-trivial covariance."""
    ds = make_mixed_dataset(rng, n=5, q=2)
    lay = build_layout(ds, ModelVariant.from_name("M1"))
    pri = default_priors(lay, tau2=4.0)
    th = draw_from_base(pri, lay, rng)
    sigma = np.eye(lay.s)
    sigma[0, 2] = sigma[2, 0] = 0.3
    sigma[1, 3] = sigma[3, 1] = -0.2
    sigma[2, 3] = sigma[3, 2] = 0.4
    sigma[3, 3] = sigma[4, 4] = 1.5
    th = th.replace(sigma=sigma)
    ystar = rng.normal(size=(5, lay.n_latent))
    return lay, pri, th, ystar


def test_config_validation():
    with pytest.raises(ValueError):
        SamplerConfig(thin=0)
    with pytest.raises(ValueError):
        SamplerConfig(eta_marginal="other")
    with pytest.raises(ValueError):
        SamplerConfig(beta_scale=0.0)
    assert SamplerConfig().stick_prior.lambda_max == 50.0


class TestXi:
    def test_monte_carlo_moments(self, five_area, rng):
        lay, pri, th, ystar = five_area
        idx = np.arange(5)
        mean, cov = xi_posterior_moments(lay, th, idx, ystar, pri)
        draws = np.array([update_xi(lay, th, idx, ystar, pri, rng) for _ in range(10000)])
        se = np.sqrt(np.diag(cov) / draws.shape[0])
        assert np.all(np.abs(draws.mean(0) - mean) < 3 * se)
        emp_var = draws.var(0)
        se_var = np.diag(cov) * np.sqrt(2.0 / draws.shape[0])
        assert np.all(np.abs(emp_var - np.diag(cov)) < 3 * se_var)

    def test_empty_component_draws_prior(self, five_area, rng):
        lay, pri, th, ystar = five_area
        draws = np.array([update_xi(lay, th, np.array([], dtype=int), ystar, pri, rng) for _ in range(5000)])
        se = np.sqrt(pri.xi_var / 5000)
        assert np.all(np.abs(draws.mean(0) - pri.xi_mean) < 4 * se)


class TestSigma:
    def test_identical_proposal_has_unit_ratio(self, rng):
        e = np.array([[2.0, 0.3, 0.1], [0.3, 1.0, 0.2], [0.1, 0.2, 1.5]])
        scatter = np.eye(3) * 4.0
        assert sigma_log_acceptance(e, e, 1, 5.0, np.eye(3) / 5.0, scatter, 4, 10.0) == 0.0

    def test_ratio_matches_brute_force(self, rng):
        """Prior, Gaussian likelihood in the constrained matrix, and proposal terms from scipy."""
        k, L, m = 4, 2, 6
        df, scale = k + 2.0, np.eye(k) / (k + 2.0)
        for _ in range(10):
            e_cur = stats.wishart(k + 3, np.eye(k) / (k + 3)).rvs(random_state=rng)
            psi = 9.0
            e_prop = stats.wishart(psi, e_cur / psi).rvs(random_state=rng)
            resid = rng.normal(size=(m, k))
            scatter = resid.T @ resid

            def log_target(e):
                _, sig = separate_covariance(e, L)
                ll = stats.multivariate_normal(np.zeros(k), sig).logpdf(resid).sum()
                return stats.wishart(df, scale).logpdf(e) + ll

            brute = (log_target(e_prop) - log_target(e_cur)
                     + stats.wishart(psi, e_prop / psi).logpdf(e_cur)
                     - stats.wishart(psi, e_cur / psi).logpdf(e_prop))
            # The Gaussian normalizing constant does not depend on the matrix.
            got = sigma_log_acceptance(e_cur, e_prop, L, df, scale, scatter, m, psi)
            assert got == pytest.approx(brute, rel=1e-9, abs=1e-9)

    def test_prior_is_stationary_without_data(self, five_area, rng):
        """Chains started at exact prior draws must still be at the prior."""
        lay, pri, _, ystar = five_area
        none = np.array([], dtype=int)
        finals, fresh = [], []
        for _ in range(1500):
            th = draw_from_base(pri, lay, rng)
            for _ in range(8):
                th, _ = update_sigma(lay, th, none, ystar, pri, rng, 0.5)
            finals.append(combine_covariance(th.d2, th.sigma))
            fresh.append(draw_from_base(pri, lay, rng).e_matrix())
        finals, fresh = np.array(finals), np.array(fresh)
        for i, j in [(0, 0), (1, 1), (0, 2), (3, 4), (4, 4)]:
            assert stats.ks_2samp(finals[:, i, j], fresh[:, i, j]).pvalue > 0.001
        assert np.all(np.diag(th.sigma)[: lay.n_latent] == 1.0)


class TestBeta:
    def test_random_walk_targets_posterior(self, rng):
        ds = Dataset(y1=np.array([3, 7]), E=np.array([5.0, 5.0]))
        lay = build_layout(ds, ModelVariant.from_name("NP"))
        th = ComponentParams(np.zeros(1), np.zeros(0), np.zeros(0), np.eye(1), np.ones(1))
        idx = np.arange(2)
        tau2 = 1.0
        logt = lambda b: beta_log_target(lay, th, idx, np.array([b]), np.zeros(0), tau2)  # noqa: E731
        z, _ = integrate.quad(lambda b: np.exp(logt(b)), -5, 5)
        m1, _ = integrate.quad(lambda b: b * np.exp(logt(b)) / z, -5, 5)
        draws = []
        for _ in range(40000):
            th, _ = update_beta12(lay, th, idx, tau2, rng, beta_scale=1.2)
            draws.append(th.beta1[0])
        draws = np.array(draws[1000:])
        assert abs(draws.mean() - m1) < 0.02

    def test_target_is_prior_times_poisson(self):
        ds = Dataset(y1=np.array([3, 7]), E=np.array([5.0, 6.0]))
        lay = build_layout(ds, ModelVariant.from_name("NP"))
        th = ComponentParams(np.zeros(1), np.zeros(0), np.zeros(0), np.eye(1), np.ones(1))
        got = beta_log_target(lay, th, np.arange(2), np.array([0.2]), np.zeros(0), 4.0)
        ref = -0.5 * 0.04 / 4.0 + stats.poisson.logpmf([3, 7], np.array([5.0, 6.0]) * np.exp(0.2)).sum()
        assert got == pytest.approx(ref, rel=1e-10)

    def test_empty_component_draws_prior(self, five_area, rng):
        lay, pri, th, _ = five_area
        new, acc = update_beta12(lay, th, np.array([], dtype=int), 9.0, rng)
        assert acc is None and new.beta1.shape == th.beta1.shape


class TestAllocations:
    def test_log_probs_are_weights_plus_likelihood(self, mixed_data, rng):
        lay = build_layout(mixed_data, ModelVariant.from_name("M1"))
        pri = default_priors(lay, tau2=1.0)
        comps = [draw_from_base(pri, lay, rng) for _ in range(3)]
        log_w = np.log(np.full((3, lay.n), 1 / 3))
        logp, ll = allocation_log_probs(lay, comps, log_w)
        for h in range(3):
            np.testing.assert_allclose(ll[h], component_logliks(lay, comps[h]), rtol=1e-8)
        np.testing.assert_allclose(logp, ll + log_w)
        prior_only, _ = allocation_log_probs(lay, comps, log_w, use_data=False)
        np.testing.assert_array_equal(prior_only, log_w)

    def test_draw_frequencies(self, mixed_data, rng):
        lay = build_layout(mixed_data, ModelVariant.from_name("M5"))
        pri = default_priors(lay, tau2=0.3)
        comps = [draw_from_base(pri, lay, rng) for _ in range(3)]
        log_w = np.log(np.array([[0.5], [0.3], [0.2]])) * np.ones((3, lay.n))
        logp, _ = allocation_log_probs(lay, comps, log_w)
        p = np.exp(logp - logp.max(0))
        p /= p.sum(0)
        m = 4000
        counts = np.zeros((3, lay.n))
        for _ in range(m):
            alloc, _, _ = update_allocations(lay, comps, log_w, rng)
            counts[alloc, np.arange(lay.n)] += 1
        assert np.all(np.abs(counts / m - p) < 4 * np.sqrt(p * (1 - p) / m) + 1e-9)


class TestImputation:
    def test_latents_reproduce_observed_counts(self, mixed_data, rng):
        from bnpspatial.link import CutPointRule, latent_to_count
        from bnpspatial.model import binomial_probs, count_rates

        lay = build_layout(mixed_data, ModelVariant.from_name("M1"))
        th = draw_from_base(default_priors(lay, tau2=0.2), lay, rng)
        idx = np.arange(lay.n)
        ys = impute_latents(lay, th, idx, rng)
        np.testing.assert_array_equal(latent_to_count(ys[:, 0], CutPointRule.poisson(count_rates(lay, th.beta1))), lay.y1)
        np.testing.assert_array_equal(
            latent_to_count(ys[:, 1], CutPointRule.binomial(lay.N, binomial_probs(lay, th.beta2))), lay.y2
        )


class TestChain:
    @pytest.mark.parametrize("name", ["M1", "M1B", "M3", "M5"])
    def test_smoke_run_keeps_invariants(self, mixed_data, grid3, name):
        ds = make_mixed_dataset(np.random.default_rng(5), n=9)
        cfg = SamplerConfig(iterations=40, burnin=20, truncation=6, seed=3, check_invariants=True)
        tr = run_chain(ds, grid3, name, cfg)
        assert len(tr) == 20
        assert tr.meta["model"] == name
        alloc = tr.area("alloc")
        assert alloc.min() >= 1 and alloc.max() <= 6
        assert np.all(np.isfinite(tr.scalar("loglik")))

    def test_zero_iterations_give_valid_empty_trace(self, tmp_path, grid3):
        ds = make_mixed_dataset(np.random.default_rng(1), n=9)
        tr = run_chain(ds, grid3, "M1", SamplerConfig(iterations=0, burnin=0, truncation=4))
        assert len(tr) == 0
        path = tmp_path / "t.csv"
        tr.write(path)
        back = ChainTrace.read(path)
        assert back.columns() == tr.columns()
        assert back.area("y1.x_x1").shape == (0, 9)

    def test_determinism(self, grid3):
        ds = make_mixed_dataset(np.random.default_rng(2), n=9)
        cfg = SamplerConfig(iterations=30, burnin=10, truncation=5, seed=11)
        a = run_chain(ds, grid3, "M2", cfg).to_matrix()
        b = run_chain(ds, grid3, "M2", cfg).to_matrix()
        np.testing.assert_array_equal(a, b)

    def test_non_spatial_variant_keeps_lambda_zero(self, grid3):
        ds = make_mixed_dataset(np.random.default_rng(3), n=9)
        tr = run_chain(ds, grid3, "M1A", SamplerConfig(iterations=30, burnin=10, truncation=5))
        assert np.all(tr.scalar("lam") == 0.0)

    def test_thinning(self, grid3):
        ds = make_mixed_dataset(np.random.default_rng(4), n=9)
        tr = run_chain(ds, grid3, "M5", SamplerConfig(iterations=31, burnin=10, thin=5, truncation=4))
        assert tr.iterations.tolist() == [10, 15, 20, 25, 30]

    def test_prior_only_run(self, grid3):
        ds = make_mixed_dataset(np.random.default_rng(6), n=9)
        cfg = SamplerConfig(iterations=6000, burnin=200, truncation=4, use_data=False, seed=2)
        tr = run_chain(ds, grid3, "M1", cfg)
        # The prior of alpha is N(0, 1); the chain mixes slowly, so the
        # tolerance uses the effective sample size.
        from bnpspatial.diagnostics import effective_sample_size

        alpha = tr.scalar("alpha")
        assert abs(alpha.mean()) < 4.5 * alpha.std() / np.sqrt(effective_sample_size(alpha))
        coef = tr.area("y1.intercept")[:, 0]
        assert abs(coef.mean()) < 4.5 * coef.std() / np.sqrt(effective_sample_size(coef))
        assert coef.var() == pytest.approx(25.0, rel=0.25)

    def test_graph_size_mismatch(self, grid4):
        ds = make_mixed_dataset(np.random.default_rng(7), n=9)
        lay = build_layout(ds, ModelVariant.from_name("M1"))
        with pytest.raises(ValueError):
            PSBPChain(lay, adjacency(grid4), SamplerConfig())
