import numpy as np
import pytest
from scipy import integrate

from bnpspatial.baselines import CarConfig, _GraphArrays, fit_bym, fit_m5, fit_mcar, omega_posterior_params
from bnpspatial.data import Dataset
from bnpspatial.diagnostics import effective_sample_size
from bnpspatial.graph import adjacency, build_graph, grid_graph
from bnpspatial.sampler import SamplerConfig
from tests.conftest import make_mixed_dataset


def test_config_validation():
    with pytest.raises(ValueError):
        CarConfig(tau2_rate=0.0)
    with pytest.raises(ValueError):
        CarConfig(omega_df=2.0)


class TestBym:
    def test_isolated_area_posterior_is_gamma(self):
        # A lone area: the random effect and the flat intercept only enter
        # through their sum, whose exponential is Gamma(y, rate=E) a posteriori.
        g = build_graph([], 1)
        tr = fit_bym([7], [5.0], g, CarConfig(iterations=20000, burnin=1000, seed=1))
        rr = np.exp(tr.area("lp.y1")[:, 0])
        se = rr.std() / np.sqrt(effective_sample_size(rr))
        assert abs(rr.mean() - 7 / 5) < 4 * se

    def test_two_area_contrast_matches_quadrature(self):
        # With a flat intercept the contrast d = b1 - b2 sees the data through
        # y1 | y1 + y2 ~ Binomial, and InvGamma(1, 0.1) on tau2 integrates to
        # a prior density proportional to (0.1 + d^2 / 2)^(-3/2).
        y = np.array([12, 4])
        e = np.array([6.0, 5.0])
        g = build_graph([(1, 2)], 2)

        def post(d):
            p = e[0] * np.exp(d / 2) / (e[0] * np.exp(d / 2) + e[1] * np.exp(-d / 2))
            return (0.1 + d * d / 2) ** -1.5 * p ** y[0] * (1 - p) ** y[1]

        z, _ = integrate.quad(post, -15, 15, points=[0.0, 1.0])
        mean, _ = integrate.quad(lambda d: d * post(d) / z, -15, 15, points=[0.0, 1.0])
        tr = fit_bym(y, e, g, CarConfig(iterations=30000, burnin=2000, seed=4))
        lp = tr.area("lp.y1")
        d = lp[:, 0] - lp[:, 1]
        se = d.std() / np.sqrt(effective_sample_size(d))
        assert abs(d.mean() - mean) < 4 * se

    def test_null_data_tracks_pooled_ratio(self, rng):
        g = grid_graph(6, 6)
        e = rng.uniform(10, 20, g.n)
        y = rng.poisson(e)
        tr = fit_bym(y, e, g, CarConfig(iterations=3000, burnin=1000, seed=2))
        rr = np.exp(tr.area("lp.y1")).mean(0)
        assert abs(rr.mean() - y.sum() / e.sum()) < 0.02
        assert rr.std() < 0.1
        assert 0.15 < tr.acceptance["area"] < 0.6

    def test_field_is_centred(self, rng):
        g = grid_graph(4, 4)
        e = rng.uniform(5, 10, g.n)
        tr = fit_bym(rng.poisson(e), e, g, CarConfig(iterations=200, burnin=50))
        b = tr.area("lp.y1") - tr.scalar("mu")[:, None]
        np.testing.assert_allclose(b.sum(axis=1), 0.0, atol=1e-9)

    def test_bad_input(self):
        g = grid_graph(2, 2)
        with pytest.raises(ValueError):
            fit_bym([1, 2, 3], [1.0, 1.0, 1.0], g, CarConfig())
        with pytest.raises(ValueError):
            fit_bym([1, 2, 3, 4], [1.0, 0.0, 1.0, 1.0], g, CarConfig())


class TestGraphArrays:
    def test_pair_scatter_is_laplacian_form(self, rng):
        g = build_graph([(1, 2), (2, 3), (4, 5)], 6)
        ga = _GraphArrays(g)
        lap = adjacency(g).matrix
        b = rng.normal(size=(6, 3))
        iso = np.zeros(6)
        iso[5] = 1.0
        np.testing.assert_allclose(ga.pair_scatter(b), b.T @ (lap + np.diag(iso)) @ b, rtol=1e-12)
        assert ga.rank == 6 - 2

    def test_recentre_by_component(self, rng):
        g = build_graph([(1, 2), (3, 4), (4, 5)], 6)
        ga = _GraphArrays(g)
        b = rng.normal(size=6)
        orig = b.copy()
        shift = ga.recentre(b)
        assert shift == pytest.approx(orig[2:5].mean())
        assert b[:2].sum() == pytest.approx(0.0, abs=1e-12)
        assert b[2:5].sum() == pytest.approx(0.0, abs=1e-12)
        assert b[5] == orig[5]


class TestMcar:
    def test_omega_conjugate_parameters(self, rng):
        g = grid_graph(3, 3)
        b = rng.normal(size=(9, 2))
        df, scale = omega_posterior_params(b, g, 4.0, 2.0)
        lap = adjacency(g).matrix
        assert df == 4.0 + 8
        np.testing.assert_allclose(np.linalg.inv(scale), np.eye(2) / 2.0 + b.T @ lap @ b, rtol=1e-12)

    def test_diagonal_variant_stays_diagonal(self, rng, grid3):
        ds = make_mixed_dataset(rng, n=9, binomial=False, continuous=False)
        tr = fit_mcar(ds, grid3, CarConfig(iterations=60, burnin=20), diagonal=True)
        assert tr.meta["model"] == "M6A"
        assert np.all(tr.scalar("omega_12") == 0.0)
        assert np.all(tr.scalar("omega_11") > 0)

    def test_full_variant_columns(self, rng, grid3):
        ds = make_mixed_dataset(rng, n=9, binomial=False, continuous=False)
        tr = fit_mcar(ds, grid3, CarConfig(iterations=60, burnin=20))
        assert tr.meta["model"] == "M6"
        assert {"beta.intercept", "beta.x_x1", "beta.w_w1", "omega_13"} <= set(tr.scalar_names)
        coef = tr.area("y1.x_x1")
        np.testing.assert_allclose(coef.mean(1), tr.scalar("beta.x_x1"), atol=1e-9)

    def test_intercept_only_matches_bym_roughly(self, rng):
        g = grid_graph(5, 5)
        eta = 0.4 * np.sin(np.arange(g.n) / 3.0)
        e = rng.uniform(10, 20, g.n)
        y = rng.poisson(e * np.exp(eta))
        ds = Dataset(y1=y, E=e)
        car = fit_bym(y, e, g, CarConfig(iterations=3000, burnin=1000, seed=3))
        mcar = fit_mcar(ds, g, CarConfig(iterations=3000, burnin=1000, seed=3))
        a = car.area("lp.y1").mean(0)
        b = mcar.area("lp.y1").mean(0)
        assert np.corrcoef(a, b)[0, 1] > 0.95
        assert np.sqrt(np.mean((a - b) ** 2)) < 0.06

    def test_needs_counts(self, grid3, rng):
        ds = make_mixed_dataset(rng, n=9, count=False)
        with pytest.raises(ValueError):
            fit_mcar(ds, grid3, CarConfig())


class TestConditionalMixture:
    def test_single_component(self, rng, grid3):
        ds = make_mixed_dataset(rng, n=9, binomial=False, continuous=False)
        tr = fit_m5(ds, grid3, SamplerConfig(iterations=30, burnin=10, truncation=1))
        assert tr.meta["model"] == "M5"
        assert np.all(tr.area("alloc") == 1)

    def test_intercept_only_is_np(self, rng, grid3):
        ds = make_mixed_dataset(rng, n=9, binomial=False, continuous=False)
        tr = fit_m5(ds, grid3, SamplerConfig(iterations=20, burnin=5, truncation=4), covariates=False)
        assert tr.meta["model"] == "NP"
        np.testing.assert_allclose(tr.area("lp.y1"), tr.area("y1.intercept"))
