import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats
from scipy.special import log_ndtr

from bnpspatial.graph import adjacency, grid_graph
from bnpspatial.stick import (
    EtaMarginal,
    StickPrior,
    StickState,
    active_log_density,
    active_mask,
    boundary_counts,
    eta_active_moments,
    impute_eta_inactive,
    inactive_moments,
    label_switch_a,
    label_switch_a_log_ratio,
    label_switch_b,
    label_switch_b_closed_form,
    label_switch_b_log_ratio,
    lambda_log_acceptance,
    lambda_log_acceptance_expanded,
    log_stick_weights,
    stick_weights,
    subblock_quadratic_expansion,
    update_alpha_phi_lambda,
    update_eta_active,
    update_z,
    weights_from_eta,
    z_consistent,
)


def random_state(rng, n, T, lam=None):
    eta = rng.normal(0.0, 1.0, (T, n))
    alloc = rng.integers(0, T, n)
    st_ = StickState(eta=eta, z=np.full((T, n), np.nan), alloc=alloc,
                     alpha=float(rng.normal()), phi2=float(rng.gamma(2.0, 1.0)),
                     lam=float(rng.uniform(0.1, 10.0)) if lam is None else lam)
    update_z(st_, rng)
    return st_


def brute_force_active_logdensity(adj, state, lam, mode):
    """Active-score log density built from dense matrices and scipy."""
    n = adj.n
    q = lam * adj.matrix + np.eye(n)
    cov_full = np.linalg.inv(q) / state.phi2
    mask = active_mask(state.alloc, state.T)
    total = 0.0
    for h in range(state.T - 1):
        act = np.flatnonzero(mask[h])
        if not act.size:
            continue
        if mode == "exact":
            cov = cov_full[np.ix_(act, act)]
        else:
            cov = np.linalg.inv(q[np.ix_(act, act)]) / state.phi2
        total += stats.multivariate_normal(np.full(act.size, state.alpha), cov).logpdf(state.eta[h, act])
    return total


class TestWeights:
    def test_zero_scores(self):
        np.testing.assert_allclose(weights_from_eta([0.0, 0.0, 0.0]), [0.5, 0.25, 0.25], rtol=1e-15)

    def test_extreme_scores_stay_finite(self):
        lw = log_stick_weights(np.array([[-40.0], [40.0], [0.0]]))
        assert np.all(np.isfinite(lw))
        assert np.exp(np.logaddexp.reduce(lw[:, 0])) == pytest.approx(1.0)

    @settings(max_examples=60, deadline=None)
    @given(seed=st.integers(0, 2 ** 31 - 1), T=st.integers(1, 12))
    def test_weights_sum_to_one(self, seed, T):
        eta = np.random.default_rng(seed).normal(0, 3, (T, 5))
        w = stick_weights(eta)
        assert np.all(w >= 0)
        np.testing.assert_allclose(w.sum(axis=0), 1.0, rtol=1e-12)


class TestZ:
    def test_consistency_and_half_normal_mean(self, rng):
        n, T = 4000, 3
        state = StickState(np.zeros((T, n)), np.full((T, n), np.nan), np.zeros(n, dtype=int), 0.0, 1.0, 1.0)
        update_z(state, rng)
        assert z_consistent(state)
        z = state.z[0]
        se = np.sqrt(1 - 2 / np.pi) / np.sqrt(n)
        assert abs(z.mean() - np.sqrt(2 / np.pi)) < 3 * se
        assert np.all(np.isnan(state.z[1:]))

    def test_last_level_has_no_positive_draw(self, rng):
        state = random_state(rng, 6, 3)
        state.alloc[:] = 2
        update_z(state, rng)
        assert z_consistent(state)
        assert np.all(state.z[:2] < 0) and np.all(np.isnan(state.z[2]))


class TestActiveScores:
    def test_mask(self):
        m = active_mask(np.array([0, 2, 1]), 3)
        assert m.tolist() == [[True, True, True], [False, True, True], [False, False, False]]

    def test_exact_precision_is_inverse_marginal(self, adj4):
        marg = EtaMarginal(adj4, 3.0)
        act = np.array([0, 1, 5, 10])
        cov = np.linalg.inv(3.0 * adj4.matrix + np.eye(16))
        np.testing.assert_allclose(marg.precision(act), np.linalg.inv(cov[np.ix_(act, act)]), rtol=1e-10)

    def test_gibbs_moments_match_closed_form(self, adj4, rng):
        act = np.array([1, 2, 6, 9, 13])
        z = rng.normal(0, 1, act.size)
        lam, alpha, phi2 = 2.0, 0.3, 1.5
        mean, cov = eta_active_moments(adj4, lam, alpha, phi2, act, z)
        # Dense oracle: Gaussian prior on eta_A combined with z_A ~ N(eta_A, I).
        prior_cov = np.linalg.inv(lam * adj4.matrix + np.eye(16))[np.ix_(act, act)] / phi2
        post_cov = np.linalg.inv(np.linalg.inv(prior_cov) + np.eye(act.size))
        post_mean = post_cov @ (np.linalg.solve(prior_cov, np.full(act.size, alpha)) + z)
        np.testing.assert_allclose(mean, post_mean, rtol=1e-10)
        np.testing.assert_allclose(cov, post_cov, rtol=1e-10)
        # Production Gibbs step: with three levels, level 1 is active exactly
        # on the areas allocated to label 1.
        n = adj4.n
        alloc = np.zeros(n, dtype=int)
        alloc[act] = 1
        state = StickState(np.zeros((3, n)), np.full((3, n), np.nan), alloc, alpha, phi2, lam)
        n_draw = 10000
        draws = np.empty((n_draw, act.size))
        for k in range(n_draw):
            state.z[0] = -0.5
            state.z[1, act] = z
            update_eta_active(state, adj4, rng)
            draws[k] = state.eta[1, act]
        se = np.sqrt(np.diag(post_cov) / n_draw)
        assert np.all(np.abs(draws.mean(0) - post_mean) < 3.5 * se)
        emp = np.cov(draws, rowvar=False)
        se_cov = np.sqrt((post_cov ** 2 + np.outer(np.diag(post_cov), np.diag(post_cov))) / n_draw)
        assert np.all(np.abs(emp - post_cov) < 4 * se_cov)

    def test_inactive_imputation_moments(self, adj4, rng):
        n = adj4.n
        act = np.array([0, 5, 10, 15])
        alloc = np.zeros(n, dtype=int)
        alloc[act] = 1
        eta_act = np.array([0.5, -0.2, 1.0, 0.1])
        lam, alpha, phi2 = 4.0, 0.2, 2.0
        mean, cov = inactive_moments(adj4, lam, alpha, phi2, act, eta_act)
        ina = np.setdiff1d(np.arange(n), act)
        state = StickState(np.zeros((3, n)), np.full((3, n), np.nan), alloc, alpha, phi2, lam)
        m = 8000
        draws = np.empty((m, ina.size))
        for k in range(m):
            state.eta[1, act] = eta_act
            impute_eta_inactive(state, adj4, rng)
            draws[k] = state.eta[1, ina]
            assert np.array_equal(state.eta[1, act], eta_act)
        se = np.sqrt(np.diag(cov) / m)
        assert np.all(np.abs(draws.mean(0) - mean) < 4 * se)
        # Precision form of the same conditional.
        q = phi2 * (lam * adj4.matrix + np.eye(n))
        np.testing.assert_allclose(np.linalg.inv(q[np.ix_(ina, ina)]), cov, rtol=1e-8, atol=1e-12)


class TestLambda:
    def test_expansion_equals_subblock_quadratic_form(self, rng):
        g = grid_graph(5, 5)
        adj = adjacency(g)
        for _ in range(100):
            k = int(rng.integers(1, g.n + 1))
            act = np.sort(rng.choice(g.n, size=k, replace=False))
            eta = rng.normal(0, 2, k)
            alpha, lam = rng.normal(), rng.uniform(0, 20)
            q = lam * adj.matrix[np.ix_(act, act)] + np.eye(k)
            dev = eta - alpha
            assert subblock_quadratic_expansion(g, act, eta, alpha, lam) == pytest.approx(dev @ q @ dev, rel=1e-10, abs=1e-10)

    def test_boundary_counts(self):
        g = grid_graph(3, 3)
        assert boundary_counts(g, np.array([4])).tolist() == [4]
        assert boundary_counts(g, np.array([0, 1])).tolist() == [1, 2]

    @pytest.mark.parametrize("mode", ["exact", "subblock"])
    def test_acceptance_equals_brute_force(self, adj4, rng, mode):
        for _ in range(20):
            state = random_state(rng, adj4.n, 4)
            lam_new = float(rng.uniform(0, 15))
            brute = brute_force_active_logdensity(adj4, state, lam_new, mode) - brute_force_active_logdensity(adj4, state, state.lam, mode)
            assert lambda_log_acceptance(adj4, state, lam_new, mode) == pytest.approx(brute, rel=1e-10, abs=1e-10)

    def test_expanded_form_is_the_subblock_ratio(self, adj4, rng):
        for _ in range(20):
            state = random_state(rng, adj4.n, 4)
            lam_new = float(rng.uniform(0, 15))
            assert lambda_log_acceptance_expanded(adj4, state, lam_new) == pytest.approx(
                lambda_log_acceptance(adj4, state, lam_new, "subblock"), rel=1e-10, abs=1e-10
            )

    def test_active_log_density_matches_scipy(self, adj4, rng):
        state = random_state(rng, adj4.n, 3)
        assert active_log_density(adj4, state.lam, state) == pytest.approx(
            brute_force_active_logdensity(adj4, state, state.lam, "exact"), rel=1e-10
        )

    def test_unknown_mode(self, adj4):
        with pytest.raises(ValueError):
            EtaMarginal(adj4, 1.0, "approx")


class TestHyperpriors:
    def test_no_active_scores_reproduces_priors(self, adj4, rng):
        prior = StickPrior()
        n = adj4.n
        alphas, phis, lams = [], [], []
        state = StickState(np.zeros((1, n)), np.full((1, n), np.nan), np.zeros(n, dtype=int), 0.0, 1.0, 5.0)
        for _ in range(20000):
            update_alpha_phi_lambda(state, adj4, prior, rng, lambda_step=20.0)
            alphas.append(state.alpha)
            phis.append(state.phi2)
            lams.append(state.lam)
        phis = np.array(phis)
        assert abs(np.mean(alphas)) < 4 / np.sqrt(20000)
        assert np.var(alphas) == pytest.approx(1.0, rel=0.05)
        # Gamma(1, rate 0.1): mean ten, variance a hundred.
        assert phis.mean() == pytest.approx(10.0, rel=0.05)
        assert phis.var() == pytest.approx(100.0, rel=0.1)
        assert stats.kstest(lams, stats.uniform(0, prior.lambda_max).cdf).pvalue > 0.001

    def test_non_spatial_keeps_lambda(self, adj4, rng):
        state = random_state(rng, adj4.n, 3, lam=0.0)
        for _ in range(50):
            update_alpha_phi_lambda(state, adj4, StickPrior(), rng, spatial=False)
        assert state.lam == 0.0


class TestLabelSwitching:
    def test_move_a_equal_weights(self):
        alloc = np.array([0, 1, 1, 2, 0, 3])
        log_w = np.full((4, 6), np.log(0.25))
        assert label_switch_a_log_ratio(log_w, alloc, 0, 1) == 0.0

    def test_move_b_equal_rows(self):
        # Equal score rows leave the scores unchanged, but the relabelled
        # areas still change weight: log(1 - Phi(0.3)) - log(1 - Phi(-0.1)).
        eta = np.array([[0.3, -0.1, 0.2], [0.3, -0.1, 0.2], [1.0, 1.0, 1.0]])
        alloc = np.array([0, 1, 2])
        expected = log_ndtr(-0.3) - log_ndtr(0.1)
        assert label_switch_b_log_ratio(eta, alloc, 0) == pytest.approx(expected, abs=1e-14)

    def test_move_b_unit_ratio_when_nothing_moves_weight(self):
        eta = np.array([[0.3, -0.1, 0.2], [0.3, -0.1, 0.2], [1.0, 1.0, 1.0]])
        alloc = np.array([0, 1, 2])
        eta[:2, 0] = eta[:2, 1] = 0.0
        assert label_switch_b_log_ratio(eta, alloc, 0) == pytest.approx(0.0, abs=1e-14)

    def test_full_posterior_oracle(self, rng):
        """Both ratios equal the change in the allocation log likelihood."""
        T, n = 5, 7
        for _ in range(50):
            eta = rng.normal(0, 1, (T, n))
            alloc = rng.integers(0, 3, n)
            alloc[0], alloc[1] = 0, 1
            lw = log_stick_weights(eta)
            full = lambda e, al: np.sum(log_stick_weights(e)[al, np.arange(n)])  # noqa: E731
            swapped = alloc.copy()
            swapped[alloc == 0], swapped[alloc == 1] = 1, 0
            assert label_switch_a_log_ratio(lw, alloc, 0, 1) == pytest.approx(full(eta, swapped) - full(eta, alloc), abs=1e-12)
            eta_b = eta.copy()
            eta_b[[0, 1]] = eta[[1, 0]]
            ratio_b = label_switch_b_log_ratio(eta, alloc, 0)
            if np.isfinite(ratio_b):
                assert ratio_b == pytest.approx(full(eta_b, swapped) - full(eta, alloc), abs=1e-12)
                assert ratio_b == pytest.approx(label_switch_b_closed_form(eta, alloc, 0), abs=1e-12)

    def test_move_b_refuses_irreversible_swap(self):
        eta = np.zeros((3, 3))
        alloc = np.array([0, 2, 2])
        assert label_switch_b_log_ratio(eta, alloc, 1) == -np.inf
        assert np.isfinite(label_switch_b_log_ratio(eta, alloc, 0))

    def test_moves_need_two_labels(self, rng):
        state = random_state(rng, 5, 3)
        state.alloc[:] = 0
        assert label_switch_a(state, rng) is None
        assert label_switch_b(state, rng) is None

    def test_accepted_move_permutes_state(self, rng):
        n = 6
        eta = np.zeros((3, n))
        state = StickState(eta, np.full((3, n), np.nan), np.array([0, 0, 1, 1, 2, 2]), 0.0, 1.0, 1.0)
        out = label_switch_a(state, rng)
        assert out is not None and out[2]
        assert sorted(np.bincount(state.alloc).tolist()) == [2, 2, 2]
