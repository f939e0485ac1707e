import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from bnpspatial.graph import build_graph, grid_graph
from bnpspatial.simgen import (
    ClusterSpec,
    SpecError,
    Truth,
    default_cluster_specs,
    eta_ramse,
    gen_study1,
    gen_study2,
    quadrant_labels,
    ramse,
    read_cluster_specs,
    study1_layout,
    write_cluster_specs,
)


@pytest.fixture
def presets():
    return {s.name: s for s in default_cluster_specs()}


class TestClusterSpecs:
    def test_ne_is_identity(self, presets):
        ne = presets["NE"]
        assert ne.mu_w == 10.0
        np.testing.assert_array_equal(ne.covariance(), np.eye(3))

    def test_se_values(self, presets):
        se = presets["SE"]
        assert se.var_w == 3.0
        assert se.rho_yw == -0.9

    def test_sw_confounder_coefficient(self, presets):
        assert presets["SW"].beta[3] == 0.2

    def test_presets_tagged_as_reconstructions(self, presets):
        assert {s.status for s in presets.values()} == {"reconstruction"}

    def test_qualitative_structure(self, presets):
        nw, sw, se, ne = presets["NW"], presets["SW"], presets["SE"], presets["NE"]
        assert nw.rho_xw > 0.5 and nw.beta[1] > 0 and nw.beta[3] == 0
        assert sw.rho_xw > 0.5 and sw.beta[1] == 0
        assert se.beta[1] == se.beta[3] == 0
        assert ne.beta[2] != 0

    def test_not_positive_definite(self):
        with pytest.raises(SpecError):
            ClusterSpec("bad", 0.0, 1.0, rho_yw=0.8, rho_xw=0.8)
        with pytest.raises(SpecError):
            ClusterSpec("bad", 0.0, 0.0)
        with pytest.raises(SpecError):
            ClusterSpec("bad", 0.0, 1.0, beta=(1.0, 2.0))

    def test_file_round_trip(self, tmp_path, presets):
        path = tmp_path / "c.ini"
        write_cluster_specs(list(presets.values()), path, header="edited copy")
        back = {s.name: s for s in read_cluster_specs(path)}
        assert back == presets
        assert path.read_text().startswith("# edited copy\n")

    def test_missing_file(self, tmp_path):
        with pytest.raises(SpecError):
            read_cluster_specs(tmp_path / "nope.ini")

    def test_slope_is_derivative(self, presets):
        x = np.linspace(-1.5, 1.5, 7)
        h = 1e-6
        for s in presets.values():
            fd = (s.log_rate(x + h, 1.0) - s.log_rate(x - h, 1.0)) / (2 * h)
            np.testing.assert_allclose(s.slope(x), fd, atol=1e-6)


def test_quadrant_labels():
    lab = quadrant_labels(4, 4).reshape(4, 4)
    assert lab[0, 0] == "NW" and lab[0, 3] == "NE"
    assert lab[3, 0] == "SW" and lab[3, 3] == "SE"
    assert (lab == "NW").sum() == 4


class TestStudy1:
    def test_risk_factor_is_uniform(self):
        g = build_graph([], 10000)
        spec = ClusterSpec("A", 0.0, 1.0, rho_xw=0.5)
        ds, _ = gen_study1(g, ["A"] * g.n, [spec], np.random.default_rng(3))
        assert stats.kstest(ds.x[:, 0], stats.uniform(-1.5, 3.0).cdf).pvalue > 0.01

    def test_null_counts_have_mean_e(self):
        g = build_graph([], 20000)
        spec = ClusterSpec("A", 0.0, 1.0)
        ds, truth = gen_study1(g, ["A"] * g.n, [spec], np.random.default_rng(4))
        resid = ds.y1 - ds.E
        assert abs(resid.mean()) < 4 * np.sqrt(ds.E.mean() / g.n)
        assert np.all(truth.eta == 0.0) and np.all(truth.beta1 == 0.0)
        assert ds.E.min() >= 10.0 and ds.E.max() <= 20.0

    def test_counts_follow_target_rate(self):
        g = build_graph([], 20000)
        spec = ClusterSpec("A", 0.0, 1.0, beta=(0.1, 0.5, -0.2, 0.0))
        ds, truth = gen_study1(g, ["A"] * g.n, [spec], np.random.default_rng(5))
        rate = ds.E * np.exp(truth.eta)
        bins = np.quantile(rate, np.linspace(0, 1, 11))
        idx = np.clip(np.searchsorted(bins, rate, side="right") - 1, 0, 9)
        obs = np.bincount(idx, ds.y1, 10)
        exp = np.bincount(idx, rate, 10)
        chi2 = np.sum((obs - exp) ** 2 / exp)
        assert stats.chi2.sf(chi2, 10) > 0.001

    def test_truth_slope_and_layout(self, presets):
        g, labels = study1_layout(6, 6)
        ds, truth = gen_study1(g, labels, list(presets.values()), np.random.default_rng(0))
        assert ds.n == 36 and ds.x_names == ["x"] and ds.w_names == ["w"]
        for name, spec in presets.items():
            m = truth.cluster == name
            np.testing.assert_allclose(truth.beta1[m], spec.slope(ds.x[m, 0]))
            np.testing.assert_allclose(truth.eta[m], spec.log_rate(ds.x[m, 0], ds.w[m, 0]))

    def test_labels_validated(self, presets):
        g = grid_graph(2, 2)
        with pytest.raises(SpecError):
            gen_study1(g, ["NW"] * 3, list(presets.values()), np.random.default_rng(0))
        with pytest.raises(SpecError):
            gen_study1(g, ["XX"] * 4, list(presets.values()), np.random.default_rng(0))

    def test_deterministic(self, presets):
        g, labels = study1_layout(4, 4)
        a, _ = gen_study1(g, labels, list(presets.values()), np.random.default_rng(9))
        b, _ = gen_study1(g, labels, list(presets.values()), np.random.default_rng(9))
        np.testing.assert_array_equal(a.y1, b.y1)
        np.testing.assert_array_equal(a.w, b.w)


class TestStudy2:
    def test_zero_scale_is_pure_poisson(self, grid4):
        ds, truth = gen_study2(grid4, 10.0, 0.0, np.random.default_rng(1))
        assert np.all(truth.eta == 0.0)

    def test_zero_scale_counts(self):
        g = grid_graph(40, 40)
        ds, _ = gen_study2(g, 5.0, 0.0, np.random.default_rng(2))
        assert abs((ds.y1 - ds.E).mean()) < 4 * np.sqrt(20.0 / g.n)

    def test_deterministic(self, grid4):
        a, ta = gen_study2(grid4, 5.0, 2.0, np.random.default_rng(7))
        b, tb = gen_study2(grid4, 5.0, 2.0, np.random.default_rng(7))
        np.testing.assert_array_equal(a.y1, b.y1)
        np.testing.assert_array_equal(ta.eta, tb.eta)

    def test_scale_multiplies_field(self, grid4):
        _, t1 = gen_study2(grid4, 5.0, 1.0, np.random.default_rng(7))
        _, t2 = gen_study2(grid4, 5.0, 2.0, np.random.default_rng(7))
        np.testing.assert_allclose(t2.eta, 2.0 * t1.eta)

    def test_negative_scale(self, grid4):
        with pytest.raises(SpecError):
            gen_study2(grid4, 5.0, -1.0, np.random.default_rng(0))

    def test_truth_round_trip(self, grid4, tmp_path):
        _, truth = gen_study2(grid4, 1.0, 1.0, np.random.default_rng(0))
        truth.write(tmp_path / "t.csv")
        back = Truth.read(tmp_path / "t.csv")
        np.testing.assert_array_equal(back.eta, truth.eta)
        np.testing.assert_array_equal(back.area_ids, truth.area_ids)


class TestMetrics:
    def test_exact_trace_gives_zero(self):
        truth = np.array([0.1, -0.4, 2.0])
        assert ramse(np.tile(truth, (5, 1)), truth).overall == 0.0

    def test_unit_offset_gives_one(self):
        truth = np.array([0.1, -0.4, 2.0])
        rep = ramse(np.tile(truth + 1.0, (5, 1)), truth, ["a", "b", "a"])
        assert rep.overall == pytest.approx(1.0)
        assert rep.ramse == pytest.approx({"a": 1.0, "b": 1.0})

    def test_hand_case(self):
        # area 1 truth 0: draws 1, 2, 3 -> mse (1 + 4 + 9) / 3 = 14/3
        # area 2 truth 1: draws 1, 0, 1 -> mse (0 + 1 + 0) / 3 = 1/3
        draws = np.array([[1.0, 1.0], [2.0, 0.0], [3.0, 1.0]])
        rep = ramse(draws, np.array([0.0, 1.0]), ["p", "q"])
        np.testing.assert_allclose(rep.mse, [14 / 3, 1 / 3])
        assert rep.overall == pytest.approx(np.sqrt(2.5))
        assert rep.ramse["p"] == pytest.approx(np.sqrt(14 / 3))

    def test_empty_trace(self):
        with pytest.raises(ValueError):
            ramse(np.zeros((0, 3)), np.zeros(3))
        with pytest.raises(ValueError):
            ramse(np.zeros((2, 3)), np.zeros(4))

    def test_eta_ramse_cases(self):
        t = [np.array([0.0, 1.0]), np.array([2.0, -1.0])]
        assert eta_ramse(t, t) == 0.0
        assert eta_ramse([x + 0.3 for x in t], t) == pytest.approx(0.3)
        # errors 1, 0 and 2, 1 -> sqrt((1 + 0 + 4 + 1) / 4)
        est = [np.array([1.0, 1.0]), np.array([4.0, 0.0])]
        assert eta_ramse(est, t) == pytest.approx(np.sqrt(1.5))

    def test_eta_ramse_mismatch(self):
        with pytest.raises(ValueError):
            eta_ramse([np.zeros(2)], [np.zeros(3)])
        with pytest.raises(ValueError):
            eta_ramse([], [])


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2 ** 31 - 1), k=st.integers(1, 8), n=st.integers(1, 10))
def test_ramse_properties(seed, k, n):
    r = np.random.default_rng(seed)
    truth = r.normal(size=n)
    draws = truth + r.normal(size=(k, n))
    rep = ramse(draws, truth)
    assert rep.overall >= 0
    assert rep.overall ** 2 == pytest.approx(rep.mse.mean())
    perm = r.permutation(n)
    assert ramse(draws[:, perm], truth[perm]).overall == pytest.approx(rep.overall)
    pushed_away = draws + 0.5 * np.sign(draws - truth)
    assert ramse(pushed_away, truth).overall >= rep.overall
