import numpy as np
import pytest
from scipy.signal import lfilter

from bnpspatial.data import DataError, Dataset, read_dataset, write_dataset
from bnpspatial.diagnostics import GewekeSetup, batch_means_se, effective_sample_size, geweke_test, geweke_z
from bnpspatial.trace import ChainTrace, TraceError
from tests.conftest import make_mixed_dataset


class TestDatasetFiles:
    def test_round_trip(self, rng, tmp_path):
        ds = make_mixed_dataset(rng, n=7)
        ds.area_ids = np.arange(101, 108)
        write_dataset(ds, tmp_path / "d.csv")
        back = read_dataset(tmp_path / "d.csv")
        for name in ("y1", "E", "y2", "N", "y3", "w", "x", "area_ids"):
            np.testing.assert_array_equal(getattr(back, name), getattr(ds, name))
        assert back.w_names == ds.w_names and back.x_names == ds.x_names

    def test_comments_and_blank_lines(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("# header note\narea,y1,E\n\n1,3,2.5\n2,0,1.0\n")
        ds = read_dataset(p)
        assert list(ds.y1) == [3, 0]

    @pytest.mark.parametrize("text", [
        "",
        "area,y1,E\n1,3\n",
        "area,y1,E\n1,x,2\n",
        "area,y1,E,colour\n1,3,2,4\n",
        "area,y1,E\n1,-1,2\n",
        "area,y1,E\n1,1.5,2\n",
        "area,y1,E\n1,1,0\n",
        "area,y2,N\n1,4,3\n",
        "area,y1\n1,4\n",
        "area,y1,y1,E\n1,4,4,1\n",
    ])
    def test_bad_files(self, tmp_path, text):
        p = tmp_path / "d.csv"
        p.write_text(text)
        with pytest.raises(DataError):
            read_dataset(p)

    def test_non_finite(self):
        with pytest.raises(DataError):
            Dataset(y3=np.array([1.0, np.nan]))


class TestTraceFiles:
    def make(self):
        tr = ChainTrace(["alpha", "lam"], ["lp.y1", "alloc"], 3, area_ids=np.array([4, 5, 6]))
        r = np.random.default_rng(0)
        for k in range(5):
            tr.append(10 + k, {"alpha": r.normal(), "lam": r.random()},
                      {"lp.y1": r.normal(size=3), "alloc": r.integers(1, 4, 3)})
        return tr.finalize(acceptance={"lambda": 0.25}, tuning={"lambda_step": np.float64(1.5)})

    def test_round_trip(self, tmp_path):
        tr = self.make()
        tr.write(tmp_path / "t.csv")
        back = ChainTrace.read(tmp_path / "t.csv")
        np.testing.assert_array_equal(back.scalar("alpha"), tr.scalar("alpha"))
        np.testing.assert_array_equal(back.area("lp.y1"), tr.area("lp.y1"))
        np.testing.assert_array_equal(back.iterations, np.arange(10, 15))
        assert back.acceptance == {"lambda": 0.25}
        assert back.columns()[-1] == "alloc[6]"

    def test_header_mismatch(self, tmp_path):
        tr = self.make()
        tr.write(tmp_path / "t.csv")
        text = (tmp_path / "t.csv").read_text().replace("alpha", "beta", 1)
        (tmp_path / "t.csv").write_text(text)
        with pytest.raises(TraceError):
            ChainTrace.read(tmp_path / "t.csv")

    def test_unknown_columns(self):
        tr = self.make()
        with pytest.raises(TraceError):
            tr.scalar("nope")
        with pytest.raises(TraceError):
            tr.area("nope")
        with pytest.raises(TraceError):
            ChainTrace(["a,b"], [], 1)

    def test_missing_schema(self, tmp_path):
        (tmp_path / "t.csv").write_text("iter\n")
        with pytest.raises(TraceError):
            ChainTrace.read(tmp_path / "t.csv")


class TestDiagnostics:
    def test_iid_standard_error(self):
        x = np.random.default_rng(1).standard_normal(50000)
        assert batch_means_se(x) == pytest.approx(1 / np.sqrt(x.size), rel=0.3)

    def test_ar1_effective_size(self):
        # one 50-batch estimate has about 20% relative noise, so average 40 series
        r = np.random.default_rng(2)
        rho, k = 0.8, 20000
        innov = r.standard_normal((k, 40)) * np.sqrt(1 - rho ** 2)
        x = lfilter([1.0], [1.0, -rho], innov, axis=0)
        ess = effective_sample_size(x[500:])
        assert ess.mean() == pytest.approx((k - 500) * (1 - rho) / (1 + rho), rel=0.1)

    def test_too_few_draws(self):
        with pytest.raises(ValueError):
            batch_means_se(np.zeros(10), n_batches=50)

    def test_geweke_z_detects_shift(self):
        r = np.random.default_rng(3)
        a = r.standard_normal((5000, 2))
        b = r.standard_normal((5000, 2)) + np.array([0.0, 0.3])
        z = geweke_z(a, b)
        assert abs(z[0]) < 4 and z[1] < -8

    def test_joint_test_runs(self):
        setup = GewekeSetup(responses=("count",), truncation=2)
        names, z = geweke_test(setup, sweeps=300, seed=5)
        assert len(names) == z.size
        assert np.all(np.isfinite(z))
