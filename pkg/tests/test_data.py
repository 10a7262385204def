import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cdvi import data as D


def _write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


class TestLoadCsv:
    def test_small_file(self, tmp_path):
        ds = D.load_csv(_write(tmp_path, "x1,time,event\n0.5,1.0,1\n1.5,2.0,0\n2.5,3.0,1\n"))
        assert ds.n == 3 and ds.d_x == 1
        assert ds.feature_names == ("x1",)
        assert ds.censor_rate() == pytest.approx(1 / 3)

    def test_all_events(self, tmp_path):
        ds = D.load_csv(_write(tmp_path, "time,event,a,b\n1,1,0,0\n2,1,1,1\n"))
        assert ds.censor_rate() == 0.0 and ds.d_x == 2

    def test_event_out_of_range(self, tmp_path):
        with pytest.raises(ValueError, match="event value out of range"):
            D.load_csv(_write(tmp_path, "x,time,event\n1,1,2\n"))

    def test_missing_column(self, tmp_path):
        with pytest.raises(ValueError, match="'event'"):
            D.load_csv(_write(tmp_path, "x,time\n1,1\n"))

    def test_non_numeric_cell(self, tmp_path):
        with pytest.raises(ValueError, match="row 2, column 'x'"):
            D.load_csv(_write(tmp_path, "x,time,event\n1,1,1\nabc,2,0\n"))

    def test_round_trip(self, tmp_path):
        ds = D.SurvivalDataset(np.random.default_rng(0).normal(size=(7, 2)), np.arange(7.0) / 3,
                               np.array([1, 0, 1, 1, 0, 1, 1]))
        D.write_csv(tmp_path / "o.csv", ds)
        back = D.load_csv(tmp_path / "o.csv")
        np.testing.assert_array_equal(back.x, ds.x)
        np.testing.assert_array_equal(back.y, ds.y)
        np.testing.assert_array_equal(back.delta, ds.delta)


class TestSplit:
    def test_small_sizes(self):
        s = D.split(10, seed=1)
        assert (len(s.train), len(s.validation), len(s.test)) == (6, 2, 2)

    def test_support_sized(self):
        s = D.split(9104, seed=0)
        assert (len(s.train), len(s.validation), len(s.test)) == (5462, 1821, 1821)

    def test_deterministic_and_disjoint(self):
        a, b = D.split(57, 4), D.split(57, 4)
        np.testing.assert_array_equal(a.train, b.train)
        allidx = np.concatenate([a.train, a.validation, a.test])
        assert sorted(allidx.tolist()) == list(range(57))

    def test_too_small(self):
        with pytest.raises(ValueError):
            D.split(4, 0)


class TestStandardize:
    def _ds(self, n=50, seed=0):
        rng = np.random.default_rng(seed)
        return D.SurvivalDataset(rng.normal(2, 3, size=(n, 2)), rng.exponential(2.0, n) + 0.1,
                                 rng.integers(0, 2, n), feature_names=("a", "b"))

    def test_round_trip(self):
        ds = self._ds()
        for transform in ("none", "log"):
            sc = D.standardize(ds, np.arange(30), transform)
            raw = D.to_raw(sc)
            np.testing.assert_allclose(raw.x, ds.x, rtol=1e-10)
            np.testing.assert_allclose(raw.y, ds.y, rtol=1e-10)

    def test_exp_transform_relogged(self):
        ds = self._ds()
        sc = D.standardize(ds, np.arange(30), "exp", scale_time=False)
        np.testing.assert_allclose(np.log(sc.y), ds.y, rtol=1e-10)

    def test_already_standard_feature_unchanged(self):
        ds = self._ds()
        sc = D.standardize(ds, np.arange(ds.n))
        again = D.standardize(D.SurvivalDataset(sc.x, ds.y, ds.delta), np.arange(ds.n))
        np.testing.assert_allclose(again.x, sc.x, atol=1e-12)

    def test_constant_feature(self):
        ds = D.SurvivalDataset(np.column_stack([np.ones(6), np.arange(6.0)]), np.arange(6.0), np.ones(6, int),
                               feature_names=("flat", "ramp"))
        with pytest.raises(ValueError, match="'flat'"):
            D.standardize(ds, np.arange(6))

    def test_fit_rows_only(self):
        ds = self._ds()
        sc = D.standardize(ds, np.arange(10))
        np.testing.assert_allclose(sc.x[:10].mean(axis=0), 0.0, atol=1e-12)


@given(st.lists(st.integers(0, 1), min_size=1, max_size=60), st.integers(0, 2**31))
@settings(max_examples=100, deadline=None)
def test_censor_rate_on_subsets(delta, seed):
    delta = np.array(delta)
    ds = D.SurvivalDataset(np.zeros((len(delta), 1)), np.arange(len(delta), dtype=float), delta)
    idx = np.random.default_rng(seed).choice(len(delta), size=max(1, len(delta) // 2), replace=False)
    assert ds.censor_rate(idx) == np.sum(delta[idx] == 0) / len(idx)
