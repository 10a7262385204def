import json
import math

import numpy as np
import pytest

from cdvi import inference as I
from cdvi import model as M
from cdvi import simulator as S
from cdvi.data import split, standardize

TOY_LOG_F = -0.5 * math.log(4 * math.pi)     # log N(0; 0, 2)


def toy_batch(n=1, y=0.0):
    return M.Batch(np.zeros((n, 1)), np.full(n, y), np.ones(n, int))


@pytest.fixture(scope="module")
def sd4_raw():
    return S.gibbs_simulate(S.preset("sd4", n=2000, burn_in=1000, seed=3))


class TestLikelihoodOracle:
    def test_toy_value(self):
        assert TOY_LOG_F == pytest.approx(-1.265512, abs=1e-6)

    @pytest.mark.parametrize("M_draws", [1_000, 10_000, 100_000])
    def test_toy_estimate_within_three_se(self, M_draws):
        est = I.estimate_loglik(I.conjugate_toy_model(), toy_batch(), M_draws, seed=1)
        assert abs(est.value[0] - TOY_LOG_F) < 3 * est.se[0]
        assert not est.warning

    def test_exact_posterior_has_zero_variance(self):
        est = I.estimate_loglik(I.conjugate_toy_model(exact_posterior=True), toy_batch(3, 0.8), 1000)
        np.testing.assert_allclose(est.value, -0.25 * 0.8 ** 2 - 0.5 * math.log(4 * math.pi), atol=1e-12)
        np.testing.assert_allclose(est.se, 0.0, atol=1e-12)

    def test_minimum_draws(self):
        with pytest.raises(ValueError, match="at least 1000"):
            I.estimate_loglik(I.conjugate_toy_model(), toy_batch(), 999)

    def test_degenerate_weights_flagged(self):
        lw = np.full((100, 1), -50.0)
        lw[0, 0] = 0.0
        est = I.summarize_log_weights(lw)
        assert est.ess[0] == pytest.approx(1.0) and est.warning

    def test_toy_log_weights_are_unbiased(self):
        lw = I.ToyConfig().log_weights(np.random.default_rng(0), 400_000)
        w = np.exp(lw - TOY_LOG_F)
        assert abs(w.mean() - 1.0) < 3 * w.std() / math.sqrt(w.size)


class TestGap:
    def test_exact_posterior_gap_vanishes(self):
        rep = I.gap_report(I.conjugate_toy_model(exact_posterior=True), toy_batch(4, 0.3), M=1000,
                           elbo_replications=2000)
        assert abs(rep.gap_estimate) < 3 * rep.gap_se + 1e-12

    def test_gap_nonnegative_for_misfit_encoder(self):
        rep = I.gap_report(I.conjugate_toy_model(), toy_batch(2), M=10_000, elbo_replications=2000)
        assert rep.gap_estimate > 0
        assert rep.e_kl is None and rep.n_rows == 2

    def test_report_serializes(self, tmp_path):
        rep = I.gap_report(I.conjugate_toy_model(), toy_batch(), M=1000, elbo_replications=10)
        rep.write(tmp_path / "gap.json")
        assert json.loads((tmp_path / "gap.json").read_text())["M"] == 1000


class TestEncoderKl:
    def test_truth_has_zero_kl(self, sd4_raw):
        e_kl, c_kl = I.encoder_kl(I.ground_truth_model(), sd4_raw)
        assert e_kl == pytest.approx(0.0, abs=1e-12)
        assert c_kl == pytest.approx(0.0, abs=1e-12)

    def test_absent_censored_class(self):
        ds = S.gibbs_simulate(S.preset("sd1", n=200, burn_in=50))
        e_kl, c_kl = I.encoder_kl(I.ground_truth_model(), ds)
        assert c_kl is None and e_kl == pytest.approx(0.0, abs=1e-12)

    def test_standardized_scale_is_undone(self, sd4_raw):
        idx = split(sd4_raw, 0)
        sc = standardize(sd4_raw, idx.train)
        e_kl, c_kl = I.encoder_kl(M.CdCvaeModel.create(1, seed=1), sc)
        assert e_kl > 0 and c_kl > 0

    def test_needs_ground_truth(self, sd4_raw):
        from cdvi.data import SurvivalDataset
        bare = SurvivalDataset(sd4_raw.x, sd4_raw.y, sd4_raw.delta)
        with pytest.raises(ValueError, match="ground truth"):
            I.encoder_kl(I.ground_truth_model(), bare)


class TestPosteriorSlice:
    def test_truth_peaks_at_posterior_mean(self, sd4_raw, tmp_path):
        idx = split(sd4_raw, 0)
        sc = standardize(sd4_raw, idx.train)
        out = I.posterior_slice_export(M.CdCvaeModel.create(1, seed=2), sc, path=tmp_path / "s.csv")
        peak = np.argmax(out["true_delta1"])
        assert out["z1"][peak] == pytest.approx(1.1, abs=1e-9)
        assert out["z2"][peak] == pytest.approx(1.1, abs=1e-9)
        assert 3 / math.e == pytest.approx(1.1036, abs=1e-4)
        for col in ("q_delta1", "q_delta0", "q_marginal", "true_delta1", "true_delta0"):
            assert abs(out[col].sum() * out["cell_area"] - 1.0) < 1e-2, col
        assert 0 <= out["event_rate"] <= 1
        header = (tmp_path / "s.csv").read_text().splitlines()[0]
        assert header == "z1,z2,q_delta1,q_delta0,q_marginal,true_delta1,true_delta0"


class TestStudies:
    def test_single_draw_cell_is_elbo_c_expectation(self):
        model = M.CdCvaeModel.create(1, hidden=(4,), seed=3)
        rng = np.random.default_rng(0)
        batch = M.Batch(rng.normal(size=(6, 1)), rng.normal(size=6), np.array([1, 0, 1, 0, 1, 1]))
        tab = I.monotonicity_study(model, batch, (1,), (1,), replications=20_000, seed=1)
        mean, se = I.per_row_elbo(model, batch, M.EstimatorConfig("elbo_c", kl="sample"), 20_000, seed=2)
        ref_se = math.sqrt(np.sum(se ** 2)) / 6
        assert abs(tab.mean[0, 0] - mean.mean()) < 4 * math.hypot(tab.se[0, 0], ref_se)

    def test_small_grid_is_monotone(self):
        model = M.CdCvaeModel.create(1, hidden=(4,), seed=4)
        rng = np.random.default_rng(1)
        batch = M.Batch(rng.normal(size=(5, 1)), rng.normal(size=5), np.array([1, 0, 1, 0, 0]))
        tab = I.monotonicity_study(model, batch, (1, 2, 4), (1, 2, 4), replications=2000, loglik_M=1000)
        assert tab.nondecreasing
        assert tab.mean[-1, -1] <= tab.loglik + 3 * tab.se[-1, -1]

    def test_scaling_study_serializes(self, tmp_path):
        st = I.bias_variance_study(m_grid=(4, 16, 64), replications=2000)
        st.write_json(tmp_path / "s.json")
        st.write_csv(tmp_path / "s.csv")
        d = json.loads((tmp_path / "s.json").read_text())
        assert d["m_grid"] == [4, 16, 64]
        assert set(d) >= {"is_bias_slope", "is_var_slope", "dvi_bias_slope"}
        assert all(b < 0 for b in d["is_bias"])

    def test_grid_validation(self):
        with pytest.raises(ValueError):
            I.bias_variance_study(m_grid=(8, 4))
