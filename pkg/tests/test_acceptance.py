"""Acceptance criteria, each run at its stated tolerance.

Every test records a PASS/FAIL line that is printed in the terminal summary.
Criteria 3 and 8 are known to fail on this simulator and are marked strict
xfail; they still run in full and at full tolerance.
"""

import math
import time

import numpy as np
import pytest

from cdvi import autodiff as ad
from cdvi import core_math as cm
from cdvi import inference as I
from cdvi import metrics as MX
from cdvi import model as M
from cdvi import simulator as S
from cdvi.core_math import Family
from cdvi.data import split, standardize

pytestmark = pytest.mark.slow


def random_model(seed, family):
    model = M.CdCvaeModel.create(1, hidden=(6, 5), family=family, seed=seed)
    rng = np.random.default_rng(seed + 1000)
    for v in model.params.values.values():
        v += 0.3 * rng.normal(size=v.shape)
    return model


def random_batch(seed, n=5):
    rng = np.random.default_rng(seed)
    delta = rng.integers(0, 2, n)
    delta[0], delta[1] = 1, 0
    return M.Batch(rng.normal(size=(n, 1)), rng.normal(size=n), delta)


def brute_c_index(surv, y, delta):
    conc = comp = 0.0
    for i in range(len(y)):
        if delta[i] != 1:
            continue
        for j in range(len(y)):
            if i != j and y[i] <= y[j]:
                comp += 1
                conc += 1.0 if surv[i] < surv[j] else 0.5 if surv[i] == surv[j] else 0.0
    return conc / comp


def prepared(preset, seed):
    ds = S.gibbs_simulate(S.preset(preset, seed=seed))
    idx = split(ds, seed)
    return ds, idx, standardize(ds, idx.train)


def test_gradient_suite(acceptance):
    t0 = time.time()
    configs = [M.EstimatorConfig("vanilla"), M.EstimatorConfig("elbo_c"),
               M.EstimatorConfig("is", 4, 4), M.EstimatorConfig("dvi", 4, 4)]
    worst = 0.0
    ok = True
    for family in Family:
        for i, config in enumerate(configs):
            model = random_model(i, family)
            batch = random_batch(10 + i)
            model.params.zero_grad()
            ad.backward(M.objective(model, batch, config, np.random.default_rng(i)))
            fd = ad.finite_diff_grad(lambda rng: M.objective(model, batch, config, rng).item(),
                                     model.params, seed=i)
            for name, g in fd.items():
                err = np.abs(model.params.grads[name] - g)
                ok &= bool(np.all(err <= 1e-4 * np.abs(g) + 1e-6))
                worst = max(worst, float(np.max(err / np.maximum(np.abs(g), 1e-2))))
    elapsed = time.time() - t0
    ok &= elapsed < 60
    assert acceptance(1, ok, f"max scaled error {worst:.2e}", elapsed)


def test_sigma_derivative_oracle(acceptance):
    t0 = time.time()
    worst = 0.0
    for family in Family:
        for seed in range(20):
            model = random_model(seed, family)
            batch = random_batch(100 + seed, n=8)
            eps = np.random.default_rng(seed).standard_normal((1, 8, 2))
            q, _ = M.encode(model, batch.x, batch.y, batch.delta)
            z = q.mean + q.scale * eps
            model.params.zero_grad()
            ad.backward(M.elbo_c(model, batch, noise=eps))
            auto = model.params.grads["log_sigma"][0] / model.sigma     # undo the exp chain rule
            closed = M.d_elbo_c_d_sigma(model, batch, z)
            worst = max(worst, abs(closed - auto) / abs(auto))
    assert acceptance(2, worst <= 1e-6, f"max relative error {worst:.2e}", time.time() - t0)


@pytest.mark.xfail(strict=True, reason="the simulator's latent conditional is not its decoder's posterior")
def test_zero_gap_oracle(acceptance):
    t0 = time.time()
    ds = S.gibbs_simulate(S.preset("sd4", seed=0))
    rows = split(ds, 0).test[:200]
    rep = I.gap_report(I.ground_truth_model(), ds.subset(rows), M=10_000)
    elapsed = time.time() - t0
    ok = abs(rep.gap_estimate) < 3 * rep.gap_se and rep.gap_se < 0.01 and elapsed < 120
    assert acceptance(3, ok, f"gap {rep.gap_estimate:.4f} ± {rep.gap_se:.4f}", elapsed)


def test_zero_gap_oracle_conjugate_companion():
    # the same harness where the exact posterior is known
    rng = np.random.default_rng(0)
    batch = M.Batch(np.zeros((200, 1)), rng.normal(0, math.sqrt(2), 200), np.ones(200, int))
    rep = I.gap_report(I.conjugate_toy_model(exact_posterior=True), batch, M=10_000)
    assert abs(rep.gap_estimate) < 3 * rep.gap_se and rep.gap_se < 0.01


def test_monotonicity(acceptance):
    t0 = time.time()
    ds = S.gibbs_simulate(S.preset("sd4", n=3000, burn_in=2000, seed=0))
    idx = split(ds, 0)
    sc = standardize(ds, idx.train)
    res = M.train(M.CdCvaeModel.create(1), sc.subset(idx.train), sc.subset(idx.validation),
                  M.EstimatorConfig("elbo_c"), M.TrainConfig(max_epochs=5, patience=5, validation_metric="elbo"))
    batch = sc.subset(idx.test[:20])
    grid = (1, 2, 4, 8, 16, 32)
    tab = I.monotonicity_study(res.model, batch, grid, grid, replications=100_000, seed=1)
    elapsed = time.time() - t0
    ok = tab.nondecreasing and elapsed < 600
    detail = f"corner {tab.mean[0, 0]:.4f} -> {tab.mean[-1, -1]:.4f}, {len(tab.violations)} violations"
    assert acceptance(4, ok, detail, elapsed)


def test_bias_variance_rates(acceptance):
    t0 = time.time()
    st = I.bias_variance_study()
    elapsed = time.time() - t0
    dvi_smaller = all(abs(d) < abs(b) for m, b, d in zip(st.m_grid, st.is_bias, st.dvi_bias) if m >= 32)
    ok = (abs(st.is_bias_slope + 1) <= 0.1 and abs(st.is_var_slope + 1) <= 0.1
          and dvi_smaller and elapsed < 300)
    detail = (f"IS bias slope {st.is_bias_slope:.3f}, IS variance slope {st.is_var_slope:.3f}, "
              f"delta-method bias slope {st.dvi_bias_slope:.3f}")
    assert acceptance(5, ok, detail, elapsed)


def test_simulator_calibration(acceptance):
    t0 = time.time()
    ok = True
    parts = []
    for preset, target in (("sd2", 0.05), ("sd3", 0.20), ("sd4", 0.30), ("sd5", 0.50)):
        ds = S.gibbs_simulate(S.preset(preset, seed=0))
        rate = ds.censor_rate()
        ok &= abs(rate - target) <= 0.015
        ok &= abs(ds.x.mean() - 1) <= 0.02 and abs(ds.x.std() - 1) <= 0.02
        parts.append(f"{preset} {100 * rate:.1f}%")
    elapsed = time.time() - t0
    ok &= elapsed < 60
    assert acceptance(6, ok, ", ".join(parts), elapsed)


def _best_kl(preset, seed, objective):
    ds, idx, sc = prepared(preset, seed)
    train, val = sc.subset(idx.train), sc.subset(idx.validation)
    share = val.delta.mean()
    res = M.train(M.CdCvaeModel.create(1, seed=seed), train, val, M.EstimatorConfig(objective),
                  M.TrainConfig(seed=seed, validation_metric="elbo"),
                  monitor=lambda m: dict(zip(("e_kl", "c_kl"), I.encoder_kl(m, val))))
    best = min(res.history, key=lambda r: share * r["e_kl"] + (1 - share) * r["c_kl"])
    return best["e_kl"], best["c_kl"]


def test_posterior_quality_direction(acceptance):
    t0 = time.time()
    ok = True
    parts = []
    for preset in ("sd3", "sd4", "sd5"):
        wins, pairs = 0, []
        for seed in range(3):
            cd, van = _best_kl(preset, seed, "elbo_c"), _best_kl(preset, seed, "vanilla")
            wins += cd[0] < van[0] and cd[1] < van[1]
            pairs.append(cd + van)
        ok &= wins >= 2
        mean = np.mean(pairs, axis=0)
        parts.append(f"{preset} {wins}/3 (E-KL {mean[0]:.2f} vs {mean[2]:.2f}, C-KL {mean[1]:.2f} vs {mean[3]:.2f})")
    elapsed = time.time() - t0
    ok &= elapsed < 1800
    assert acceptance(7, ok, "; ".join(parts), elapsed)


@pytest.mark.xfail(strict=True, reason="x carries almost no signal about y in this simulator")
def test_concordance_reproduction(acceptance):
    t0 = time.time()
    ok = True
    parts = []
    for preset, target in (("sd3", 0.789), ("sd4", 0.758), ("sd5", 0.673)):
        scores = []
        for seed in range(5):
            ds, idx, sc = prepared(preset, seed)
            res = M.train(M.CdCvaeModel.create(1, seed=seed), sc.subset(idx.train), sc.subset(idx.validation),
                          M.EstimatorConfig("elbo_c"), M.TrainConfig(seed=seed))
            test_raw = ds.subset(idx.test)
            times = MX.quantile_times(test_raw.y, test_raw.delta)
            surv = M.predict_survival(res.model, sc.x[idx.test], sc.transform.time_forward(times))
            scores.append(MX.c_index_quantile_avg(surv, test_raw.y, test_raw.delta, times))
        ok &= abs(np.mean(scores) - target) <= 0.03
        parts.append(f"{preset} {np.mean(scores):.3f} (target {target})")
    elapsed = time.time() - t0
    ok &= elapsed < 1800
    assert acceptance(8, ok, ", ".join(parts), elapsed)


def test_metric_oracles(acceptance):
    t0 = time.time()
    rng = np.random.default_rng(0)
    ok = True
    for _ in range(50):
        n = int(rng.integers(2, 501))
        y = np.round(rng.exponential(size=n), 2)
        delta = rng.integers(0, 2, n)
        delta[np.argmin(y)] = 1
        surv = np.round(rng.uniform(size=n), 2)
        ok &= MX.c_index(surv, y, delta) == brute_c_index(surv, y, delta)
    # IPCW weights such as 1 / (5/6) are inexact in binary, so these agree to rounding
    y6 = np.arange(1.0, 7.0)
    exact = lambda a, b: math.isclose(a, b, rel_tol=1e-15, abs_tol=0.0)
    ok &= exact(MX.c_td_ipcw([0.9, 0.2, 0.4, 0.3, 0.6, 0.35], y6, [0, 1, 1, 1, 1, 1], 5.0).value, 7 / 10)
    ok &= exact(MX.c_td_ipcw([0.1, 0.2, 0.55, 0.25, 0.5, 0.6], y6, [1, 1, 1, 0, 1, 1], 5.0).value, 49 / 57)
    ok &= exact(MX.brier_ipcw([0.9, 0.75, 0.5, 0.25, 0.0, 0.75], y6, [0, 1, 1, 1, 1, 1], 5.0).value, 3 / 16)
    km = MX.kaplan_meier([1, 2, 3], [1, 1, 1])
    ok &= list(km([1, 2, 3])) == [1 - 1 / 3, (1 - 1 / 3) * (1 - 1 / 2), 0.0]
    km = MX.kaplan_meier([1, 2, 3], [0, 1, 1])
    ok &= list(km([1, 2, 3])) == [1.0, 0.5, 0.0]
    assert acceptance(9, bool(ok), "50 brute-force datasets, 3 hand fixtures, 2 product-limit fixtures",
                      time.time() - t0)


def test_numeric_stability(acceptance):
    t0 = time.time()
    rng = np.random.default_rng(0)
    lw = rng.uniform(-700, 700, size=(32, 50))
    lw[:, 0] = np.linspace(-700, 700, 32)
    lw[:, 1] = -700.0
    lw[:, 2] = 700.0
    ok = True
    for with_bias in (False, True):
        t = ad.Tensor(lw.copy())
        out = M._importance_part(t, 32, with_bias)
        ad.backward(ad.tsum(out))
        ok &= bool(np.all(np.isfinite(out.value)) and np.all(np.isfinite(t.grad)))
    ok &= bool(np.all(np.isfinite(M.delta_method_bias(lw))))
    # the full estimator on a model with extreme scale
    model = random_model(0, Family.GAUSSIAN)
    model.params.values["log_sigma"][...] = -5.0
    ok &= bool(np.isfinite(M.elbo_c_is(model, random_batch(1, 20), 8, 8, np.random.default_rng(0)).item()))
    s = np.linspace(-38, 38, 20001)
    ls = cm.std_normal_log_sf(s)
    ok &= bool(np.all(np.isfinite(ls)) and np.all(np.diff(ls) <= 0))
    jump = abs(cm.std_normal_log_sf(cm.TAIL_SWITCH) - cm.std_normal_log_sf(np.nextafter(cm.TAIL_SWITCH, 0.0)))
    ok &= jump < 1e-9
    assert acceptance(10, ok, f"tail handoff jump {jump:.1e}", time.time() - t0)
