"""Inference-quality diagnostics and Monte Carlo studies.

* :func:`encoder_kl` compares the encoder with the simulator's known
  posterior in closed form.
* :func:`estimate_loglik` is the importance-sampled likelihood oracle
  ``log f_M`` (or ``log S_M``) with a delta-method standard error.
* :func:`gap_report` averages the per-row inference gap ``L - ELBO``.
* :func:`bias_variance_study` measures the bias and variance of the
  importance-sampled and delta-method log estimators in a conjugate toy.
* :func:`monotonicity_study` tabulates ELBO-C_{m,k} with common random numbers.
* :func:`posterior_slice_export` writes posterior density slices for plotting.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import core_math
from . import model as mdl
from .core_math import DiagonalGaussian, Family
from .data import SurvivalDataset, to_raw
from .simulator import true_posterior

LOG_2PI = math.log(2.0 * math.pi)


# encoder vs truth ------------------------------------------------------------

def encoder_kl(model, dataset: SurvivalDataset):
    """Average closed-form KL(encoder || true posterior) over event and censored rows.

    ``dataset`` is on the model scale; the true posterior is evaluated on the
    raw scale recovered from its transform record.  Returns
    ``(e_kl, c_kl)`` with ``None`` for a row class that is absent.
    """
    if not dataset.has_ground_truth:
        raise ValueError("dataset carries no simulator ground truth")
    q, _ = mdl.encode(model, dataset.x, dataset.y, dataset.delta)
    raw = to_raw(dataset)
    p = true_posterior(raw.x[:, 0], raw.y, raw.delta)
    kl = core_math.kl_diag_gaussian(q, p)
    event = dataset.delta == 1
    e_kl = float(kl[event].mean()) if event.any() else None
    c_kl = float(kl[~event].mean()) if (~event).any() else None
    return e_kl, c_kl


# likelihood oracle -----------------------------------------------------------

@dataclass
class LoglikEstimate:
    value: np.ndarray
    se: np.ndarray
    ess: np.ndarray
    degenerate: np.ndarray   # effective sample size below 10

    @property
    def warning(self) -> bool:
        return bool(np.any(self.degenerate))


def _log_weights(model, batch, n_draws, rng, chunk=1000):
    """Importance log-weights for the row's own likelihood term, shape (n_draws, B)."""
    q, _ = mdl.encode(model, batch.x, batch.y, batch.delta)
    event = batch.delta == 1
    out = np.empty((n_draws, batch.size))
    for start in range(0, n_draws, chunk):
        n = min(chunk, n_draws - start)
        eps = rng.standard_normal((n,) + q.mean.shape)
        z = q.mean + q.scale * eps
        mu = mdl.decoder_location(model, batch.x, z)
        lf = core_math.log_pdf(model.family, batch.y, mu, model.sigma)
        ls = core_math.log_survival(model.family, batch.y, mu, model.sigma)
        log_prior = np.sum(-0.5 * z * z, axis=-1) - 0.5 * q.dim * LOG_2PI
        log_q = np.sum(-0.5 * eps * eps - q.log_scale, axis=-1) - 0.5 * q.dim * LOG_2PI
        out[start:start + n] = np.where(event, lf, ls) + log_prior - log_q
    return out


def summarize_log_weights(log_w) -> LoglikEstimate:
    """log of the mean weight per column, with delta-method s.e. and ESS."""
    log_w = np.asarray(log_w, dtype=np.float64)
    M = log_w.shape[0]
    lse = core_math.log_sum_exp(log_w, axis=0)
    value = lse - math.log(M)
    ratio = np.exp(log_w - value)            # w_i / mean(w)
    var = ratio.var(axis=0, ddof=1) if M > 1 else np.zeros(log_w.shape[1])
    se = np.sqrt(var / M)
    ess = np.exp(2.0 * lse - core_math.log_sum_exp(2.0 * log_w, axis=0))
    return LoglikEstimate(value, se, ess, ess < 10)


def estimate_loglik(model, batch, M: int = 10_000, seed: int = 0, min_draws: int = 1000) -> LoglikEstimate:
    """Per-row ``log f_M`` (events) or ``log S_M`` (censored) with the encoder as proposal."""
    if M < min_draws:
        raise ValueError(f"M must be at least {min_draws}")
    batch = mdl.as_batch(batch)
    return summarize_log_weights(_log_weights(model, batch, M, np.random.default_rng(seed)))


# gap report ------------------------------------------------------------------

@dataclass
class GapReport:
    e_kl: float | None
    c_kl: float | None
    loglik_estimate: float
    loglik_se: float
    elbo_value: float
    elbo_se: float
    gap_estimate: float
    gap_se: float
    M: int
    n_rows: int
    objective: str
    degenerate_rows: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))


def per_row_elbo(model, batch, config: mdl.EstimatorConfig, replications: int = 1000,
                 seed: int = 0, chunk_rows: int = 200_000):
    """Mean and s.e. of the per-row bound over independent replications."""
    batch = mdl.as_batch(batch)
    rng = np.random.default_rng(seed)
    per_chunk = max(1, chunk_rows // (batch.size * max(config.m, config.k)))
    total = np.zeros(batch.size)
    total_sq = np.zeros(batch.size)
    done = 0
    while done < replications:
        r = min(per_chunk, replications - done)
        tiled = mdl.Batch(np.tile(batch.x, (r, 1)), np.tile(batch.y, r), np.tile(batch.delta, r))
        vals = mdl.row_objective(model, tiled, config, rng).value.reshape(r, batch.size)
        total += vals.sum(axis=0)
        total_sq += (vals * vals).sum(axis=0)
        done += r
    mean = total / replications
    var = np.maximum(total_sq / replications - mean * mean, 0.0) * replications / max(replications - 1, 1)
    return mean, np.sqrt(var / replications)


def gap_report(model, dataset, config: mdl.EstimatorConfig | None = None, M: int = 10_000,
               elbo_replications: int = 1000, seed: int = 0) -> GapReport:
    """Average per-row gap ``L_M - ELBO`` with Monte Carlo standard errors.

    The censored likelihood term carries the same temperature as the bound.
    E-KL and C-KL are included when the dataset has simulator ground truth.
    """
    config = config or mdl.EstimatorConfig()
    batch = mdl.as_batch(dataset)
    ll = estimate_loglik(model, batch, M, seed)
    weight = np.where(batch.delta == 1, 1.0, config.temperature)
    ll_rows, ll_se = weight * ll.value, weight * ll.se
    elbo_rows, elbo_se = per_row_elbo(model, batch, config, elbo_replications, seed + 1)
    n = batch.size
    e_kl = c_kl = None
    if isinstance(dataset, SurvivalDataset) and dataset.has_ground_truth:
        e_kl, c_kl = encoder_kl(model, dataset)
    ll_mean_se = float(np.sqrt(np.sum(ll_se ** 2)) / n)
    elbo_mean_se = float(np.sqrt(np.sum(elbo_se ** 2)) / n)
    return GapReport(
        e_kl=e_kl,
        c_kl=c_kl,
        loglik_estimate=float(ll_rows.mean()),
        loglik_se=ll_mean_se,
        elbo_value=float(elbo_rows.mean()),
        elbo_se=elbo_mean_se,
        gap_estimate=float(ll_rows.mean() - elbo_rows.mean()),
        gap_se=float(math.hypot(ll_mean_se, elbo_mean_se)),
        M=M,
        n_rows=n,
        objective=config.objective,
        degenerate_rows=int(ll.degenerate.sum()),
    )


# conjugate toy ---------------------------------------------------------------

@dataclass(frozen=True)
class ToyConfig:
    """Decoder N(z, 1), prior N(0, 1), proposal N(q_mean, q_std^2), observation y."""

    y: float = 0.0
    q_mean: float = 0.5
    q_std: float = 1.5

    @property
    def log_f(self) -> float:
        # marginal N(0, 2)
        return -0.5 * self.y ** 2 / 2.0 - 0.5 * math.log(4.0 * math.pi)

    def log_weights(self, rng, shape):
        z = self.q_mean + self.q_std * rng.standard_normal(shape)
        log_lik = -0.5 * (self.y - z) ** 2 - 0.5 * LOG_2PI
        log_prior = -0.5 * z * z - 0.5 * LOG_2PI
        log_q = -0.5 * ((z - self.q_mean) / self.q_std) ** 2 - math.log(self.q_std) - 0.5 * LOG_2PI
        return log_lik + log_prior - log_q


def conjugate_toy_model(exact_posterior: bool = False, q_mean: float = 0.5, q_std: float = 1.5):
    """A frozen model realizing the conjugate toy; ``x`` is an ignored dummy column.

    With ``exact_posterior`` the encoder returns N(y/2, 1/2), the posterior
    for event rows; otherwise the fixed proposal N(q_mean, q_std^2).
    """
    from . import autodiff as ad
    from .nn import MlpSpec, ParameterStore

    def encoder(x, y, delta):
        y = np.asarray(y, dtype=np.float64)
        if exact_posterior:
            return DiagonalGaussian((y / 2.0)[:, None], np.full((len(y), 1), 0.5 * math.log(0.5)))
        return DiagonalGaussian(np.full((len(y), 1), q_mean), np.full((len(y), 1), math.log(q_std)))

    def decoder(x, z):
        return z[..., 0]

    store = ParameterStore()
    store.add("log_sigma", np.zeros(1))
    return mdl.CdCvaeModel(MlpSpec(3, (1,), 2), MlpSpec(2, (1,), 1), store, Family.GAUSSIAN, 1,
                           encoder_override=encoder, decoder_override=decoder)


def _slope(m, values):
    return float(np.polyfit(np.log(m), np.log(np.abs(values)), 1)[0])


@dataclass
class ScalingStudy:
    m_grid: list
    replications: int
    is_bias: list
    is_bias_se: list
    is_var: list
    is_var_se: list
    dvi_bias: list
    dvi_bias_se: list
    dvi_var: list
    is_bias_slope: float
    is_var_slope: float
    dvi_bias_slope: float
    toy: dict = field(default_factory=dict)
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    def write_csv(self, path) -> None:
        cols = ["m", "is_bias", "is_bias_se", "is_var", "is_var_se", "dvi_bias", "dvi_bias_se", "dvi_var"]
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols + ["is_bias_slope", "is_var_slope", "dvi_bias_slope"])
            for i, m in enumerate(self.m_grid):
                row = [m] + [getattr(self, c)[i] for c in cols[1:]]
                w.writerow(row + [self.is_bias_slope, self.is_var_slope, self.dvi_bias_slope])


def bias_variance_study(toy: ToyConfig | None = None, m_grid=(4, 8, 16, 32, 64, 128, 256, 512, 1024),
                        replications: int = 10_000, seed: int = 0,
                        max_block: int = 4_000_000) -> ScalingStudy:
    """Bias and variance of ``log f_m`` and its delta-method correction versus ``m``.

    Bias is estimated as the mean of ``log(f_m / f) - (f_m / f - 1)``: the
    subtracted ratio term has expectation exactly zero, and removing it
    cancels the first-order fluctuation so the O(1/m) bias is resolved with
    a modest number of replications.
    """
    toy = toy or ToyConfig()
    m_grid = [int(m) for m in m_grid]
    if any(b <= a for a, b in zip(m_grid, m_grid[1:])) or m_grid[0] < 2:
        raise ValueError("m grid must be strictly increasing and start at 2 or more")
    if replications < 2:
        raise ValueError("need at least two replications")
    rng = np.random.default_rng(seed)
    out = {k: [] for k in ("is_bias", "is_bias_se", "is_var", "is_var_se",
                           "dvi_bias", "dvi_bias_se", "dvi_var")}
    for m in m_grid:
        log_is, log_dvi = [], []
        per_block = max(1, max_block // m)
        done = 0
        while done < replications:
            r = min(per_block, replications - done)
            lw = toy.log_weights(rng, (m, r))
            lis = core_math.log_sum_exp(lw, axis=0) - math.log(m)
            log_is.append(lis)
            log_dvi.append(lis + mdl.delta_method_bias(lw, axis=0))
            done += r
        log_is = np.concatenate(log_is) - toy.log_f
        log_dvi = np.concatenate(log_dvi) - toy.log_f
        control = np.expm1(log_is)
        for key, vals in (("is", log_is), ("dvi", log_dvi)):
            adjusted = vals - control
            out[f"{key}_bias"].append(float(adjusted.mean()))
            out[f"{key}_bias_se"].append(float(adjusted.std(ddof=1) / math.sqrt(replications)))
            out[f"{key}_var"].append(float(vals.var(ddof=1)))
        centered = (log_is - log_is.mean()) ** 2
        out["is_var_se"].append(float(centered.std(ddof=1) / math.sqrt(replications)))
    return ScalingStudy(
        m_grid=m_grid,
        replications=replications,
        is_bias_slope=_slope(m_grid, out["is_bias"]),
        is_var_slope=_slope(m_grid, out["is_var"]),
        dvi_bias_slope=_slope(m_grid, out["dvi_bias"]),
        toy=asdict(toy),
        seed=seed,
        **out,
    )


# monotonicity ----------------------------------------------------------------

@dataclass
class MonotonicityTable:
    m_grid: list
    k_grid: list
    mean: np.ndarray          # (len(m_grid), len(k_grid))
    se: np.ndarray
    replications: int
    violations: list          # (axis, from, to, at, diff, diff_se)
    loglik: float | None = None

    @property
    def nondecreasing(self) -> bool:
        return not self.violations

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["m", "k", "elbo_c_mk", "se", "gap"])
            for i, m in enumerate(self.m_grid):
                for j, k in enumerate(self.k_grid):
                    gap = "" if self.loglik is None else self.loglik - self.mean[i, j]
                    w.writerow([m, k, self.mean[i, j], self.se[i, j], gap])


def monotonicity_study(model, batch, m_grid=(1, 2, 4, 8, 16, 32), k_grid=(1, 2, 4, 8, 16, 32),
                       replications: int = 100_000, seed: int = 0, temperature: float = 1.0,
                       block: int = 500, loglik_M: int | None = None) -> MonotonicityTable:
    """Monte Carlo ELBO-C_{m,k} on a fixed batch with common random numbers.

    Each replication draws ``max(grid)`` latents per row once; the m-sample
    estimate uses the first ``m``.  The batch bound splits into an event part
    depending only on ``m`` and a censored part depending only on ``k``, so
    the table is their sum.  A step along either axis counts as a violation
    when its paired mean difference falls more than 2 s.e. below zero.
    """
    batch = mdl.as_batch(batch)
    m_grid, k_grid = [int(m) for m in m_grid], [int(k) for k in k_grid]
    n_max = max(m_grid + k_grid)
    event = batch.delta == 1
    q, _ = mdl.encode(model, batch.x, batch.y, batch.delta)
    rng = np.random.default_rng(seed)
    ev_parts = np.empty((replications, len(m_grid)))
    ce_parts = np.empty((replications, len(k_grid)))
    B = batch.size
    done = 0
    while done < replications:
        r = min(block, replications - done)
        eps = rng.standard_normal((n_max, r, B, q.dim))
        z = q.mean + q.scale * eps
        mu = mdl.decoder_location(model, batch.x, z.reshape(n_max * r, B, q.dim)).reshape(n_max, r, B)
        log_prior = np.sum(-0.5 * z * z, axis=-1)
        log_q = np.sum(-0.5 * eps * eps - q.log_scale, axis=-1)
        lf = core_math.log_pdf(model.family, batch.y, mu, model.sigma) + log_prior - log_q
        ls = core_math.log_survival(model.family, batch.y, mu, model.sigma) + log_prior - log_q
        for i, m in enumerate(m_grid):
            est = core_math.log_sum_exp(lf[:m], axis=0) - math.log(m)
            ev_parts[done:done + r, i] = est[:, event].sum(axis=1) / B
        for j, k in enumerate(k_grid):
            est = core_math.log_sum_exp(ls[:k], axis=0) - math.log(k)
            ce_parts[done:done + r, j] = temperature * est[:, ~event].sum(axis=1) / B
        done += r
    cells = ev_parts[:, :, None] + ce_parts[:, None, :]
    mean = cells.mean(axis=0)
    se = cells.std(axis=0, ddof=1) / math.sqrt(replications)
    violations = []
    for axis, grid, parts in (("m", m_grid, ev_parts), ("k", k_grid, ce_parts)):
        for a in range(len(grid) - 1):
            diff = parts[:, a + 1] - parts[:, a]
            d_mean = float(diff.mean())
            d_se = float(diff.std(ddof=1) / math.sqrt(replications))
            if d_mean < -2.0 * d_se:
                violations.append((axis, grid[a], grid[a + 1], d_mean, d_se))
    loglik = None
    if loglik_M is not None:
        ll = estimate_loglik(model, batch, loglik_M, seed + 1)
        loglik = float(np.sum(np.where(event, 1.0, temperature) * ll.value) / B)
    return MonotonicityTable(m_grid, k_grid, mean, se, replications, violations, loglik)


# posterior slices ------------------------------------------------------------

def local_event_rate(dataset: SurvivalDataset, x: float, y: float, neighbours: int = 200) -> float:
    """Share of events among the nearest raw-scale rows to ``(x, y)``."""
    raw = to_raw(dataset)
    d2 = (raw.x[:, 0] - x) ** 2 + (raw.y - y) ** 2
    k = min(neighbours, raw.n)
    nearest = np.argpartition(d2, k - 1)[:k]
    return float(raw.delta[nearest].mean())


def posterior_slice_export(model, dataset: SurvivalDataset, x: float = 1.0, y: float = 0.0,
                           grid=None, path=None, neighbours: int = 200) -> dict:
    """Densities over a 2-D latent grid at raw ``(x, y)``.

    Columns: encoder with delta = 1, encoder with delta = 0, their mixture
    weighted by the local event rate, and the true posteriors for both
    delta values.  Returns the arrays; writes a CSV when ``path`` is given.
    """
    if grid is None:
        grid = np.linspace(-5.0, 5.0, 101)
    grid = np.asarray(grid, dtype=np.float64)
    z1, z2 = np.meshgrid(grid, grid, indexing="ij")
    pts = np.stack([z1.ravel(), z2.ravel()], axis=-1)
    rec = dataset.transform
    xm = rec.x_forward(np.array([[x]]))
    ym = rec.time_forward(np.array([y]))
    cols = {"z1": pts[:, 0], "z2": pts[:, 1]}
    for d in (1, 0):
        q, _ = mdl.encode(model, xm, ym, np.array([d]), censor_dependent=True)
        cols[f"q_delta{d}"] = np.exp(DiagonalGaussian(q.mean[0], q.log_scale[0]).log_density(pts))
    rate = local_event_rate(dataset, x, y, neighbours)
    cols["q_marginal"] = rate * cols["q_delta1"] + (1.0 - rate) * cols["q_delta0"]
    for d in (1, 0):
        p = true_posterior(x, y, d)
        cols[f"true_delta{d}"] = np.exp(DiagonalGaussian(p.mean, p.log_scale).log_density(pts))
    if path is not None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(list(cols))
            for row in zip(*cols.values()):
                w.writerow([repr(float(v)) for v in row])
    cols["event_rate"] = rate
    cols["cell_area"] = float((grid[1] - grid[0]) ** 2)
    return cols


def ground_truth_model(sigma_u: float = 1.0):
    """Frozen model with the simulator's decoder ``z1 + x z2`` and its posterior as encoder.

    It operates on raw (untransformed) simulated data.
    """
    from .nn import MlpSpec, ParameterStore

    def encoder(x, y, delta):
        return true_posterior(np.asarray(x)[:, 0], y, delta)

    def decoder(x, z):
        return z[..., 0] + z[..., 1] * x[..., 0]

    store = ParameterStore()
    store.add("log_sigma", np.full(1, math.log(sigma_u)))
    return mdl.CdCvaeModel(MlpSpec(3, (1,), 4), MlpSpec(3, (1,), 1), store, Family.GAUSSIAN, 2,
                           encoder_override=encoder, decoder_override=decoder)
