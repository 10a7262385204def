"""Censor-dependent conditional VAE for right-censored survival data.

The encoder sees ``(x, y, delta)`` and returns a diagonal Gaussian over the
latent ``z``; feeding the true ``delta`` gives the event posterior for
``delta = 1`` rows and the censoring posterior for ``delta = 0`` rows from one
shared network.  The decoder is a location-scale model

    y = mu(x, z) + sigma * eps,   z ~ N(0, I) independent of x,

with ``eps`` standard Gaussian or standard Gumbel-minimum and a single
global ``sigma = exp(log_sigma)``.

Four training objectives are provided, all returning the batch mean of a
per-row bound so that ``-objective`` can be minimized:

* ``elbo_vanilla``: delta-blind encoder (delta input zeroed);
* ``elbo_c``: censor-dependent single-sample bound;
* ``elbo_c_is``: importance-weighted bound with ``m`` draws for events and
  ``k`` draws for censored rows;
* ``elbo_c_dvi``: the importance-weighted bound plus the delta-method bias
  correction computed from self-normalized weights.
"""

from __future__ import annotations

import copy
import csv
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import core_math
from .core_math import DiagonalGaussian, Family
from .data import SurvivalDataset
from .nn import DivergenceError, MlpSpec, ParameterStore, adam_step, apply, forward, init_mlp

OBJECTIVES = ("vanilla", "elbo_c", "is", "dvi")
# training-history column carrying the train objective, per objective
OBJECTIVE_COLUMNS = {"vanilla": "elbo", "elbo_c": "elbo_c", "is": "elbo_c_is", "dvi": "elbo_c_dvi"}
KL_MODES = ("analytic", "sample")


def parse_objective(name: str) -> str:
    key = name.strip().lower().replace("-", "_")
    if key not in OBJECTIVES:
        raise ValueError(f"unknown objective {name!r}; choose from vanilla, elbo-c, is, dvi")
    return key


@dataclass(frozen=True)
class EstimatorConfig:
    objective: str = "elbo_c"
    m: int = 1
    k: int = 1
    temperature: float = 1.0
    kl: str = "analytic"

    def __post_init__(self):
        obj = parse_objective(self.objective)
        object.__setattr__(self, "objective", obj)
        if self.m < 1 or self.k < 1:
            raise ValueError("m and k must be at least 1")
        if obj in ("vanilla", "elbo_c") and (self.m != 1 or self.k != 1):
            raise ValueError(f"{obj} uses a single draw; m and k must be 1")
        if obj == "dvi" and (self.m < 2 or self.k < 2):
            raise ValueError("delta variant needs ≥2 samples")
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if self.kl not in KL_MODES:
            raise ValueError(f"kl must be one of {KL_MODES}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 100
    max_epochs: int = 100
    patience: int | None = None      # defaults to min(10, max_epochs)
    seed: int = 0
    validation_metric: str = "c_index"

    def __post_init__(self):
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch size and max epochs must be positive")
        if self.patience is None:
            object.__setattr__(self, "patience", min(10, self.max_epochs))
        if self.patience < 0 or self.patience > self.max_epochs:
            raise ValueError("patience must lie in [0, max_epochs]")
        if self.validation_metric not in ("elbo", "c_index"):
            raise ValueError("validation metric must be 'elbo' or 'c_index'")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Batch:
    x: np.ndarray
    y: np.ndarray
    delta: np.ndarray

    @property
    def size(self) -> int:
        return len(self.y)


def as_batch(data) -> Batch:
    if isinstance(data, Batch):
        return data
    if isinstance(data, SurvivalDataset):
        return Batch(data.x, data.y, data.delta)
    x, y, delta = data
    x = np.asarray(x, dtype=np.float64)
    return Batch(x if x.ndim == 2 else x[:, None], np.asarray(y, float).reshape(-1),
                 np.asarray(delta).reshape(-1))


@dataclass
class CdCvaeModel:
    encoder_spec: MlpSpec
    decoder_spec: MlpSpec
    params: ParameterStore
    family: Family = Family.GAUSSIAN
    latent_dim: int = 2
    seed: int = 0
    # False for the delta-blind baseline: its encoder always sees delta = 0
    censor_dependent: bool = True
    # Optional replacements used by the evaluation harnesses:
    # encoder_override(x, y, delta) -> DiagonalGaussian on arrays;
    # decoder_override(x, z) -> Tensor of locations (differentiable ops only).
    encoder_override: Callable | None = field(default=None, repr=False)
    decoder_override: Callable | None = field(default=None, repr=False)

    @classmethod
    def create(cls, d_x: int, latent_dim: int | None = None, hidden=(32, 32),
               activation: str = "tanh", dropout: float = 0.0,
               family: Family | str = Family.GAUSSIAN, seed: int = 0) -> "CdCvaeModel":
        latent_dim = 2 * d_x if latent_dim is None else int(latent_dim)
        enc = MlpSpec(d_x + 2, tuple(hidden), 2 * latent_dim, activation, dropout)
        dec = MlpSpec(d_x + latent_dim, tuple(hidden), 1, activation, dropout)
        store = init_mlp(enc, seed, prefix="enc.")
        init_mlp(dec, seed + 1, prefix="dec.", store=store)
        store.add("log_sigma", np.zeros(1))
        return cls(enc, dec, store, Family.parse(family), latent_dim, seed)

    @property
    def d_x(self) -> int:
        return self.encoder_spec.input_width - 2

    @property
    def sigma(self) -> float:
        return float(np.exp(self.params.values["log_sigma"][0]))

    def copy(self) -> "CdCvaeModel":
        out = copy.copy(self)
        out.params = self.params.copy()
        return out

    def metadata(self) -> dict:
        return {
            "encoder_spec": self.encoder_spec.to_dict(),
            "decoder_spec": self.decoder_spec.to_dict(),
            "family": self.family.value,
            "latent_dim": self.latent_dim,
            "seed": self.seed,
            "censor_dependent": self.censor_dependent,
            "step": self.params.step,
        }

    @classmethod
    def from_checkpoint(cls, store: ParameterStore, metadata: dict) -> "CdCvaeModel":
        return cls(
            MlpSpec.from_dict(metadata["encoder_spec"]),
            MlpSpec.from_dict(metadata["decoder_spec"]),
            store,
            Family.parse(metadata["family"]),
            int(metadata["latent_dim"]),
            int(metadata.get("seed", 0)),
            bool(metadata.get("censor_dependent", True)),
        )


# differentiable pieces -------------------------------------------------------

def _encoder_tensors(model, batch, censor_dependent, mode, rng):
    dz = model.latent_dim
    delta_in = batch.delta.astype(np.float64) if censor_dependent else np.zeros(batch.size)
    if model.encoder_override is not None:
        q = model.encoder_override(batch.x, batch.y, delta_in if censor_dependent else batch.delta)
        return ad.constant(q.mean), ad.constant(q.log_scale)
    inp = np.concatenate([batch.x, batch.y[:, None], delta_in[:, None]], axis=1)
    out = forward(model.params, model.encoder_spec, inp, mode, rng, prefix="enc.")
    if not np.all(np.isfinite(out.value)):
        raise FloatingPointError("encoder divergence: non-finite encoder output")
    return out[:, :dz], out[:, dz:]


def _decoder_location(model, x, z, mode, rng):
    """Locations for draws ``z`` of shape (n, B, dz); returns shape (n, B)."""
    n, b, dz = z.shape
    if model.decoder_override is not None:
        return model.decoder_override(np.broadcast_to(x, (n,) + x.shape), z)
    xs = ad.constant(np.broadcast_to(x, (n,) + x.shape).reshape(n * b, -1))
    inp = ad.concat([xs, z.reshape(n * b, dz)], axis=1)
    mu = forward(model.params, model.decoder_spec, inp, mode, rng, prefix="dec.")
    return mu.reshape(n, b)


def _log_sigma(model):
    if "log_sigma" in model.params.values:
        return model.params.node("log_sigma")
    return ad.constant(np.zeros(1))


def _log_f_log_s(model, y, mu, log_sigma):
    s = (ad.constant(y) - mu) / ad.exp(log_sigma)
    if model.family is Family.GAUSSIAN:
        log_f = -0.5 * ad.square(s) - log_sigma - core_math.HALF_LOG_2PI
        log_s = ad.std_normal_log_sf(s)
    else:
        es = ad.exp(s)
        log_f = s - es - log_sigma
        log_s = -es
    return log_f, log_s


def _gaussian_log_density(z, mean, log_scale):
    s = (z - mean) / ad.exp(log_scale)
    return ad.tsum(-0.5 * ad.square(s) - log_scale - core_math.HALF_LOG_2PI, axis=-1)


def _std_log_density(z):
    return ad.tsum(-0.5 * ad.square(z) - core_math.HALF_LOG_2PI, axis=-1)


def _analytic_kl(mean, log_scale):
    return ad.tsum(-log_scale + 0.5 * (ad.exp(2.0 * log_scale) + ad.square(mean)) - 0.5, axis=-1)


@dataclass
class _Draws:
    mean: ad.Tensor
    log_scale: ad.Tensor
    z: ad.Tensor          # (n, B, dz)
    log_f: ad.Tensor      # (n, B)
    log_s: ad.Tensor
    log_prior: ad.Tensor
    log_q: ad.Tensor


def _draw(model, batch, n_draws, censor_dependent, rng, noise, mode):
    if noise is None:
        if rng is None:
            raise ValueError("need an rng or explicit noise")
        noise = rng.standard_normal((n_draws, batch.size, model.latent_dim))
    noise = np.asarray(noise, dtype=np.float64)
    if noise.ndim == 2:
        noise = noise[None]
    if noise.shape[0] < n_draws:
        raise ValueError(f"need {n_draws} noise draws, got {noise.shape[0]}")
    noise = noise[:n_draws]
    mean, log_scale = _encoder_tensors(model, batch, censor_dependent, mode, rng)
    mean3 = mean.reshape((1,) + mean.shape)
    log_scale3 = log_scale.reshape((1,) + log_scale.shape)
    z = mean3 + ad.exp(log_scale3) * noise
    mu = _decoder_location(model, batch.x, z, mode, rng)
    log_f, log_s = _log_f_log_s(model, batch.y, mu, _log_sigma(model))
    return _Draws(mean, log_scale, z, log_f, log_s, _std_log_density(z),
                  _gaussian_log_density(z, mean3, log_scale3))


def _kl_term(d: _Draws, kl: str):
    if kl == "analytic":
        return _analytic_kl(d.mean, d.log_scale)
    return (d.log_q - d.log_prior)[0]


def _importance_part(log_w, count, with_bias):
    """log of the m-sample estimator, optionally plus the delta-method term."""
    lw = log_w[:count]
    lse = ad.logsumexp(lw, axis=0)
    out = lse - math.log(count)
    if with_bias:
        log_norm = lw - lse.reshape((1,) + lse.shape)
        sum_sq = ad.exp(ad.logsumexp(2.0 * log_norm, axis=0))
        out = out + (count * sum_sq - 1.0) / (2.0 * (count - 1))
    return out


def row_objective(model: CdCvaeModel, batch, config: EstimatorConfig, rng=None,
                  noise=None, mode: str = "eval") -> ad.Tensor:
    """Per-row bound, shape (B,).  The batch objectives average this."""
    batch = as_batch(batch)
    event = batch.delta == 1
    temp = config.temperature
    obj = config.objective
    if obj in ("vanilla", "elbo_c"):
        d = _draw(model, batch, 1, obj == "elbo_c", rng, noise, mode)
        kl = _kl_term(d, config.kl)
        if obj == "vanilla":
            return ad.where(event, d.log_f[0], temp * d.log_s[0]) - kl
        return ad.where(event, d.log_f[0] - kl, temp * (d.log_s[0] - kl))
    n = max(config.m, config.k)
    d = _draw(model, batch, n, True, rng, noise, mode)
    bias = obj == "dvi"
    f_part = _importance_part(d.log_f + d.log_prior - d.log_q, config.m, bias)
    s_part = _importance_part(d.log_s + d.log_prior - d.log_q, config.k, bias)
    return ad.where(event, f_part, temp * s_part)


def objective(model, batch, config: EstimatorConfig, rng=None, noise=None, mode="eval") -> ad.Tensor:
    """Batch-mean bound for ``config.objective`` as a scalar tensor."""
    rows = row_objective(model, batch, config, rng, noise, mode)
    if not np.all(np.isfinite(rows.value)):
        bad = int(np.flatnonzero(~np.isfinite(rows.value))[0])
        raise FloatingPointError(f"non-finite objective at row {bad}")
    return ad.tmean(rows)


def elbo_vanilla(model, batch, rng=None, *, noise=None, temperature=1.0, kl="analytic", mode="eval"):
    return objective(model, batch, EstimatorConfig("vanilla", 1, 1, temperature, kl), rng, noise, mode)


def elbo_c(model, batch, rng=None, *, noise=None, temperature=1.0, kl="analytic", mode="eval"):
    return objective(model, batch, EstimatorConfig("elbo_c", 1, 1, temperature, kl), rng, noise, mode)


def elbo_c_is(model, batch, m, k, rng=None, *, noise=None, temperature=1.0, mode="eval"):
    return objective(model, batch, EstimatorConfig("is", m, k, temperature), rng, noise, mode)


def elbo_c_dvi(model, batch, m, k, rng=None, *, noise=None, temperature=1.0, mode="eval"):
    if m < 2 or k < 2:
        raise ValueError("delta variant needs ≥2 samples")
    return objective(model, batch, EstimatorConfig("dvi", m, k, temperature), rng, noise, mode)


def delta_method_bias(log_weights, axis: int = 0):
    """(m * sum(w_norm^2) - 1) / (2 (m - 1)) from unnormalized log weights."""
    lw = np.asarray(log_weights, dtype=np.float64)
    m = lw.shape[axis]
    if m < 2:
        raise ValueError("delta variant needs ≥2 samples")
    log_norm = lw - np.expand_dims(core_math.log_sum_exp(lw, axis=axis), axis)
    sum_sq = np.exp(core_math.log_sum_exp(2.0 * log_norm, axis=axis))
    return (m * sum_sq - 1.0) / (2.0 * (m - 1))


# plain-array helpers -----------------------------------------------------------

def encode(model, x, y, delta, rng=None, n_draws: int = 1, censor_dependent: bool | None = None):
    """Encoder distribution and ``n_draws`` reparameterized samples (n, B, dz).

    ``censor_dependent`` defaults to the model's own setting, so a baseline
    model is queried with its delta input zeroed.
    """
    if censor_dependent is None:
        censor_dependent = model.censor_dependent
    batch = as_batch((x, y, delta))
    mean, log_scale = _encoder_tensors(model, batch, censor_dependent, "eval", None)
    q = DiagonalGaussian(mean.value, log_scale.value)
    if rng is None:
        return q, None
    eps = rng.standard_normal((n_draws,) + q.mean.shape)
    return q, q.mean + q.scale * eps


def decoder_location(model, x, z) -> np.ndarray:
    """Decoder location for latent draws ``z`` of shape (n, B, dz) -> (n, B)."""
    x = np.asarray(x, dtype=np.float64)
    x = x if x.ndim == 2 else x[:, None]
    z = np.asarray(z, dtype=np.float64)
    if z.ndim == 2:
        z = z[None]
    if model.decoder_override is not None:
        return _decoder_location(model, x, ad.constant(z), "eval", None).value
    n, b, dz = z.shape
    inp = np.concatenate([np.broadcast_to(x, (n,) + x.shape), z], axis=-1)
    return apply(model.params, model.decoder_spec, inp.reshape(n * b, -1), prefix="dec.").reshape(n, b)


def log_f(model, y, x, z) -> np.ndarray:
    mu = decoder_location(model, x, z)
    return core_math.log_pdf(model.family, np.asarray(y, float), mu, model.sigma)


def log_S(model, y, x, z) -> np.ndarray:
    mu = decoder_location(model, x, z)
    return core_math.log_survival(model.family, np.asarray(y, float), mu, model.sigma)


def d_elbo_c_d_sigma(model, batch, z_draws, temperature: float = 1.0) -> float:
    """Closed-form derivative of the single-draw ELBO-C batch mean in ``sigma``.

    Events contribute ``(s^2 - 1) / sigma`` (Gaussian) or
    ``(-(s + 1) + exp(s) s) / sigma`` (Gumbel-minimum); censored rows
    contribute ``h(s) s / sigma`` with ``h`` the noise hazard, where ``s`` is
    the standardized time.  The KL terms do not involve ``sigma``.
    """
    batch = as_batch(batch)
    mu = decoder_location(model, batch.x, z_draws)[0]
    sigma = model.sigma
    s = (batch.y - mu) / sigma
    event = batch.delta == 1
    if model.family is Family.GAUSSIAN:
        ev = (s * s - 1.0) / sigma
        ce = core_math.std_normal_hazard(s) * s / sigma
    else:
        es = np.exp(s)
        ev = (-(s + 1.0) + es * s) / sigma
        ce = es * s / sigma
    return float((np.sum(ev[event]) + temperature * np.sum(ce[~event])) / batch.size)


def predict_survival(model, x, t, n_prior_samples: int = 200, seed: int = 0) -> np.ndarray:
    """Marginal survival S(t | x) = E_{z ~ N(0, I)} S(t | x, z), shape (n, len(t)).

    The same prior draws serve every ``t`` and every row, so each row's curve
    is nonincreasing in ``t``.
    """
    if n_prior_samples < 1:
        raise ValueError("need at least one prior draw")
    x = np.asarray(x, dtype=np.float64)
    x = x if x.ndim == 2 else x[:, None]
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    z = np.random.default_rng(seed).standard_normal((n_prior_samples, 1, model.latent_dim))
    z = np.broadcast_to(z, (n_prior_samples, len(x), model.latent_dim))
    mu = decoder_location(model, x, z)          # (S, n)
    out = np.empty((len(x), len(t)))
    for j, tj in enumerate(t):
        surv = np.exp(core_math.log_survival(model.family, tj, mu, model.sigma))
        out[:, j] = surv.mean(axis=0)
    return np.clip(out, 0.0, 1.0)


# training -----------------------------------------------------------------------

@dataclass
class TrainResult:
    model: CdCvaeModel
    history: list
    best_epoch: int
    best_value: float


def validation_score(model, data: SurvivalDataset, metric: str, estimator: EstimatorConfig,
                     seed: int = 0, n_prior_samples: int = 200) -> float:
    if metric == "elbo":
        cfg = estimator
        return float(objective(model, data, cfg, np.random.default_rng(seed)).value)
    from .metrics import c_index_quantile_avg
    events = np.sort(data.y[data.delta == 1])
    times = np.quantile(events, np.arange(1, 11) / 10.0)
    surv = predict_survival(model, data.x, times, n_prior_samples, seed)
    return c_index_quantile_avg(surv, data.y, data.delta, times)


def train(model: CdCvaeModel, train_data: SurvivalDataset, validation_data: SurvivalDataset,
          estimator: EstimatorConfig, config: TrainConfig,
          monitor: Callable | None = None) -> TrainResult:
    """Minibatch Adam ascent on the chosen bound with early stopping.

    ``monitor(model)`` may return a dict of extra per-epoch values that are
    stored in the history.
    """
    model = model.copy()
    model.censor_dependent = estimator.objective != "vanilla"
    rng = np.random.default_rng(config.seed)
    history = []
    best_value, best_epoch, best_params = -np.inf, -1, None
    wait = 0
    n = train_data.n
    column = OBJECTIVE_COLUMNS[estimator.objective]
    for epoch in range(config.max_epochs):
        order = rng.permutation(n)
        total, count, bad_run = 0.0, 0, 0
        for b, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start:start + config.batch_size]
            batch = Batch(train_data.x[idx], train_data.y[idx], train_data.delta[idx])
            try:
                obj = objective(model, batch, estimator, rng, mode="train")
                value = obj.item()
            except FloatingPointError:
                value = float("nan")
            if not np.isfinite(value):
                bad_run += 1
                model.params.zero_grad()
                if bad_run >= 3:
                    raise DivergenceError(f"non-finite objective at epoch {epoch}, batch {b}")
                continue
            bad_run = 0
            ad.backward(-obj)
            adam_step(model.params, config.learning_rate)
            total += value * len(idx)
            count += len(idx)
        score = validation_score(model, validation_data, config.validation_metric, estimator,
                                 seed=config.seed)
        row = {"epoch": epoch, column: total / max(count, 1),
               f"validation_{config.validation_metric}": score}
        if monitor is not None:
            row.update(monitor(model))
        history.append(row)
        if score > best_value:
            best_value, best_epoch, best_params = score, epoch, model.params.copy()
            wait = 0
        else:
            wait += 1
        if wait >= config.patience:
            break
    model.params = best_params
    return TrainResult(model, history, best_epoch, best_value)


def write_history(path, history: list) -> None:
    keys = list(history[0]) if history else ["epoch"]
    for row in history:
        keys.extend(k for k in row if k not in keys)
    with Path(path).open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        for row in history:
            w.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v)
                        for k, v in row.items()})
