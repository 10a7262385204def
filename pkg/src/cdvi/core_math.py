"""Scalar building blocks shared by the model, the simulator and the metrics.

Every function accepts scalars or numpy arrays and broadcasts; results are
float64.  The two supported noise families are the standard Gaussian and
the standard Gumbel-minimum distribution, which turn the decoder into a
log-normal or Weibull accelerated failure time model respectively.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy import special

LOG_2PI = float(np.log(2.0 * np.pi))
HALF_LOG_2PI = 0.5 * LOG_2PI

# Gaussian log-survival switches to the asymptotic tail series here.
TAIL_SWITCH = 25.0
# Gumbel-minimum standardized values above this give log S = -inf.
GUMBEL_CAP = 700.0


class Family(enum.Enum):
    GAUSSIAN = "gaussian"
    GUMBEL_MIN = "gumbel-min"

    @classmethod
    def parse(cls, value: "Family | str") -> "Family":
        if isinstance(value, Family):
            return value
        key = str(value).strip().lower().replace("_", "-")
        for member in cls:
            if member.value == key:
                return member
        raise ValueError(
            f"unknown family {value!r}; expected one of "
            + ", ".join(m.value for m in cls)
        )


@dataclass(frozen=True)
class DiagonalGaussian:
    """Gaussian with diagonal covariance, stored as mean and log standard deviation.

    Arrays may carry leading batch axes; the last axis is the latent dimension.
    """

    mean: np.ndarray
    log_scale: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        log_scale = np.asarray(self.log_scale, dtype=np.float64)
        if mean.shape != log_scale.shape:
            raise ValueError(
                f"mean shape {mean.shape} != log_scale shape {log_scale.shape}"
            )
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(log_scale))):
            raise ValueError("DiagonalGaussian entries must be finite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "log_scale", log_scale)

    @property
    def dim(self) -> int:
        return int(self.mean.shape[-1])

    @property
    def scale(self) -> np.ndarray:
        return np.exp(self.log_scale)

    @classmethod
    def standard(cls, dim: int) -> "DiagonalGaussian":
        return cls(np.zeros(dim), np.zeros(dim))

    def sample(self, rng: np.random.Generator, n: int | None = None) -> np.ndarray:
        shape = self.mean.shape if n is None else (n,) + self.mean.shape
        return self.mean + self.scale * rng.standard_normal(shape)

    def log_density(self, z) -> np.ndarray:
        """Log density summed over the last axis."""
        s = (np.asarray(z, dtype=np.float64) - self.mean) / self.scale
        return np.sum(-0.5 * s * s - self.log_scale - HALF_LOG_2PI, axis=-1)


def log_sum_exp(values, axis=None, keepdims: bool = False):
    """Numerically stable ``log(sum(exp(values)))``.

    Entries may be ``-inf``; a reduction over only ``-inf`` gives ``-inf``.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0 or (axis is not None and v.shape[axis] == 0):
        raise ValueError("empty reduction")
    top = np.max(v, axis=axis, keepdims=True)
    safe_top = np.where(np.isfinite(top), top, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(v - safe_top), axis=axis, keepdims=True)) + safe_top
    out = np.where(np.isneginf(top), -np.inf, out)
    if not keepdims:
        out = np.squeeze(out, axis=axis) if axis is not None else out.reshape(())
    return out[()] if isinstance(out, np.ndarray) and out.ndim == 0 else out


def _check_scale(sigma):
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(~(sigma > 0)):
        raise ValueError("nonpositive scale")
    return sigma


def _standardize(y, mu, sigma):
    sigma = _check_scale(sigma)
    return (np.asarray(y, dtype=np.float64) - mu) / sigma, sigma


def std_normal_log_pdf(s):
    s = np.asarray(s, dtype=np.float64)
    return -0.5 * s * s - HALF_LOG_2PI


def std_normal_log_sf(s):
    """log(1 - Phi(s)) for the standard normal, stable across the real line.

    Below 0 the complement is tiny and ``log1p`` is exact; up to
    ``TAIL_SWITCH`` the complementary error function is used directly; beyond
    it the four-term Mills-ratio series takes over.
    """
    s = np.asarray(s, dtype=np.float64)
    out = np.empty_like(s)
    left = s < 0.0
    mid = (s >= 0.0) & (s < TAIL_SWITCH)
    tail = s >= TAIL_SWITCH
    if np.any(left):
        out[left] = np.log1p(-0.5 * special.erfc(-s[left] / np.sqrt(2.0)))
    if np.any(mid):
        out[mid] = np.log(0.5 * special.erfc(s[mid] / np.sqrt(2.0)))
    if np.any(tail):
        out[tail] = _normal_tail_series(s[tail])
    return out[()] if out.ndim == 0 else out


def _normal_tail_series(s):
    inv2 = 1.0 / (s * s)
    series = 1.0 + inv2 * (-1.0 + inv2 * (3.0 + inv2 * (-15.0 + inv2 * 105.0)))
    return std_normal_log_pdf(s) - np.log(s) + np.log(series)


def std_gumbel_min_log_pdf(s):
    s = np.asarray(s, dtype=np.float64)
    with np.errstate(over="ignore"):
        return s - np.exp(np.minimum(s, GUMBEL_CAP)) + np.where(s > GUMBEL_CAP, -np.inf, 0.0)


def std_gumbel_min_log_sf(s):
    s = np.asarray(s, dtype=np.float64)
    return np.where(s > GUMBEL_CAP, -np.inf, -np.exp(np.minimum(s, GUMBEL_CAP)))


def log_pdf(family, y, mu, sigma):
    """Log density of ``y = mu + sigma * eps`` with ``eps`` from ``family``."""
    family = Family.parse(family)
    s, sigma = _standardize(y, mu, sigma)
    if family is Family.GAUSSIAN:
        return std_normal_log_pdf(s) - np.log(sigma)
    return std_gumbel_min_log_pdf(s) - np.log(sigma)


def log_survival(family, y, mu, sigma):
    """Log of P(Y > y) for the location-scale model."""
    family = Family.parse(family)
    s, _ = _standardize(y, mu, sigma)
    if family is Family.GAUSSIAN:
        return std_normal_log_sf(s)
    return std_gumbel_min_log_sf(s)


def std_normal_hazard(s):
    """Standard normal hazard phi(s) / (1 - Phi(s)), the inverse Mills ratio."""
    return np.exp(std_normal_log_pdf(s) - std_normal_log_sf(s))


def kl_diag_gaussian(q: DiagonalGaussian, p: DiagonalGaussian) -> np.ndarray:
    """Closed-form KL[q || p], summed over the latent axis."""
    if q.mean.shape[-1] != p.mean.shape[-1]:
        raise ValueError(
            f"dimension mismatch: q has {q.mean.shape[-1]}, p has {p.mean.shape[-1]}"
        )
    var_ratio = np.exp(2.0 * (q.log_scale - p.log_scale))
    diff = (q.mean - p.mean) * np.exp(-p.log_scale)
    terms = p.log_scale - q.log_scale + 0.5 * (var_ratio + diff * diff) - 0.5
    return np.sum(terms, axis=-1)
