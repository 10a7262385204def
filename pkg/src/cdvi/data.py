"""Right-censored datasets: CSV input/output, splits and standardization."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

TIME_TRANSFORMS = ("none", "log", "exp")


@dataclass(frozen=True)
class TransformRecord:
    """Maps raw times and covariates to the model scale and back.

    Model-scale time is ``(g(t) - time_mean) / time_std`` where ``g`` is the
    identity, ``log`` or ``exp`` according to ``time_transform``.
    """

    x_mean: np.ndarray
    x_std: np.ndarray
    time_transform: str = "none"
    time_mean: float = 0.0
    time_std: float = 1.0

    def __post_init__(self):
        if self.time_transform not in TIME_TRANSFORMS:
            raise ValueError(f"time transform must be one of {TIME_TRANSFORMS}")

    @classmethod
    def identity(cls, d_x: int) -> "TransformRecord":
        return cls(np.zeros(d_x), np.ones(d_x))

    def x_forward(self, x):
        return (np.asarray(x, dtype=np.float64) - self.x_mean) / self.x_std

    def x_inverse(self, x):
        return np.asarray(x, dtype=np.float64) * self.x_std + self.x_mean

    def time_forward(self, t):
        t = np.asarray(t, dtype=np.float64)
        if self.time_transform == "log":
            t = np.log(t)
        elif self.time_transform == "exp":
            t = np.exp(t)
        return (t - self.time_mean) / self.time_std

    def time_inverse(self, t):
        t = np.asarray(t, dtype=np.float64) * self.time_std + self.time_mean
        if self.time_transform == "log":
            return np.exp(t)
        if self.time_transform == "exp":
            return np.log(t)
        return t

    def to_dict(self) -> dict:
        return {
            "x_mean": self.x_mean.tolist(),
            "x_std": self.x_std.tolist(),
            "time_transform": self.time_transform,
            "time_mean": self.time_mean,
            "time_std": self.time_std,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TransformRecord":
        return cls(
            np.asarray(d["x_mean"], dtype=np.float64),
            np.asarray(d["x_std"], dtype=np.float64),
            d.get("time_transform", "none"),
            float(d.get("time_mean", 0.0)),
            float(d.get("time_std", 1.0)),
        )


@dataclass(frozen=True)
class SurvivalDataset:
    """Covariates ``x`` (n, d_x), observed times ``y`` and event indicators ``delta``.

    ``latent`` optionally holds simulator ground truth as arrays keyed by
    ``z`` (n, 2), ``u`` and ``c``.
    """

    x: np.ndarray
    y: np.ndarray
    delta: np.ndarray
    feature_names: tuple = ()
    transform: TransformRecord | None = None
    latent: dict | None = None

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
        y = np.asarray(self.y, dtype=np.float64).reshape(-1)
        delta = np.asarray(self.delta).reshape(-1)
        if not (len(x) == len(y) == len(delta)):
            raise ValueError("x, y and delta must have the same number of rows")
        if not np.all(np.isin(delta, (0, 1))):
            raise ValueError("event value out of range")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("covariates and times must be finite")
        names = tuple(self.feature_names) or tuple(f"x{i + 1}" for i in range(x.shape[1]))
        if len(names) != x.shape[1]:
            raise ValueError("feature name count does not match covariate width")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "delta", delta.astype(np.int64))
        object.__setattr__(self, "feature_names", names)
        if self.transform is None:
            object.__setattr__(self, "transform", TransformRecord.identity(x.shape[1]))

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def d_x(self) -> int:
        return self.x.shape[1]

    @property
    def has_ground_truth(self) -> bool:
        return self.latent is not None and "z" in self.latent

    def censor_rate(self, indices=None) -> float:
        delta = self.delta if indices is None else self.delta[np.asarray(indices)]
        return float(np.mean(delta == 0)) if len(delta) else float("nan")

    def subset(self, indices) -> "SurvivalDataset":
        idx = np.asarray(indices, dtype=np.int64)
        latent = None
        if self.latent is not None:
            latent = {k: np.asarray(v)[idx] for k, v in self.latent.items()}
        return replace(self, x=self.x[idx], y=self.y[idx], delta=self.delta[idx], latent=latent)

    def summary(self) -> dict:
        q = [0.0, 0.25, 0.5, 0.75, 1.0]
        return {
            "n": self.n,
            "d_x": self.d_x,
            "censor_rate": self.censor_rate(),
            "time_quantiles": dict(zip(["min", "q25", "median", "q75", "max"],
                                       np.quantile(self.y, q).tolist())),
        }


@dataclass(frozen=True)
class SplitIndices:
    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray
    seed: int = 0

    def to_dict(self) -> dict:
        return {"seed": self.seed, "train": self.train.tolist(),
                "validation": self.validation.tolist(), "test": self.test.tolist()}


def load_csv(path, time_column: str = "time", event_column: str = "event") -> SurvivalDataset:
    """Read a header-first CSV; every other column becomes a covariate."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        rows = [r for r in reader if r]
    for col in (time_column, event_column):
        if col not in header:
            raise ValueError(f"{path}: missing column {col!r}")
    table = np.empty((len(rows), len(header)))
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise ValueError(f"{path}: row {i + 1} has {len(row)} cells, expected {len(header)}")
        for j, cell in enumerate(row):
            try:
                table[i, j] = float(cell)
            except ValueError:
                raise ValueError(
                    f"{path}: non-numeric value {cell!r} at row {i + 1}, column {header[j]!r}"
                ) from None
    t_col, e_col = header.index(time_column), header.index(event_column)
    events = table[:, e_col]
    if not np.all(np.isin(events, (0.0, 1.0))):
        bad = int(np.flatnonzero(~np.isin(events, (0.0, 1.0)))[0])
        raise ValueError(f"{path}: event value out of range at row {bad + 1}: {events[bad]!r}")
    feat = [j for j in range(len(header)) if j not in (t_col, e_col)]
    return SurvivalDataset(
        x=table[:, feat].reshape(len(rows), len(feat)),
        y=table[:, t_col],
        delta=events.astype(np.int64),
        feature_names=tuple(header[j] for j in feat),
    )


def write_csv(path, dataset: SurvivalDataset, time_column: str = "time",
              event_column: str = "event") -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(list(dataset.feature_names) + [time_column, event_column])
        for xi, yi, di in zip(dataset.x, dataset.y, dataset.delta):
            w.writerow([repr(float(v)) for v in xi] + [repr(float(yi)), int(di)])


def write_summary(path, dataset: SurvivalDataset) -> None:
    Path(path).write_text(json.dumps(dataset.summary(), indent=2))


def split(dataset: SurvivalDataset | int, seed: int) -> SplitIndices:
    """Shuffle by ``seed`` and cut 60/20/20.

    Validation and test each get ``0.2 * n`` rounded half up; train takes the
    remainder, so n=9104 splits as (5462, 1821, 1821).
    """
    n = dataset if isinstance(dataset, (int, np.integer)) else dataset.n
    if n < 5:
        raise ValueError(f"need at least 5 rows to split, got {n}")
    perm = np.random.default_rng(seed).permutation(n)
    n_val = n_test = int(np.floor(0.2 * n + 0.5))
    n_train = n - n_val - n_test
    return SplitIndices(
        train=np.sort(perm[:n_train]),
        validation=np.sort(perm[n_train:n_train + n_val]),
        test=np.sort(perm[n_train + n_val:]),
        seed=seed,
    )


def standardize(dataset: SurvivalDataset, fit_indices, time_transform: str = "none",
                scale_time: bool = True) -> SurvivalDataset:
    """Center and scale covariates (and optionally times) using ``fit_indices`` only.

    Returns a new dataset on the model scale whose ``transform`` record maps
    back to the raw scale.  Any transform already on ``dataset`` is replaced,
    so pass raw data.
    """
    idx = np.asarray(fit_indices, dtype=np.int64)
    if idx.size == 0:
        raise ValueError("fit indices must be nonempty")
    x_fit = dataset.x[idx]
    x_mean = x_fit.mean(axis=0)
    x_std = x_fit.std(axis=0)
    for name, s in zip(dataset.feature_names, x_std):
        if not s > 0:
            raise ValueError(f"zero-variance feature {name!r} on the fit set")
    record = TransformRecord(x_mean, x_std, time_transform)
    g = record.time_forward(dataset.y)
    if scale_time:
        t_std = float(g[idx].std())
        if not t_std > 0:
            raise ValueError("observed times have zero variance on the fit set")
        record = TransformRecord(x_mean, x_std, time_transform, float(g[idx].mean()), t_std)
    return replace(
        dataset,
        x=record.x_forward(dataset.x),
        y=record.time_forward(dataset.y),
        transform=record,
    )


def to_raw(dataset: SurvivalDataset) -> SurvivalDataset:
    """Invert a dataset's transform record back to raw covariates and times."""
    rec = dataset.transform
    return replace(
        dataset,
        x=rec.x_inverse(dataset.x),
        y=rec.time_inverse(dataset.y),
        transform=TransformRecord.identity(dataset.d_x),
    )
