"""Dense networks, parameter storage and the Adam optimizer."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad

ACTIVATIONS = ("tanh", "relu")


class DivergenceError(RuntimeError):
    """Raised when an optimizer step meets a non-finite gradient or objective."""


@dataclass(frozen=True)
class MlpSpec:
    input_width: int
    hidden_widths: tuple = (32, 32)
    output_width: int = 1
    activation: str = "tanh"
    dropout: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        widths = (self.input_width,) + self.hidden_widths + (self.output_width,)
        if any(int(w) <= 0 for w in widths):
            raise ValueError(f"layer widths must be positive, got {widths}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout}")

    @property
    def layer_shapes(self) -> list:
        widths = (self.input_width,) + self.hidden_widths + (self.output_width,)
        return list(zip(widths[:-1], widths[1:]))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden_widths"] = list(self.hidden_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MlpSpec":
        return cls(**d)


@dataclass
class ParameterStore:
    """Named float64 arrays with gradient and Adam moment slots."""

    values: dict = field(default_factory=dict)
    grads: dict = field(default_factory=dict)
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)
    step: int = 0

    def add(self, name: str, array) -> None:
        if name in self.values:
            raise KeyError(f"parameter {name!r} already exists")
        arr = np.array(array, dtype=np.float64, copy=True)
        self.values[name] = arr
        self.grads[name] = np.zeros_like(arr)
        self.first_moment[name] = np.zeros_like(arr)
        self.second_moment[name] = np.zeros_like(arr)

    def names(self) -> list:
        return list(self.values)

    def node(self, name: str) -> ad.Tensor:
        """Leaf tensor whose gradient flows back into this store."""
        return ad.Tensor(self.values[name], param_ref=(self, name))

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)

    def copy(self) -> "ParameterStore":
        out = ParameterStore(step=self.step)
        for name in self.values:
            out.values[name] = self.values[name].copy()
            out.grads[name] = self.grads[name].copy()
            out.first_moment[name] = self.first_moment[name].copy()
            out.second_moment[name] = self.second_moment[name].copy()
        return out

    def load_values(self, other: "ParameterStore") -> None:
        for name, arr in other.values.items():
            self.values[name][...] = arr

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "parameters": {
                name: {"shape": list(arr.shape), "data": arr.reshape(-1).tolist()}
                for name, arr in self.values.items()
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ParameterStore":
        store = cls()
        for name, entry in d["parameters"].items():
            store.add(name, np.array(entry["data"], dtype=np.float64).reshape(entry["shape"]))
        store.step = int(d.get("step", 0))
        return store


def init_mlp(spec: MlpSpec, seed: int, prefix: str = "", store: ParameterStore | None = None) -> ParameterStore:
    """Glorot-uniform weights and zero biases, deterministic in ``seed``."""
    store = ParameterStore() if store is None else store
    rng = np.random.default_rng(seed)
    for i, (fan_in, fan_out) in enumerate(spec.layer_shapes):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        store.add(f"{prefix}W{i}", rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        store.add(f"{prefix}b{i}", np.zeros(fan_out))
    return store


def _activation(name):
    return ad.tanh if name == "tanh" else ad.relu


def forward(store: ParameterStore, spec: MlpSpec, inputs, mode: str = "eval",
            rng: np.random.Generator | None = None, prefix: str = "") -> ad.Tensor:
    """Differentiable forward pass on a 2-D ``(rows, input_width)`` input.

    Dropout acts on the last hidden layer in train mode only, with inverted
    scaling so the eval-mode output is the expectation over masks.
    """
    h = ad.as_tensor(inputs)
    if h.ndim != 2 or h.shape[1] != spec.input_width:
        raise ValueError(f"expected input of width {spec.input_width}, got shape {h.shape}")
    act = _activation(spec.activation)
    n_layers = len(spec.layer_shapes)
    for i in range(n_layers):
        h = ad.matmul(h, store.node(f"{prefix}W{i}")) + store.node(f"{prefix}b{i}")
        if i < n_layers - 1:
            h = act(h)
            if i == n_layers - 2 and mode == "train" and spec.dropout > 0.0:
                if rng is None:
                    raise ValueError("train-mode dropout needs an rng")
                keep = 1.0 - spec.dropout
                h = h * ((rng.random(h.shape) < keep) / keep)
    return h


def apply(store: ParameterStore, spec: MlpSpec, inputs: np.ndarray, prefix: str = "") -> np.ndarray:
    """Eval-mode forward pass on plain arrays (no graph)."""
    h = np.asarray(inputs, dtype=np.float64)
    if h.shape[-1] != spec.input_width:
        raise ValueError(f"expected input of width {spec.input_width}, got shape {h.shape}")
    n_layers = len(spec.layer_shapes)
    for i in range(n_layers):
        h = h @ store.values[f"{prefix}W{i}"] + store.values[f"{prefix}b{i}"]
        if i < n_layers - 1:
            h = np.tanh(h) if spec.activation == "tanh" else np.maximum(h, 0.0)
    return h


def adam_step(store: ParameterStore, learning_rate: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Bias-corrected Adam update using the stored gradients, then clear them."""
    for name, g in store.grads.items():
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"divergent step: non-finite gradient in {name!r}")
    store.step += 1
    t = store.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, value in store.values.items():
        g = store.grads[name]
        m = store.first_moment[name]
        v = store.second_moment[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        value -= learning_rate * (m / c1) / (np.sqrt(v / c2) + eps)
        g.fill(0.0)


def save_checkpoint(path, store: ParameterStore, metadata: dict) -> None:
    doc = {"metadata": metadata, "store": store.to_dict()}
    Path(path).write_text(json.dumps(doc, indent=1))


def load_checkpoint(path) -> tuple:
    doc = json.loads(Path(path).read_text())
    return ParameterStore.from_dict(doc["store"]), doc["metadata"]
