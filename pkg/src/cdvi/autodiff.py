"""Array-valued reverse-mode differentiation.

A :class:`Tensor` wraps a float64 array and remembers how it was produced.
Calling :func:`backward` on a scalar tensor walks the recorded graph in
reverse topological order and accumulates gradients.  Leaves created from a
:class:`~cdvi.nn.ParameterStore` push their gradient back into the store.

The graph is rebuilt for every evaluation; nothing is cached between calls.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from . import core_math


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("value", "parents", "backward_fn", "grad", "param_ref", "__weakref__")

    def __init__(self, value, parents: Sequence["Tensor"] = (), backward_fn=None, param_ref=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = tuple(parents)
        # backward_fn(upstream) -> one gradient per parent (None to skip)
        self.backward_fn = backward_fn
        self.grad = None
        self.param_ref = param_ref

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def item(self) -> float:
        return float(self.value)

    def __repr__(self):
        return f"Tensor(shape={self.value.shape}, value={self.value!r})"

    # arithmetic -----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def __pow__(self, exponent):
        return power(self, exponent)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x) -> Tensor:
    return Tensor(x)


# elementwise binary -------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return Tensor(
        a.value + b.value,
        (a, b),
        lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    return Tensor(
        av * bv,
        (a, b),
        lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    out = av / bv
    return Tensor(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / bv, av.shape), _unbroadcast(-g * out / bv, bv.shape)),
    )


def neg(a) -> Tensor:
    a = as_tensor(a)
    return Tensor(-a.value, (a,), lambda g: (-g,))


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    av = a.value
    p = float(exponent)
    return Tensor(av ** p, (a,), lambda g: (g * p * av ** (p - 1.0),))


def where(cond, a, b) -> Tensor:
    """Select ``a`` where ``cond`` holds, else ``b``; gradients follow the selection."""
    a, b = as_tensor(a), as_tensor(b)
    cond = np.asarray(cond, dtype=bool)
    out = np.where(cond, a.value, b.value)

    def back(g):
        zero = np.zeros_like(g)
        return (
            _unbroadcast(np.where(cond, g, zero), a.shape),
            _unbroadcast(np.where(cond, zero, g), b.shape),
        )

    return Tensor(out, (a, b), back)


# elementwise unary --------------------------------------------------------

def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.value)
    return Tensor(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    av = a.value
    return Tensor(np.log(av), (a,), lambda g: (g / av,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.value)
    return Tensor(out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.value > 0
    return Tensor(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,))


def square(a) -> Tensor:
    a = as_tensor(a)
    av = a.value
    return Tensor(av * av, (a,), lambda g: (2.0 * g * av,))


def std_normal_log_sf(a) -> Tensor:
    """log(1 - Phi(s)); its derivative is minus the standard normal hazard."""
    a = as_tensor(a)
    av = a.value
    out = core_math.std_normal_log_sf(av)
    return Tensor(
        out, (a,), lambda g: (-g * np.exp(core_math.std_normal_log_pdf(av) - out),)
    )


# reductions and shape -----------------------------------------------------

def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    out = np.sum(a.value, axis=axis, keepdims=keepdims)

    def back(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return Tensor(out, (a,), back)


def tmean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    count = a.value.size if axis is None else np.prod(
        [a.shape[i] for i in np.atleast_1d(axis)]
    )
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / float(count))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return Tensor(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def back(g):
        full = np.zeros(shape)
        np.add.at(full, index, g)
        return (full,)

    return Tensor(a.value[index], (a,), back)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return Tensor(
        np.concatenate([t.value for t in tensors], axis=axis),
        tensors,
        lambda g: tuple(np.split(g, splits, axis=axis)),
    )


def matmul(a, b) -> Tensor:
    """Matrix product of a 2-D input with a 2-D weight."""
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    if av.ndim != 2 or bv.ndim != 2:
        raise ValueError("matmul expects 2-D operands")
    return Tensor(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def logsumexp(a, axis: int = 0) -> Tensor:
    """Log-sum-exp along ``axis``; the gradient is the softmax of the inputs."""
    a = as_tensor(a)
    av = a.value
    out = core_math.log_sum_exp(av, axis=axis)
    out_k = np.expand_dims(out, axis)

    def back(g):
        with np.errstate(invalid="ignore"):
            weights = np.exp(av - out_k)
        weights = np.nan_to_num(weights, nan=0.0)
        return (np.expand_dims(g, axis) * weights,)

    return Tensor(out, (a,), back)


# graph traversal -----------------------------------------------------------

def _topological(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(root: Tensor) -> None:
    """Populate ``.grad`` on every node reachable from the scalar ``root``.

    Leaves bound to a parameter store also add their gradient into the
    store's gradient slot.
    """
    if root.value.size != 1:
        raise ValueError(f"backward needs a scalar root, got shape {root.shape}")
    order = _topological(root)
    for node in order:
        node.grad = None
    root.grad = np.ones_like(root.value)
    for node in reversed(order):
        g = node.grad
        if g is None:
            continue
        if node.backward_fn is not None:
            for parent, pg in zip(node.parents, node.backward_fn(g)):
                if pg is None:
                    continue
                parent.grad = pg if parent.grad is None else parent.grad + pg
        if node.param_ref is not None:
            store, name = node.param_ref
            store.grads[name] += g


def finite_diff_grad(
    loss_fn: Callable[[np.random.Generator], float],
    store,
    h: float = 1e-5,
    seed: int | None = 0,
    names: Iterable[str] | None = None,
) -> dict:
    """Central finite differences of ``loss_fn`` with respect to ``store`` values.

    ``loss_fn`` receives a freshly seeded generator on every call so that
    stochastic objectives are differentiated at fixed noise.
    """
    if h <= 0:
        raise ValueError("step must be positive")

    def evaluate():
        rng = np.random.default_rng(seed) if seed is not None else None
        return float(loss_fn(rng))

    grads = {}
    for name in names if names is not None else store.names():
        arr = store.values[name]
        g = np.zeros_like(arr)
        flat, gflat = arr.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            up = evaluate()
            flat[i] = keep - h
            down = evaluate()
            flat[i] = keep
            gflat[i] = (up - down) / (2.0 * h)
        grads[name] = g
    return grads
