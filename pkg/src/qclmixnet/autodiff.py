"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

Only the operations the model and losses need are provided. Every operation
records its parents and a backward closure on the output tensor; ``backward``
orders the recorded graph topologically (the tape) and replays it in reverse.
"""

from __future__ import annotations

import logging
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, float, int, Sequence]


class NumericalError(ValueError):
    """Raised when an operation receives or produces non-finite values."""


class Tensor:
    """Dense float64 array with an optional gradient buffer and graph linkage."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "name")

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        name: Optional[str] = None,
        _parents: tuple = (),
        _backward: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None,
        op: str = "leaf",
    ):
        self.data = np.array(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.op = op
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{label}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def sum(self, axis=None, keepdims=False) -> "Tensor":
        return reduce(self, "sum", axis, keepdims)

    def mean(self, axis=None, keepdims=False) -> "Tensor":
        return reduce(self, "mean", axis, keepdims)

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        backward(self, grad)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericalError(f"non-finite values in {what}")


def _make(data: np.ndarray, parents: tuple, backward_fn, op: str) -> Tensor:
    requires = any(p.requires_grad for p in parents)
    if not requires:
        return Tensor(data, op=op)
    return Tensor(data, requires_grad=True, _parents=parents, _backward=backward_fn, op=op)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# binary arithmetic (numpy broadcasting, gradients summed back to input shape)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def _bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), _bw, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def _bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), _bw, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def _bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), _bw, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def _bw(g):
        return _unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)

    return _make(out, (a, b), _bw, "div")


def power(t: Tensor, exponent: float) -> Tensor:
    """``t ** exponent`` for a constant exponent; exponent 0 yields constant ones."""
    t = as_tensor(t)
    if exponent == 0:
        return _make(np.ones_like(t.data), (t,), lambda g: (np.zeros_like(g),), "pow")
    out = t.data**exponent

    def _bw(g):
        return (g * exponent * t.data ** (exponent - 1),)

    return _make(out, (t,), _bw, "pow")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")

    def _bw(g):
        return g @ b.data.T, a.data.T @ g

    return _make(a.data @ b.data, (a, b), _bw, "matmul")


# ---------------------------------------------------------------------------
# elementwise functions


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def elementwise(t: Tensor, fn: str, slope: float = 0.01) -> Tensor:
    """Apply a named elementwise function with its analytic derivative.

    ``fn`` is one of cos, sin, sigmoid, exp, log, relu, leaky_relu, neg,
    square, sqrt. Kinks (relu at 0, sqrt at 0) take subgradient 0.
    """
    t = as_tensor(t)
    x = t.data
    _check_finite(x, f"{fn} input")
    if fn == "cos":
        out, deriv = np.cos(x), lambda: -np.sin(x)
    elif fn == "sin":
        out, deriv = np.sin(x), lambda: np.cos(x)
    elif fn == "sigmoid":
        out = _sigmoid(x)
        deriv = lambda: out * (1.0 - out)  # noqa: E731
    elif fn == "exp":
        out = np.exp(x)
        deriv = lambda: out  # noqa: E731
    elif fn == "log":
        if np.any(x <= 0):
            raise NumericalError("log of non-positive value")
        out, deriv = np.log(x), lambda: 1.0 / x
    elif fn == "relu":
        out, deriv = np.maximum(x, 0.0), lambda: (x > 0).astype(np.float64)
    elif fn == "leaky_relu":
        out = np.where(x > 0, x, slope * x)
        deriv = lambda: np.where(x > 0, 1.0, slope)  # noqa: E731
    elif fn == "neg":
        out, deriv = -x, lambda: -np.ones_like(x)
    elif fn == "square":
        out, deriv = x * x, lambda: 2.0 * x
    elif fn == "sqrt":
        if np.any(x < 0):
            raise NumericalError("sqrt of negative value")
        out = np.sqrt(x)
        deriv = lambda: np.divide(0.5, out, out=np.zeros_like(out), where=out > 0)  # noqa: E731
    else:
        raise ValueError(f"unknown elementwise function {fn!r}")

    def _bw(g):
        return (g * deriv(),)

    return _make(out, (t,), _bw, fn)


def cos(t):
    return elementwise(t, "cos")


def sin(t):
    return elementwise(t, "sin")


def sigmoid(t):
    return elementwise(t, "sigmoid")


def exp(t):
    return elementwise(t, "exp")


def log(t):
    return elementwise(t, "log")


def relu(t):
    return elementwise(t, "relu")


def leaky_relu(t, slope: float = 0.01):
    return elementwise(t, "leaky_relu", slope=slope)


def neg(t):
    return elementwise(t, "neg")


def square(t):
    return elementwise(t, "square")


def sqrt(t):
    return elementwise(t, "sqrt")


def log_sigmoid(t: Tensor) -> Tensor:
    """Stable ``log(sigmoid(t))``."""
    t = as_tensor(t)
    x = t.data
    _check_finite(x, "log_sigmoid input")
    out = np.minimum(x, 0.0) - np.log1p(np.exp(-np.abs(x)))

    def _bw(g):
        return (g * (1.0 - _sigmoid(x)),)

    return _make(out, (t,), _bw, "log_sigmoid")


def clip(t: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp into [lo, hi]; gradient passes only where the value was inside."""
    t = as_tensor(t)
    out = np.clip(t.data, lo, hi)

    def _bw(g):
        return (g * ((t.data >= lo) & (t.data <= hi)),)

    return _make(out, (t,), _bw, "clip")


# ---------------------------------------------------------------------------
# shape / indexing


def transpose(t: Tensor) -> Tensor:
    t = as_tensor(t)
    return _make(t.data.T, (t,), lambda g: (g.T,), "transpose")


def reshape(t: Tensor, shape: tuple) -> Tensor:
    t = as_tensor(t)
    old = t.shape
    return _make(t.data.reshape(shape), (t,), lambda g: (g.reshape(old),), "reshape")


def take(t: Tensor, index) -> Tensor:
    """Numpy-style indexing; repeated indices accumulate in the backward pass."""
    t = as_tensor(t)

    def _bw(g):
        full = np.zeros_like(t.data)
        np.add.at(full, index, g)
        return (full,)

    return _make(t.data[index], (t,), _bw, "take")


# ---------------------------------------------------------------------------
# reductions


def _check_axis(t: Tensor, axis) -> None:
    if axis is None:
        return
    if not isinstance(axis, (int, np.integer)) or not -t.ndim <= axis < t.ndim:
        raise ValueError(f"invalid axis {axis!r} for tensor of shape {t.shape}")


def reduce(t: Tensor, op: str = "sum", axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    t = as_tensor(t)
    _check_axis(t, axis)
    if op == "sum":
        out = t.data.sum(axis=axis, keepdims=keepdims)
        scale = 1.0
    elif op == "mean":
        out = t.data.mean(axis=axis, keepdims=keepdims)
        scale = 1.0 / (t.size if axis is None else t.shape[axis])
    else:
        raise ValueError(f"unknown reduction {op!r}")

    def _bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g * scale, t.shape).copy(),)

    return _make(out, (t,), _bw, op)


def softmax(t: Tensor, axis: int = -1) -> Tensor:
    t = as_tensor(t)
    _check_axis(t, axis)
    _check_finite(t.data, "softmax input")
    z = t.data - t.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def _bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (t,), _bw, "softmax")


def log_softmax(t: Tensor, axis: int = -1) -> Tensor:
    t = as_tensor(t)
    _check_axis(t, axis)
    _check_finite(t.data, "log_softmax input")
    z = t.data - t.data.max(axis=axis, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))

    def _bw(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _make(out, (t,), _bw, "log_softmax")


# ---------------------------------------------------------------------------
# batch normalisation


def batchnorm(
    t: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    mode: str = "train",
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Batch normalisation over the rows of a ``B x F`` tensor.

    In train mode the batch mean and biased variance normalise the input and
    the running buffers are updated in place (unbiased variance, as torch does,
    when B > 1). Eval mode normalises with the running buffers.
    """
    t, gamma, beta = as_tensor(t), as_tensor(gamma), as_tensor(beta)
    if t.ndim != 2:
        raise ValueError(f"batchnorm expects B x F input, got {t.shape}")
    n, f = t.shape
    if gamma.shape != (f,) or beta.shape != (f,) or running_mean.shape != (f,) or running_var.shape != (f,):
        raise ValueError(f"batchnorm parameter length does not match {f} features")
    if n < 1:
        raise ValueError("batchnorm needs at least one row")
    x = t.data
    if mode == "train":
        mu = x.mean(axis=0)
        var = x.var(axis=0)
        unbiased = var * n / (n - 1) if n > 1 else var
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased
    elif mode == "eval":
        mu, var = running_mean.copy(), running_var.copy()
    else:
        raise ValueError(f"unknown batchnorm mode {mode!r}")
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv_std
    out = gamma.data * xhat + beta.data

    def _bw(g):
        dgamma = (g * xhat).sum(axis=0)
        dbeta = g.sum(axis=0)
        gx = g * gamma.data
        if mode == "train":
            dx = inv_std * (gx - gx.mean(axis=0) - xhat * (gx * xhat).mean(axis=0))
        else:
            dx = gx * inv_std
        return dx, dgamma, dbeta

    return _make(out, (t, gamma, beta), _bw, "batchnorm")


# ---------------------------------------------------------------------------
# backward pass


def topological_order(root: Tensor) -> list[Tensor]:
    """The tape: every gradient-carrying node after all of its inputs."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor, grad: Optional[np.ndarray] = None) -> None:
    """Populate ``.grad`` of every requires-grad tensor reachable from ``loss``.

    Leaf gradients accumulate across calls; intermediate buffers hold the
    gradient of the most recent pass.
    """
    if grad is None:
        if loss.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        grad = np.ones_like(loss.data)
    if not loss.requires_grad:
        return
    tape = topological_order(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.asarray(grad, dtype=np.float64)}
    for node in reversed(tape):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        node.grad = g
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg


def zero_grad(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None


def grad_check(f: Callable[[Tensor], Tensor], x: np.ndarray, h: float = 1e-5) -> float:
    """Max relative error between the analytic gradient and central differences.

    Error per coordinate is ``|analytic - numeric| / max(1, |analytic|)``.
    """
    x = np.array(x, dtype=np.float64)
    xt = Tensor(x.copy(), requires_grad=True)
    out = f(xt)
    backward(out)
    analytic = np.zeros_like(x) if xt.grad is None else xt.grad
    numeric = np.zeros_like(x)
    flat = x.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(Tensor(x.copy())).item()
        flat[i] = orig - h
        fm = f(Tensor(x.copy())).item()
        flat[i] = orig
        numeric.reshape(-1)[i] = (fp - fm) / (2.0 * h)
    err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))
    return float(err.max()) if err.size else 0.0
