"""Reverse-mode automatic differentiation on float64 numpy arrays.

A `Tensor` wraps an ndarray and records the operation that produced it.
`backward(loss)` walks the recorded graph once in reverse topological
order and accumulates gradients into every reachable `Tensor` that has
`requires_grad=True`.  Everything runs in 64-bit; there is no
broadcasting beyond numpy's own rules, and gradients of broadcast
operands are reduced back to the operand's shape.

`finite_diff_check` is the verification harness: central differences of
an arbitrary scalar-valued closure against the gradients produced by
`backward`.
"""

from __future__ import annotations

import itertools
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf as _erf, expit as _expit

from .errors import (
    ConfigError,
    ContractError,
    DomainError,
    EvaluationError,
    PoisonedGradientError,
)

_grad_enabled = True
_id_counter = itertools.count()


@contextmanager
def no_grad():
    """Disable graph recording inside the block (inference / FD evals)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    # collapse prepended axes
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    # collapse axes that were broadcast from size 1
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "name", "_id")

    def __init__(self, data, requires_grad=False, parents=(), backward=None, op="leaf", name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward
        self.op = op
        self.name = name
        self._id = next(_id_counter)

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def as_tensor(x) -> "Tensor":
        return x if isinstance(x, Tensor) else Tensor(x)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    @property
    def label(self) -> str:
        return self.name if self.name is not None else f"{self.op}#{self._id}"

    def __repr__(self):
        return f"Tensor({self.label}, shape={self.data.shape})"

    def _accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # -- arithmetic ------------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, c):
        return pow_const(self, c)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 or isinstance(shape[0], int) else shape[0])

    def transpose(self, axes):
        return transpose(self, axes)

    def backward(self):
        backward(self)


def _make(data, parents, bwd, op):
    """Create a result node; skip recording when no parent needs gradients."""
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, parents=parents, backward=bwd, op=op)
    return Tensor(data)


# -- primitive operations -----------------------------------------------------


def add(a, b):
    a, b = Tensor.as_tensor(a), Tensor.as_tensor(b)
    out_data = a.data + b.data

    def bwd(g):
        return (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))

    return _make(out_data, (a, b), bwd, "add")


def sub(a, b):
    a, b = Tensor.as_tensor(a), Tensor.as_tensor(b)
    out_data = a.data - b.data

    def bwd(g):
        return (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape))

    return _make(out_data, (a, b), bwd, "sub")


def mul(a, b):
    a, b = Tensor.as_tensor(a), Tensor.as_tensor(b)
    out_data = a.data * b.data

    def bwd(g):
        return (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape))

    return _make(out_data, (a, b), bwd, "mul")


def div(a, b):
    a, b = Tensor.as_tensor(a), Tensor.as_tensor(b)
    out_data = a.data / b.data

    def bwd(g):
        return (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * out_data / b.data, b.shape),
        )

    return _make(out_data, (a, b), bwd, "div")


def neg(a):
    a = Tensor.as_tensor(a)

    def bwd(g):
        return (-g,)

    return _make(-a.data, (a,), bwd, "neg")


def pow_const(a, c):
    a = Tensor.as_tensor(a)
    c = float(c)
    out_data = a.data**c

    def bwd(g):
        return (g * c * a.data ** (c - 1.0),)

    return _make(out_data, (a,), bwd, "pow")


def matmul(a, b):
    a, b = Tensor.as_tensor(a), Tensor.as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ContractError("matmul expects operands with ndim >= 2")
    out_data = a.data @ b.data

    def bwd(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return (_unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape))

    return _make(out_data, (a, b), bwd, "matmul")


def exp(a):
    a = Tensor.as_tensor(a)
    out_data = np.exp(a.data)

    def bwd(g):
        return (g * out_data,)

    return _make(out_data, (a,), bwd, "exp")


def log(a):
    a = Tensor.as_tensor(a)
    out_data = np.log(a.data)

    def bwd(g):
        return (g / a.data,)

    return _make(out_data, (a,), bwd, "log")


def sqrt(a):
    a = Tensor.as_tensor(a)
    out_data = np.sqrt(a.data)

    def bwd(g):
        return (g * 0.5 / out_data,)

    return _make(out_data, (a,), bwd, "sqrt")


def tanh(a):
    a = Tensor.as_tensor(a)
    out_data = np.tanh(a.data)

    def bwd(g):
        return (g * (1.0 - out_data * out_data),)

    return _make(out_data, (a,), bwd, "tanh")


def sigmoid(a):
    a = Tensor.as_tensor(a)
    out_data = _expit(a.data)

    def bwd(g):
        return (g * out_data * (1.0 - out_data),)

    return _make(out_data, (a,), bwd, "sigmoid")


_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(a):
    """Gaussian error linear unit, exact (erf) form."""
    a = Tensor.as_tensor(a)
    cdf = 0.5 * (1.0 + _erf(a.data * _INV_SQRT2))
    out_data = a.data * cdf

    def bwd(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * a.data * a.data)
        return (g * (cdf + a.data * pdf),)

    return _make(out_data, (a,), bwd, "gelu")


def softplus(x, beta):
    """Scaled softplus: beta * ln(1 + exp(x / beta)), overflow-safe.

    For x/beta above ~30 the naive form overflows; logaddexp evaluates
    the equivalent x + beta*log1p(exp(-x/beta)) branch instead.  `beta`
    may be a learned Tensor and must be strictly positive.
    """
    x, beta = Tensor.as_tensor(x), Tensor.as_tensor(beta)
    if np.any(beta.data <= 0.0):
        raise DomainError("softplus beta must be > 0")
    r = x.data / beta.data
    core = np.logaddexp(0.0, r)
    # keep the output strictly positive even where exp(r) underflows
    out_data = np.maximum(beta.data * core, np.finfo(np.float64).tiny)

    def bwd(g):
        sig = _expit(r)
        gx = _unbroadcast(g * sig, x.shape)
        gb = _unbroadcast(g * (core - r * sig), beta.shape)
        return (gx, gb)

    return _make(out_data, (x, beta), bwd, "softplus")


def softmax(a, axis=-1):
    """Shift-invariant softmax along `axis` (max subtraction)."""
    a = Tensor.as_tensor(a)
    if a.data.size == 0:
        raise DomainError("softmax of an empty vector is undefined")
    shifted = a.data - np.max(a.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        return (out_data * (g - dot),)

    return _make(out_data, (a,), bwd, "softmax")


def log_softmax(a, axis=-1):
    a = Tensor.as_tensor(a)
    if a.data.size == 0:
        raise DomainError("log_softmax of an empty vector is undefined")
    shifted = a.data - np.max(a.data, axis=axis, keepdims=True)
    lse = np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))
    out_data = shifted - lse

    def bwd(g):
        s = np.exp(out_data)
        return (g - s * g.sum(axis=axis, keepdims=True),)

    return _make(out_data, (a,), bwd, "log_softmax")


def sum_(a, axis=None, keepdims=False):
    a = Tensor.as_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out_data, (a,), bwd, "sum")


def mean(a, axis=None, keepdims=False):
    a = Tensor.as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / float(n))


def reshape(a, shape):
    a = Tensor.as_tensor(a)
    out_data = a.data.reshape(shape)

    def bwd(g):
        return (g.reshape(a.shape),)

    return _make(out_data, (a,), bwd, "reshape")


def transpose(a, axes):
    a = Tensor.as_tensor(a)
    out_data = np.transpose(a.data, axes)
    inv = np.argsort(axes)

    def bwd(g):
        return (np.transpose(g, inv),)

    return _make(out_data, (a,), bwd, "transpose")


def take(a, idx):
    """Numpy-style indexing; integer-array indexing backpropagates via scatter-add."""
    a = Tensor.as_tensor(a)
    out_data = a.data[idx]

    def bwd(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        return (ga,)

    return _make(out_data, (a,), bwd, "take")


def concat(tensors, axis=0):
    tensors = [Tensor.as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        grads = []
        for i in range(len(tensors)):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offsets[i], offsets[i + 1])
            grads.append(g[tuple(sl)])
        return tuple(grads)

    return _make(out_data, tuple(tensors), bwd, "concat")


def clamp(a, lo, hi):
    """Clip values to [lo, hi]; gradient is zero in the clipped region."""
    a = Tensor.as_tensor(a)
    out_data = np.clip(a.data, lo, hi)
    inside = (a.data > lo) & (a.data < hi)

    def bwd(g):
        return (g * inside,)

    return _make(out_data, (a,), bwd, "clamp")


# -- backward pass ------------------------------------------------------------


def backward(loss: Tensor):
    """Backpropagate from a scalar `loss`.

    Populates `.grad` on every reachable tensor with requires_grad.
    Tensors not reachable from the loss keep grad None (read as zero).
    """
    if loss.data.ndim != 0 and loss.data.size != 1:
        raise ContractError(f"backward expects a scalar loss, got shape {loss.data.shape}")
    if np.isnan(loss.data):
        raise PoisonedGradientError(f"NaN at node {loss.label}")

    topo: list[Tensor] = []
    visited: set[int] = set()
    stack = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited and p.requires_grad:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node.grad is None:
            continue
        if np.isnan(node.grad).any():
            raise PoisonedGradientError(f"NaN gradient at node {node.label}")
        if node._backward is None:
            continue
        grads = node._backward(node.grad)
        for parent, g in zip(node._parents, grads):
            if parent.requires_grad and g is not None:
                parent._accumulate(g)


def zero_grads(params) -> None:
    for p in _iter_params(params):
        p.grad = None


def grad_of(p: Tensor) -> np.ndarray:
    """Gradient of a parameter after backward(); zeros if unreachable."""
    return p.grad if p.grad is not None else np.zeros_like(p.data)


def _iter_params(params):
    if isinstance(params, dict):
        return params.values()
    return params


# -- finite-difference verification --------------------------------------------


@dataclass
class FiniteDiffReport:
    per_param: dict = field(default_factory=dict)
    max_rel_err: float = 0.0

    def __str__(self):
        lines = [f"{k}: {v:.3e}" for k, v in self.per_param.items()]
        lines.append(f"max: {self.max_rel_err:.3e}")
        return "\n".join(lines)


def _rel_err(a: float, b: float) -> float:
    return abs(a - b) / max(1.0, abs(a), abs(b))


def finite_diff_check(fn, params, h=1e-5) -> FiniteDiffReport:
    """Compare backward() gradients of `fn()` against central differences.

    `fn` must be a deterministic scalar closure over `params` (freeze any
    Monte-Carlo draws before calling).  Relative error per coordinate is
    |a - b| / max(1, |a|, |b|).
    """
    if isinstance(params, dict):
        named = list(params.items())
    else:
        named = [(p.name or f"param{i}", p) for i, p in enumerate(params)]

    zero_grads([p for _, p in named])
    out = fn()
    if not np.isfinite(out.data):
        raise EvaluationError("objective is non-finite at the evaluation point")
    backward(out)
    analytic = {name: grad_of(p).copy() for name, p in named}

    report = FiniteDiffReport()
    for name, p in named:
        flat = p.data.reshape(-1)
        worst = 0.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            with no_grad():
                f_plus = fn().item()
            flat[i] = orig - h
            with no_grad():
                f_minus = fn().item()
            flat[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise EvaluationError(f"non-finite objective while perturbing {name}[{i}]")
            fd = (f_plus - f_minus) / (2.0 * h)
            worst = max(worst, _rel_err(analytic[name].reshape(-1)[i], fd))
        report.per_param[name] = worst
        report.max_rel_err = max(report.max_rel_err, worst)
    return report


# -- parameter construction ----------------------------------------------------


def parameter(data, name: str) -> Tensor:
    t = Tensor(np.array(data, dtype=np.float64), requires_grad=True)
    t.name = name
    return t


def scalar_softplus(x: float, beta: float = 1.0) -> float:
    """Plain-number softplus used outside the graph."""
    if beta <= 0:
        raise DomainError("softplus beta must be > 0")
    return float(max(beta * np.logaddexp(0.0, x / beta), np.finfo(np.float64).tiny))
