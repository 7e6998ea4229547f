"""Minimal reverse-mode automatic differentiation over dense f64 arrays.

The op set is deliberately small: exactly what the encoder, the hyperbolic
aggregation and the two geometric losses need. Dense tensors only, no views
sharing storage across tape nodes, no higher-order derivatives.

A ``Tape`` is single-threaded; distinct tapes may run concurrently (the
active tape is thread-local). Tensors that do not require grad are
immutable from the tape's point of view and can be shared freely.
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf as _erf

from .errors import NumericError, UsageError

_SQRT_2 = np.sqrt(2.0)
_SQRT_2_PI = np.sqrt(2.0 / np.pi)

_tls = threading.local()


def _active_tape():
    return getattr(_tls, "tape", None)


class Tape:
    """Ordered record of differentiable ops, replayed in reverse by backward().

    Creation order is topological by construction, so the backward pass is a
    single reversed sweep visiting each node exactly once.
    """

    def __init__(self):
        self._nodes: list[Callable[[], None]] = []

    def __enter__(self) -> "Tape":
        if _active_tape() is not None:
            raise UsageError("nested tapes are not supported")
        _tls.tape = self
        return self

    def __exit__(self, *exc):
        _tls.tape = None
        return False

    def __len__(self) -> int:
        return len(self._nodes)

    def _record(self, node: Callable[[], None]) -> None:
        self._nodes.append(node)

    def backward(self, loss: "Tensor") -> None:
        """Seed d(loss)/d(loss) = 1 and sweep the tape in reverse."""
        if loss.data.size != 1:
            raise UsageError("backward() expects a scalar loss")
        loss.grad = np.ones_like(loss.data)
        for node in reversed(self._nodes):
            node()


class Tensor:
    """Dense f64 array plus the bookkeeping needed for reverse-mode AD."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NumericError("Tensor initialized with non-finite values")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, _as_tensor(other))

    def __rtruediv__(self, other):
        return div(_as_tensor(other), self)

    def __neg__(self):
        return mul(self, _as_tensor(-1.0))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x) -> Tensor:
    return Tensor(x)


def _check_finite(out: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(out)):
        raise NumericError(f"non-finite result in op '{op}'")


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad.reshape(shape)


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _make_op(name: str, inputs: Sequence[Tensor], out_data: np.ndarray,
             backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]) -> Tensor:
    """Build the output tensor and record the backward rule if grad is needed."""
    _check_finite(out_data, name)
    tape = _active_tape()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.requires_grad = needs
    out.grad = None
    if needs:
        ins = tuple(inputs)

        def node():
            if out.grad is None:
                return
            grads = backward(out.grad)
            for t, g in zip(ins, grads):
                if g is not None and t.requires_grad:
                    _accum(t, g)

        tape._record(node)
    return out


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data
    return _make_op("add", (a, b), out, lambda g: (
        _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data
    return _make_op("sub", (a, b), out, lambda g: (
        _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)))


_corrupt_backward = False


def set_corrupt_backward(flag: bool) -> None:
    """Test-only negative control: skews the mul backward rule so that
    gradient checks must fail. Never enable outside diagnostics."""
    global _corrupt_backward
    _corrupt_backward = bool(flag)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data
    skew = 1.01 if _corrupt_backward else 1.0
    return _make_op("mul", (a, b), out, lambda g: (
        _unbroadcast(g * b.data * skew, a.data.shape),
        _unbroadcast(g * a.data * skew, b.data.shape)))


def div(a: Tensor, b: Tensor) -> Tensor:
    # _make_op raises NumericError on non-finite results, so silence numpy's
    # own divide-by-zero warning here
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data
    return _make_op("div", (a, b), out, lambda g: (
        _unbroadcast(g / b.data, a.data.shape),
        _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)))


def square(a: Tensor) -> Tensor:
    out = a.data * a.data
    return _make_op("square", (a,), out, lambda g: (2.0 * a.data * g,))


# ---------------------------------------------------------------------------
# structural ops
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise UsageError("matmul expects tensors with ndim >= 2")
    out = np.matmul(a.data, b.data)

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.data.shape), _unbroadcast(gb, b.data.shape)

    return _make_op("matmul", (a, b), out, backward)


def transpose(a: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    out = np.transpose(a.data, axes).copy()
    if axes is None:
        inv = None
    else:
        inv = np.argsort(axes)
    return _make_op("transpose", (a,), out,
                    lambda g: (np.transpose(g, inv).copy(),))


def swapaxes(a: Tensor, ax1: int, ax2: int) -> Tensor:
    out = np.swapaxes(a.data, ax1, ax2).copy()
    return _make_op("swapaxes", (a,), out,
                    lambda g: (np.swapaxes(g, ax1, ax2).copy(),))


def reshape(a: Tensor, shape) -> Tensor:
    out = a.data.reshape(shape).copy()
    return _make_op("reshape", (a,), out,
                    lambda g: (g.reshape(a.data.shape),))


def take(a: Tensor, idx) -> Tensor:
    """Basic indexing / gather; backward scatters into a zero tensor."""
    out = np.array(a.data[idx], dtype=np.float64)

    def backward(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        return (ga,)

    return _make_op("take", (a,), out, backward)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return _make_op("concat", tuple(tensors), out, backward)


def broadcast_to(a: Tensor, shape) -> Tensor:
    out = np.broadcast_to(a.data, shape).copy()
    return _make_op("broadcast", (a,), out,
                    lambda g: (_unbroadcast(g, a.data.shape),))


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.data.shape).copy(),)

    return _make_op("sum", (a,), np.asarray(out), backward)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else a.data.shape[axis]
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / n)


# ---------------------------------------------------------------------------
# elementwise nonlinearities
# ---------------------------------------------------------------------------

def _elementwise(name, a, fwd, dfwd):
    out = fwd(a.data)
    return _make_op(name, (a,), out, lambda g: (g * dfwd(a.data, out),))


def exp(a: Tensor) -> Tensor:
    return _elementwise("exp", a, np.exp, lambda x, y: y)


def log(a: Tensor) -> Tensor:
    return _elementwise("log", a, np.log, lambda x, y: 1.0 / x)


def sqrt(a: Tensor) -> Tensor:
    # denominator floored so a zero incoming gradient at x=0 stays 0, not NaN
    return _elementwise("sqrt", a, np.sqrt, lambda x, y: 0.5 / np.maximum(y, 1e-150))


def cosh(a: Tensor) -> Tensor:
    return _elementwise("cosh", a, np.cosh, lambda x, y: np.sinh(x))


def sinh(a: Tensor) -> Tensor:
    return _elementwise("sinh", a, np.sinh, lambda x, y: np.cosh(x))


def tanh(a: Tensor) -> Tensor:
    return _elementwise("tanh", a, np.tanh, lambda x, y: 1.0 - y * y)


def arccosh(a: Tensor) -> Tensor:
    # derivative 1/sqrt(x^2-1); exactly 0 at the clamped edge x=1 so that
    # d(u,u)=0 behaves as a constant minimum instead of producing inf.
    def dfwd(x, y):
        d = x * x - 1.0
        return np.where(d > 0.0, 1.0 / np.sqrt(np.maximum(d, 1e-300)), 0.0)

    return _elementwise("arccosh", a, np.arccosh, dfwd)


def arcsin(a: Tensor) -> Tensor:
    def dfwd(x, y):
        d = 1.0 - x * x
        return np.where(d > 0.0, 1.0 / np.sqrt(np.maximum(d, 1e-300)), 0.0)

    return _elementwise("arcsin", a, np.arcsin, dfwd)


def arccos(a: Tensor) -> Tensor:
    def dfwd(x, y):
        d = 1.0 - x * x
        return np.where(d > 0.0, -1.0 / np.sqrt(np.maximum(d, 1e-300)), 0.0)

    return _elementwise("arccos", a, np.arccos, dfwd)


def clamp(a: Tensor, lo: float | None = None, hi: float | None = None) -> Tensor:
    """Clip to [lo, hi]; gradient is zero outside the open active range.

    The boundary subgradient is taken as 0 (left value), so a value sitting
    exactly on a clamp edge passes no gradient.
    """
    out = np.clip(a.data, lo, hi)
    inside = np.ones_like(a.data, dtype=bool)
    if lo is not None:
        inside &= a.data > lo
    if hi is not None:
        inside &= a.data < hi
    return _make_op("clamp", (a,), out, lambda g: (np.where(inside, g, 0.0),))


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0.0)
    return _make_op("relu", (a,), out, lambda g: (np.where(a.data > 0.0, g, 0.0),))


def gelu(a: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    x = a.data
    cdf = 0.5 * (1.0 + _erf(x / _SQRT_2))
    out = x * cdf

    def backward(g):
        pdf = np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
        return (g * (cdf + x * pdf),)

    return _make_op("gelu", (a,), out, backward)


def custom_elementwise(name: str, a: Tensor, fwd: Callable, dfwd: Callable) -> Tensor:
    """Extension point for smooth scalar primitives with analytic derivatives.

    ``fwd`` and ``dfwd`` each take the raw input array; ``dfwd`` returns
    d(out)/d(in) elementwise.
    """
    out = fwd(a.data)
    return _make_op(name, (a,), out, lambda g: (g * dfwd(a.data),))


# ---------------------------------------------------------------------------
# composite ops
# ---------------------------------------------------------------------------

def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - dot),)

    return _make_op("softmax", (a,), y, backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    mu = tmean(x, axis=-1, keepdims=True)
    centered = x - mu
    var = tmean(square(centered), axis=-1, keepdims=True)
    xhat = centered / sqrt(var + eps)
    return xhat * gain + bias


def euclidean_norm(a: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    """sqrt(sum(x^2)); note the gradient is singular at exactly zero input."""
    return sqrt(tsum(square(a), axis=axis, keepdims=keepdims) + 0.0)


def logsumexp(a: Tensor, axis: int = -1, keepdims: bool = False,
              mask: np.ndarray | None = None) -> Tensor:
    """Stabilized log-sum-exp; optional 0/1 mask restricts the sum."""
    m = a.data.max(axis=axis, keepdims=True)
    shifted = exp(a - constant(m))
    if mask is not None:
        shifted = shifted * constant(mask)
    s = tsum(shifted, axis=axis, keepdims=True)
    out = log(s) + constant(m)
    if not keepdims:
        out = reshape(out, np.squeeze(out.data, axis=axis).shape)
    return out


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor],
               h: float = 1e-5, max_per_param: int | None = None,
               rng: np.random.Generator | None = None) -> float:
    """Compare tape gradients of a scalar-valued ``f`` to central differences.

    Returns max over the checked coordinates of |a - b| / max(1e-8, |a| + |b|).
    By default every coordinate of every parameter is perturbed;
    ``max_per_param`` caps the number of coordinates sampled per parameter
    (without replacement) to keep large checks tractable.
    """
    with Tape() as tape:
        out = f()
        if out.data.size != 1:
            raise UsageError("grad_check requires a scalar-valued function")
        for p in params:
            p.zero_grad()
        tape.backward(out)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy()
                for p in params]

    if rng is None:
        rng = np.random.default_rng(0)
    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.data.reshape(-1)
        if max_per_param is not None and flat.size > max_per_param:
            indices = rng.choice(flat.size, size=max_per_param, replace=False)
        else:
            indices = range(flat.size)
        for i in indices:
            orig = flat[i]
            flat[i] = orig + h
            fp = float(f().data)
            flat[i] = orig - h
            fm = float(f().data)
            flat[i] = orig
            num = (fp - fm) / (2.0 * h)
            ana = a.reshape(-1)[i]
            err = abs(ana - num) / max(1e-8, abs(ana) + abs(num))
            worst = max(worst, err)
    return worst
