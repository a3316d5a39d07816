"""Dense float64 tensors with reverse-mode differentiation on a closure tape.

numpy supplies the kernels; this module supplies the graph. Every op checks
its output, so a NaN or Inf raises ``NonFiniteError`` at the op that produced
it instead of surfacing later as a corrupted loss. All data and all gradient
accumulation are 64-bit.
"""

from __future__ import annotations

import contextlib
import threading
import warnings
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "NonFiniteError",
    "GraphError",
    "no_grad",
    "constant",
    "stop_gradient",
    "gradients",
    "finite_diff_check",
    "add",
    "sub",
    "mul",
    "div",
    "scale",
    "neg",
    "exp",
    "log",
    "tanh",
    "gelu",
    "power",
    "clip_min",
    "matmul",
    "softmax",
    "logsumexp",
    "standardize",
    "layer_norm",
    "l2_normalize",
    "tsum",
    "tmean",
    "concat",
    "reshape",
    "transpose",
]


class NonFiniteError(FloatingPointError):
    """An op produced NaN or Inf."""


class GraphError(ValueError):
    """Invalid differentiation request (non-scalar loss, detached leaf, ...)."""


_STATE = threading.local()


def _grad_enabled() -> bool:
    return getattr(_STATE, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    """Run forward ops without taping; every output is a constant."""
    prev = _grad_enabled()
    _STATE.grad_enabled = False
    try:
        yield
    finally:
        _STATE.grad_enabled = prev


def _ensure_finite(arr: np.ndarray, op: str) -> None:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite values produced by '{op}'")


class Tensor:
    """A dense float64 array node.

    Leaf tensors are built with the constructor; ops return derived tensors
    that remember their parents and a backward closure. Treat ``data`` as
    immutable once the tensor participates in a graph (the optimizer and the
    finite-difference checker are the two sanctioned writers, and both only
    touch leaves between graph builds).
    """

    __slots__ = ("data", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        # asarray with order="C" keeps 0-d shapes (ascontiguousarray promotes them)
        arr = np.asarray(data, dtype=np.float64, order="C")
        _ensure_finite(arr, "tensor")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], tuple] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise GraphError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

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

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, key):
        return getitem(self, key)


def constant(data) -> Tensor:
    """A tensor that never takes gradients."""
    if isinstance(data, Tensor):
        return data if not data.requires_grad else Tensor(data.data)
    return Tensor(data)


def stop_gradient(x: Tensor) -> Tensor:
    """Detach ``x`` from the graph; the result is a constant sharing data."""
    out = Tensor.__new__(Tensor)
    out.data = x.data
    out.requires_grad = False
    out._parents = ()
    out._backward = None
    return out


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _from_op(data: np.ndarray, parents: tuple[Tensor, ...], backward, op: str) -> Tensor:
    data = np.asarray(data, dtype=np.float64, order="C")
    _ensure_finite(data, op)
    out = Tensor.__new__(Tensor)
    out.data = data
    if _grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise ops
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _from_op(out, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = a.data - b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _from_op(out, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = a.data * b.data
    ad, bd = a.data, b.data

    def backward(g):
        return _unbroadcast(g * bd, a.shape), _unbroadcast(g * ad, b.shape)

    return _from_op(out, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    with np.errstate(all="ignore"):
        out = a.data / b.data
    ad, bd = a.data, b.data

    def backward(g):
        return _unbroadcast(g / bd, a.shape), _unbroadcast(-g * ad / (bd * bd), b.shape)

    return _from_op(out, (a, b), backward, "div")


def scale(x, s: float) -> Tensor:
    """Multiply by a python scalar."""
    x = _wrap(x)
    s = float(s)
    out = x.data * s

    def backward(g):
        return (g * s,)

    return _from_op(out, (x,), backward, "scale")


def neg(x) -> Tensor:
    return scale(x, -1.0)


def exp(x) -> Tensor:
    x = _wrap(x)
    with np.errstate(all="ignore"):
        out = np.exp(x.data)

    def backward(g):
        return (g * out,)

    return _from_op(out, (x,), backward, "exp")


def log(x) -> Tensor:
    x = _wrap(x)
    with np.errstate(all="ignore"):
        out = np.log(x.data)
    xd = x.data

    def backward(g):
        return (g / xd,)

    return _from_op(out, (x,), backward, "log")


def tanh(x) -> Tensor:
    x = _wrap(x)
    out = np.tanh(x.data)

    def backward(g):
        return (g * (1.0 - out * out),)

    return _from_op(out, (x,), backward, "tanh")


_GELU_C = np.sqrt(2.0 / np.pi)
_GELU_A = 0.044715


def gelu(x) -> Tensor:
    """tanh-form GELU; self-contained and smooth, which the checker likes."""
    x = _wrap(x)
    xd = x.data
    inner = _GELU_C * (xd + _GELU_A * xd**3)
    th = np.tanh(inner)
    out = 0.5 * xd * (1.0 + th)

    def backward(g):
        sech2 = 1.0 - th * th
        d = 0.5 * (1.0 + th) + 0.5 * xd * sech2 * _GELU_C * (1.0 + 3.0 * _GELU_A * xd * xd)
        return (g * d,)

    return _from_op(out, (x,), backward, "gelu")


def power(x, p: float) -> Tensor:
    x = _wrap(x)
    p = float(p)
    with np.errstate(all="ignore"):
        out = x.data**p
    xd = x.data

    def backward(g):
        with np.errstate(all="ignore"):
            return (g * p * xd ** (p - 1.0),)

    return _from_op(out, (x,), backward, "power")


def clip_min(x, floor: float) -> Tensor:
    """max(x, floor) elementwise; gradient is zero on the clipped side."""
    x = _wrap(x)
    floor = float(floor)
    mask = x.data > floor
    out = np.maximum(x.data, floor)

    def backward(g):
        return (g * mask,)

    return _from_op(out, (x,), backward, "clip_min")


# ---------------------------------------------------------------------------
# linear algebra and normalizations
# ---------------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    """np.matmul semantics for stacks of matrices (ndim >= 2 on both sides)."""
    a, b = _wrap(a), _wrap(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul needs ndim >= 2, got {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)
    ad, bd = a.data, b.data

    def backward(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(bd, -1, -2)), a.shape)
        gb = _unbroadcast(np.matmul(np.swapaxes(ad, -1, -2), g), b.shape)
        return ga, gb

    return _from_op(out, (a, b), backward, "matmul")


def softmax(x, axis: int = -1) -> Tensor:
    x = _wrap(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - inner),)

    return _from_op(out, (x,), backward, "softmax")


def logsumexp(x, axis: int = -1, keepdims: bool = False) -> Tensor:
    x = _wrap(x)
    m = x.data.max(axis=axis, keepdims=True)
    e = np.exp(x.data - m)
    s = e.sum(axis=axis, keepdims=True)
    out = np.log(s) + m
    if not keepdims:
        out = np.squeeze(out, axis=axis)
    soft = e / s

    def backward(g):
        gk = np.expand_dims(g, axis) if not keepdims else g
        return (soft * gk,)

    return _from_op(out, (x,), backward, "logsumexp")


def standardize(x, axis: int = -1, eps: float = 1e-5) -> Tensor:
    """(x - mean) / sqrt(var + eps) along ``axis``; the layer-norm core."""
    x = _wrap(x)
    mu = x.data.mean(axis=axis, keepdims=True)
    var = ((x.data - mu) ** 2).mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    out = (x.data - mu) * inv

    def backward(g):
        gm = g.mean(axis=axis, keepdims=True)
        gy = (g * out).mean(axis=axis, keepdims=True)
        return ((g - gm - out * gy) * inv,)

    return _from_op(out, (x,), backward, "standardize")


def layer_norm(x, gain: Tensor | None = None, bias: Tensor | None = None, eps: float = 1e-5) -> Tensor:
    out = standardize(x, axis=-1, eps=eps)
    if gain is not None:
        out = mul(out, gain)
    if bias is not None:
        out = add(out, bias)
    return out


def l2_normalize(x, axis: int = -1) -> Tensor:
    """Scale rows to unit L2 norm; zero rows pass through as zeros with a warning."""
    x = _wrap(x)
    norm = np.sqrt((x.data**2).sum(axis=axis, keepdims=True))
    zero = norm == 0.0
    if zero.any():
        warnings.warn("l2_normalize: zero-norm input left as zeros", RuntimeWarning, stacklevel=2)
    safe = np.where(zero, 1.0, norm)
    out = x.data / safe

    def backward(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        gx = (g - out * inner) / safe
        return (np.where(zero, 0.0, gx),)

    return _from_op(out, (x,), backward, "l2_normalize")


# ---------------------------------------------------------------------------
# reductions and shape ops
# ---------------------------------------------------------------------------


def _reduce_backward_shape(shape, axis, keepdims):
    if axis is None:
        return (1,) * len(shape)
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    axes = tuple(a % len(shape) for a in axes)
    if keepdims:
        return None  # gradient already has kept dims
    return tuple(1 if i in axes else d for i, d in enumerate(shape))


def tsum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _wrap(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)
    shape = x.shape
    bshape = _reduce_backward_shape(shape, axis, keepdims)

    def backward(g):
        gg = g if bshape is None else g.reshape(bshape)
        return (np.broadcast_to(gg, shape).copy(),)

    return _from_op(out, (x,), backward, "sum")


def tmean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _wrap(x)
    out = x.data.mean(axis=axis, keepdims=keepdims)
    count = x.data.size if axis is None else x.data.size // out.size if out.size else 1
    shape = x.shape
    bshape = _reduce_backward_shape(shape, axis, keepdims)

    def backward(g):
        gg = g if bshape is None else g.reshape(bshape)
        return (np.broadcast_to(gg, shape).copy() / count,)

    return _from_op(out, (x,), backward, "mean")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(_wrap(t) for t in tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _from_op(out, tensors, backward, "concat")


def reshape(x, shape) -> Tensor:
    x = _wrap(x)
    shape = tuple(shape)
    out = x.data.reshape(shape)
    orig = x.shape

    def backward(g):
        return (g.reshape(orig),)

    return _from_op(out, (x,), backward, "reshape")


def transpose(x, axes) -> Tensor:
    x = _wrap(x)
    axes = tuple(axes)
    out = np.transpose(x.data, axes)
    inv = np.argsort(axes)

    def backward(g):
        return (np.transpose(g, inv),)

    return _from_op(out, (x,), backward, "transpose")


def getitem(x, key) -> Tensor:
    """Basic indexing (ints, slices, tuples thereof); no fancy index arrays."""
    x = _wrap(x)
    out = x.data[key]
    shape = x.shape

    def backward(g):
        gx = np.zeros(shape, dtype=np.float64)
        gx[key] = g
        return (gx,)

    return _from_op(np.array(out, copy=True), (x,), backward, "getitem")


# ---------------------------------------------------------------------------
# differentiation
# ---------------------------------------------------------------------------


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def gradients(loss: Tensor, leaves: Sequence[Tensor]) -> list[np.ndarray]:
    """Reverse-mode gradients of a scalar loss with respect to leaf tensors.

    Each node is visited exactly once; fan-out contributions are summed.
    Leaves that the loss never touches get exact zero gradients. Requesting a
    leaf that was created with ``requires_grad=False`` is an error.
    """
    if loss.data.size != 1:
        raise GraphError(f"loss must be scalar, got shape {loss.shape}")
    for leaf in leaves:
        if not leaf.requires_grad:
            raise GraphError("gradient requested for a detached leaf")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_toposort(loss)):
        g = grads.pop(id(node), None)
        if g is None or node._backward is None:
            if node._backward is None and g is not None:
                grads[id(node)] = g  # leaf: keep for lookup below
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            acc = grads.get(id(parent))
            grads[id(parent)] = pg if acc is None else acc + pg
        _ensure_finite_grads(parent_grads)
    return [grads.get(id(leaf), np.zeros_like(leaf.data)) for leaf in leaves]


def _ensure_finite_grads(parent_grads) -> None:
    for pg in parent_grads:
        if pg is not None and not np.isfinite(pg).all():
            raise NonFiniteError("non-finite gradient during backward")


def finite_diff_check(f, params: Sequence[Tensor], step: float = 1e-5) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    ``f`` maps the given parameter tensors to a scalar Tensor and must rebuild
    its graph on every call. The relative error per coordinate is
    ``|analytic - fd| / (|analytic| + 1e-8)``. Probing mutates ``params`` data
    in place and restores it before returning.
    """
    if not (1e-6 <= step <= 1e-4):
        raise ValueError(f"step {step} outside [1e-6, 1e-4]")
    loss = f(params)
    analytic = gradients(loss, list(params))
    worst = 0.0
    for p, g in zip(params, analytic):
        flat = p.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            with no_grad():
                fp = f(params).item()
            flat[i] = orig - step
            with no_grad():
                fm = f(params).item()
            flat[i] = orig
            fd = (fp - fm) / (2.0 * step)
            if not np.isfinite(fd):
                raise NonFiniteError("non-finite finite-difference evaluation")
            err = abs(gflat[i] - fd) / (abs(gflat[i]) + 1e-8)
            worst = max(worst, err)
    return worst
