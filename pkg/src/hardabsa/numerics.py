"""
Dense float64 tensors with reverse-mode automatic differentiation.

The graph is dynamic: every op applied to a tensor that requires grad records
its parents and a backward closure on the output.  ``backward`` walks the
reachable nodes once, in reverse creation order, which is a valid reverse
topological order because an op can only consume tensors created before it.

Only the ops needed by the encoder, heads, and losses are provided.

GELU uses the tanh approximation::

    gelu(x) = 0.5 * x * (1 + tanh(sqrt(2 / pi) * (x + 0.044715 * x**3)))
"""

from __future__ import annotations

import contextlib
import itertools
import math
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import ContractError, DimensionError

__all__ = [
    "Tensor",
    "tensor",
    "no_grad",
    "is_grad_enabled",
    "backward",
    "zero_grad",
    "topological_order",
    "add",
    "sub",
    "mul",
    "neg",
    "scale",
    "matmul",
    "transpose",
    "reshape",
    "take",
    "sum_over_axis",
    "mean_over_axis",
    "tanh",
    "gelu",
    "exp",
    "log",
    "softmax",
    "log_softmax",
    "layer_norm",
    "cross_entropy",
    "masked_fill",
    "dropout",
    "elementwise",
]

DTYPE = np.float64
GELU_C = math.sqrt(2.0 / math.pi)
GELU_A = 0.044715

_ids = itertools.count()
_grad_enabled = True

# Set to False to skip the per-op NaN/Inf guard (it costs a pass over every output).
CHECK_FINITE = True


@contextlib.contextmanager
def no_grad():
    """Build no graph inside the block; outputs are plain constants."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """A float64 array that can take part in a differentiation graph.

    Leaves created with ``requires_grad=True`` accumulate ``grad`` across
    ``backward`` calls until ``zero_grad`` resets them.
    """

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward", "_id")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=DTYPE)
        if CHECK_FINITE and not np.isfinite(arr).all():
            raise FloatingPointError("tensor data must be finite")
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self.op = "leaf"
        self._parents: tuple = ()
        self._backward: Optional[Callable] = None
        self._id = next(_ids)

    # --- introspection -------------------------------------------------
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
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.grad = None
        out.requires_grad = False
        out.op = "leaf"
        out._parents = ()
        out._backward = None
        out._id = next(_ids)
        return out

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # --- operator sugar ------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division is only defined by a constant")
        return scale(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return sum_over_axis(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean_over_axis(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return data if isinstance(data, Tensor) else Tensor(data, requires_grad)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    if CHECK_FINITE and not np.isfinite(data).all():
        raise FloatingPointError(f"non-finite output from {op}")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    out._id = next(_ids)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# --- graph traversal ------------------------------------------------------


def topological_order(loss: Tensor) -> list[Tensor]:
    """Nodes reachable from ``loss`` that need gradients, consumers first."""
    seen = {}
    stack = [loss]
    while stack:
        node = stack.pop()
        if node._id in seen or not node.requires_grad:
            continue
        seen[node._id] = node
        stack.extend(node._parents)
    return [seen[k] for k in sorted(seen, reverse=True)]


def backward(loss: Tensor, grad: Optional[np.ndarray] = None) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    seed = np.ones_like(loss.data) if grad is None else np.asarray(grad, dtype=DTYPE).reshape(loss.shape)
    grads = {loss._id: seed}
    for node in topological_order(loss):
        g = grads.pop(node._id, None)
        if g is None:
            continue
        if node.is_leaf:
            if CHECK_FINITE and not np.isfinite(g).all():
                raise FloatingPointError("non-finite gradient")
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            if parent._id in grads:
                grads[parent._id] = grads[parent._id] + pg
            else:
                grads[parent._id] = pg


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


# --- elementwise -----------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b, "add")
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b, "mul")
    ad, bd = a.data, b.data

    def bw(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _make(ad * bd, (a, b), bw, "mul")


def neg(x: Tensor) -> Tensor:
    return _make(-x.data, (x,), lambda g: (-g,), "neg")


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make(x.data * c, (x,), lambda g: (g * c,), "scale")


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _make(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


def gelu(x: Tensor) -> Tensor:
    xd = x.data
    inner = GELU_C * (xd + GELU_A * xd * xd * xd)
    t = np.tanh(inner)
    y = 0.5 * xd * (1.0 + t)

    def bw(g):
        d = 0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * xd * xd)
        return (g * d,)

    return _make(y, (x,), bw, "gelu")


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return _make(y, (x,), lambda g: (g * y,), "exp")


def log(x: Tensor) -> Tensor:
    xd = x.data
    if (xd <= 0).any():
        raise ContractError("log of a non-positive value")
    return _make(np.log(xd), (x,), lambda g: (g / xd,), "log")


def masked_fill(x: Tensor, mask, value: float) -> Tensor:
    """Replace entries where ``mask`` is true by the constant ``value``."""
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    y = np.where(mask, value, x.data)
    return _make(y, (x,), lambda g: (np.where(mask, 0.0, g),), "masked_fill")


def dropout(x: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    if p <= 0.0:
        return x
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return _make(x.data * keep, (x,), lambda g: (g * keep,), "dropout")


# --- shape ops -------------------------------------------------------------


def reshape(x: Tensor, shape) -> Tensor:
    src = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(src),), "reshape")


def transpose(x: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(range(x.ndim))[::-1]
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),), "transpose")


def take(x: Tensor, index) -> Tensor:
    """Numpy-style indexing; repeated indices accumulate in backward."""
    if isinstance(index, Tensor):
        raise TypeError("index with integers, slices or integer arrays")
    y = x.data[index]
    src_shape = x.shape
    parts = index if isinstance(index, tuple) else (index,)
    basic = all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in parts)

    def bw(g):
        out = np.zeros(src_shape, dtype=DTYPE)
        if basic:
            out[index] = g
        else:
            np.add.at(out, index, g)
        return (out,)

    return _make(np.array(y, dtype=DTYPE), (x,), bw, "take")


# --- reductions --------------------------------------------------------------


def sum_over_axis(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    src = x.shape
    y = x.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src).copy(),)

    return _make(np.asarray(y, dtype=DTYPE), (x,), bw, "sum")


def mean_over_axis(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    """Arithmetic mean over ``axis`` (all axes when None)."""
    if axis is None:
        n = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        n = int(np.prod([x.shape[a] for a in axes]))
    if n == 0:
        raise DimensionError("mean over an empty axis")
    return scale(sum_over_axis(x, axis, keepdims), 1.0 / n)


# --- linear algebra ------------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Matrix product with numpy ``matmul`` semantics (batched over leading dims).

    1-D operands are promoted to a row (left) or column (right) and the
    promoted axis is dropped from the result.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim == 0 or b.ndim == 0:
        raise DimensionError(f"matmul: scalar operand, shapes {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise DimensionError(f"matmul: inner extents differ for shapes {a.shape} and {b.shape}")
    if b.ndim == 1:
        return reshape(matmul(a, reshape(b, (b.shape[0], 1))), a.shape[:-1])
    if a.ndim == 1:
        return reshape(matmul(reshape(a, (1, a.shape[0])), b), b.shape[:-2] + b.shape[-1:])
    ad, bd = a.data, b.data
    if b.ndim == 2 and a.ndim > 2:
        # [..., k] x [k, n]: one flat GEMM each way instead of a batched product
        k, lead = ad.shape[-1], ad.shape[:-1]
        flat = ad.reshape(-1, k)

        def bw_flat(g):
            g2 = g.reshape(-1, g.shape[-1])
            return (g2 @ bd.T).reshape(ad.shape), flat.T @ g2

        return _make((flat @ bd).reshape(*lead, bd.shape[1]), (a, b), bw_flat, "matmul")
    try:
        y = np.matmul(ad, bd)
    except ValueError:
        raise DimensionError(f"matmul: batch dims of {a.shape} and {b.shape} do not broadcast") from None

    def bw(g):
        ga = np.matmul(g, np.swapaxes(bd, -1, -2))
        gb = np.matmul(np.swapaxes(ad, -1, -2), g)
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _make(y, (a, b), bw, "matmul")


# --- normalisation and probabilities ---------------------------------------------


def _check_axis(x: Tensor, axis: int, op: str) -> None:
    if x.ndim == 0 or x.shape[axis] == 0:
        raise DimensionError(f"{op}: empty axis in shape {x.shape}")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    _check_axis(x, axis, "softmax")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _make(y, (x,), bw, "softmax")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    _check_axis(x, axis, "log_softmax")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse

    def bw(g):
        return (g - np.exp(y) * g.sum(axis=axis, keepdims=True),)

    return _make(y, (x,), bw, "log_softmax")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-12) -> Tensor:
    """Normalise the last axis to zero mean and unit variance, then apply gain and bias."""
    h = x.shape[-1]
    if h < 1:
        raise DimensionError("layer_norm over an empty axis")
    if gain.shape != (h,) or bias.shape != (h,):
        raise DimensionError(f"layer_norm: gain {gain.shape} / bias {bias.shape} do not match width {h}")
    if eps <= 0:
        raise ContractError("layer_norm eps must be positive")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gain.data
    y = xhat * gd + bias.data

    def bw(g):
        lead = tuple(range(g.ndim - 1))
        dgain = (g * xhat).sum(axis=lead)
        dbias = g.sum(axis=lead)
        dxhat = g * gd
        dx = inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return dx, dgain, dbias

    return _make(y, (x, gain, bias), bw, "layer_norm")


def cross_entropy(logits: Tensor, label) -> Tensor:
    """Negative log-likelihood of ``label`` under softmax(logits), in log-space.

    ``logits`` of shape [C] with an integer label gives a scalar.  Shape [B, C]
    with B labels gives the mean over the batch.
    """
    ld = logits.data
    if ld.ndim not in (1, 2) or ld.shape[-1] == 0:
        raise DimensionError(f"cross_entropy: bad logits shape {ld.shape}")
    n_cls = ld.shape[-1]
    labels = np.asarray(label, dtype=np.int64)
    batched = ld.ndim == 2
    if batched and labels.shape != (ld.shape[0],):
        raise DimensionError(f"cross_entropy: {labels.shape} labels for logits {ld.shape}")
    if not batched and labels.ndim != 0:
        raise DimensionError("cross_entropy: one label expected for 1-D logits")
    if (labels < 0).any() or (labels >= n_cls).any():
        raise IndexError(f"label out of range for {n_cls} classes: {label}")
    z = ld - ld.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - lse
    if batched:
        rows = np.arange(ld.shape[0])
        y = -logp[rows, labels].mean()
    else:
        y = -logp[labels]

    def bw(g):
        d = np.exp(logp)
        if batched:
            d[rows, labels] -= 1.0
            d /= ld.shape[0]
        else:
            d[labels] -= 1.0
        return (d * g,)

    return _make(np.asarray(y, dtype=DTYPE), (logits,), bw, "cross_entropy")


# --- dispatcher ----------------------------------------------------------------

_KERNELS = {
    "tanh": lambda x, **kw: tanh(x),
    "gelu": lambda x, **kw: gelu(x),
    "add": lambda x, other, **kw: add(x, other),
    "mul": lambda x, other, **kw: mul(x, other),
    "scale": lambda x, c, **kw: scale(x, c),
    "mean_over_axis": lambda x, axis=None, **kw: mean_over_axis(x, axis),
}


def elementwise(x: Tensor, kernel: str, *args, **kwargs) -> Tensor:
    """Apply one of tanh, gelu, add, mul, scale, mean_over_axis by name."""
    try:
        fn = _KERNELS[kernel]
    except KeyError:
        raise ContractError(f"unknown kernel {kernel!r}") from None
    return fn(x, *args, **kwargs)
