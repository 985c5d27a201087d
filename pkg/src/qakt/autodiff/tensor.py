"""Reverse-mode differentiable arrays.

Every op that touches a tensor requiring gradients records a node with a
global sequence number. ``Tensor.backward`` walks the recorded nodes reachable
from the output in exact reverse execution order, so the sequence numbers
act as the computation tape.
"""
from __future__ import annotations

import itertools

import numpy as np

from ..errors import ShapeError
from .. import kernels

_SEQ = itertools.count()
_DEBUG = False
_GRAD_ENABLED = True


def set_debug(flag: bool) -> None:
    """Check every op's output for NaN/Inf and raise ``FloatingPointError``."""
    global _DEBUG
    _DEBUG = bool(flag)


class no_grad:
    """Context manager that disables graph recording."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    ndim_extra = grad.ndim - len(shape)
    if ndim_extra > 0:
        grad = grad.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(*shapes):
    try:
        return np.broadcast_shapes(*shapes)
    except ValueError:
        raise ShapeError(f"shapes {' and '.join(map(str, shapes))} are not broadcastable") from None


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_seq")

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind not in "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents = ()
        self._backward = None
        self._seq = next(_SEQ)

    # -- introspection -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return not self._parents

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # -- backward --------------------------------------------------------
    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward without grad needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=self.data.dtype)
        if grad.shape != self.shape:
            raise ShapeError(f"grad shape {grad.shape} does not match tensor shape {self.shape}")

        nodes = {}
        stack = [self]
        while stack:
            node = stack.pop()
            if id(node) in nodes or not node.requires_grad:
                continue
            nodes[id(node)] = node
            stack.extend(node._parents)
        order = sorted(nodes.values(), key=lambda n: n._seq, reverse=True)

        grads = {id(self): grad}
        for node in order:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- operator sugar --------------------------------------------------
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    if dtype is None:
        arr = np.asarray(x)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        return Tensor(arr)
    return Tensor(np.asarray(x, dtype=dtype))


def _coerce(a, b):
    """Promote python scalars/arrays to the dtype of the tensor operand."""
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    else:
        a, b = as_tensor(a), as_tensor(b)
    return a, b


def _make(data, parents, backward):
    out = Tensor(data)
    if _DEBUG and not np.all(np.isfinite(out.data)):
        raise FloatingPointError(f"non-finite values produced by {backward.__qualname__.split('.')[0]}")
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def make_op(data, parents, backward):
    """Register a custom op: ``backward(g)`` returns one gradient per parent."""
    return _make(np.asarray(data), tuple(parents), backward)


# -- elementwise -------------------------------------------------------------

def add(a, b):
    a, b = _coerce(a, b)
    _broadcast_shape(a.shape, b.shape)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), backward)


def sub(a, b):
    a, b = _coerce(a, b)
    _broadcast_shape(a.shape, b.shape)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), backward)


def mul(a, b):
    a, b = _coerce(a, b)
    _broadcast_shape(a.shape, b.shape)

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.data * b.data, (a, b), backward)


DIV_FLOOR = 1e-8


def div(a, b):
    """Elementwise ``a / b`` with ``|b|`` clamped below by ``DIV_FLOOR``.

    Clamped denominators keep their sign and receive zero gradient.
    """
    a, b = _coerce(a, b)
    _broadcast_shape(a.shape, b.shape)
    small = np.abs(b.data) < DIV_FLOOR
    denom = np.where(small, np.where(b.data < 0, -DIV_FLOOR, DIV_FLOOR), b.data).astype(b.dtype)
    out = a.data / denom

    def backward(g):
        ga = _unbroadcast(g / denom, a.shape) if a.requires_grad else None
        gb = None
        if b.requires_grad:
            gb = np.where(small, 0.0, -g * out / denom).astype(b.dtype)
            gb = _unbroadcast(gb, b.shape)
        return ga, gb

    return _make(out, (a, b), backward)


def neg(a):
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,))


def sigmoid(a):
    a = as_tensor(a)
    x = a.data
    # stable for large |x|
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def relu(a):
    a = as_tensor(a)
    pos = a.data > 0
    return _make(np.where(pos, a.data, 0).astype(a.dtype), (a,), lambda g: (g * pos,))


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a):
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def abs_(a):
    a = as_tensor(a)
    sign = np.sign(a.data)
    return _make(np.abs(a.data), (a,), lambda g: (g * sign,))


def clip(a, lo, hi):
    a = as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return _make(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,))


_ELEMENTWISE = {
    "sigmoid": sigmoid, "relu": relu, "exp": exp, "neg": neg, "abs": abs_,
    "add": add, "sub": sub, "mul": mul, "div": div,
}


def elementwise(op_kind, *args):
    """Dispatch an elementwise op by name."""
    try:
        fn = _ELEMENTWISE[op_kind]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op_kind!r}") from None
    return fn(*args)


# -- reductions and shape ----------------------------------------------------

def sum_(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).astype(a.dtype),)

    return _make(np.asarray(out, dtype=a.dtype), (a,), backward)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return sum_(a, axis, keepdims) * (1.0 / n)


def reshape(a, shape):
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {a.shape} to {tuple(shape)}") from None
    return _make(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None):
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = np.argsort(axes)
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def swapaxes(a, i, j):
    axes = list(range(a.ndim))
    axes[i], axes[j] = axes[j], axes[i]
    return transpose(a, tuple(axes))


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(f"cannot concatenate shapes {[t.shape for t in tensors]} on axis {axis}") from None
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(out, tuple(tensors), backward)


def split(a, sections, axis=-1):
    """Split into ``sections`` equal parts along ``axis``."""
    a = as_tensor(a)
    n = a.shape[axis]
    if n % sections:
        raise ShapeError(f"axis of size {n} does not split into {sections} parts")
    step = n // sections
    parts = []
    for i in range(sections):
        idx = [slice(None)] * a.ndim
        idx[axis] = slice(i * step, (i + 1) * step)
        parts.append(getitem(a, tuple(idx)))
    return parts


def getitem(a, index):
    a = as_tensor(a)
    out = a.data[index]

    def backward(g):
        full = np.zeros_like(a.data)
        full[index] = g
        return (full,)

    return _make(out, (a,), backward)


def take(a, indices, axis=0):
    """Gather ``a[indices]`` along ``axis``; out-of-range raises IndexError."""
    a = as_tensor(a)
    idx = np.asarray(indices, dtype=np.int64)
    n = a.shape[axis]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise IndexError(f"index out of range for axis of size {n}")
    out = np.take(a.data, idx, axis=axis)

    def backward(g):
        moved = np.moveaxis(a.data, axis, 0)
        full = np.zeros((moved.shape[0], int(np.prod(moved.shape[1:], dtype=np.int64))), dtype=a.dtype)
        gm = np.moveaxis(g, tuple(range(axis, axis + idx.ndim)), tuple(range(idx.ndim)))
        kernels.scatter_add_rows(full, idx.reshape(-1), np.ascontiguousarray(gm).reshape(idx.size, -1))
        return (np.moveaxis(full.reshape(moved.shape), 0, axis),)

    return _make(out, (a,), backward)


# -- linear algebra ----------------------------------------------------------

def matmul(a, b):
    a, b = _coerce(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul batch dimensions disagree: {a.shape} @ {b.shape}") from None

    def backward(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape) if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), backward)


# -- fused ops ---------------------------------------------------------------

def softmax_masked(scores, mask, allow_empty=False):
    """Softmax over the last axis restricted to positions where ``mask`` is true.

    Masked positions get exactly zero. The max used for stabilisation is taken
    over admissible entries only, so inadmissible values never influence the
    result. A row with no admissible entry raises unless ``allow_empty``, in
    which case the row is all zeros.
    """
    scores = as_tensor(scores)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), scores.shape)
    any_ok = mask.any(axis=-1, keepdims=True)
    if not allow_empty and not np.all(any_ok):
        raise ValueError("softmax_masked: a row has no admissible position")
    x = np.where(mask, scores.data, -np.inf)
    m = x.max(axis=-1, keepdims=True)
    m = np.where(any_ok, m, 0)
    e = np.where(mask, np.exp(x - m), 0)
    z = e.sum(axis=-1, keepdims=True)
    out = (e / np.where(any_ok, z, 1)).astype(scores.dtype)

    def backward(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _make(out, (scores,), backward)


LN_EPS = 1e-5


def layer_norm(x, gain=None, bias=None, eps=LN_EPS):
    """Normalise over the last axis, then scale by ``gain`` and shift by ``bias``."""
    x = as_tensor(x)
    n = x.shape[-1]
    if n == 0:
        raise ShapeError("layer_norm over an empty feature axis")
    if eps <= 0:
        raise ValueError("layer_norm epsilon must be positive")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xc * inv).astype(x.dtype)
    out = xhat
    parents = [x]
    if gain is not None:
        gain = as_tensor(gain)
        out = out * gain.data
        parents.append(gain)
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data
        parents.append(bias)

    def backward(g):
        dxhat = g * gain.data if gain is not None else g
        dx = inv / n * (n * dxhat - dxhat.sum(axis=-1, keepdims=True)
                        - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True))
        grads = [dx.astype(x.dtype)]
        if gain is not None:
            grads.append(_unbroadcast(g * xhat, gain.shape))
        if bias is not None:
            grads.append(_unbroadcast(g, bias.shape))
        return tuple(grads)

    return _make(out.astype(x.dtype), tuple(parents), backward)


def dropout(x, rate, training, rng=None):
    """Inverted dropout: zero with probability ``rate``, scale survivors."""
    if not 0 <= rate < 1:
        from ..errors import ConfigError
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    x = as_tensor(x)
    if not training or rate == 0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs a seeded generator")
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return _make(x.data * keep, (x,), lambda g: (g * keep,))


def binary_cross_entropy(probs, targets, mask=None, eps=1e-7):
    """Summed BCE over unmasked entries; probabilities clamped to [eps, 1-eps]."""
    probs = as_tensor(probs)
    t = np.asarray(targets, dtype=probs.dtype)
    w = np.ones_like(probs.data) if mask is None else np.asarray(mask, dtype=probs.dtype)
    lo, hi = probs.dtype.type(eps), probs.dtype.type(1 - eps)
    p = np.clip(probs.data, lo, hi)
    inside = (probs.data >= lo) & (probs.data <= hi)
    terms = -(t * np.log(p) + (1 - t) * np.log1p(-p)) * w
    out = np.asarray(terms.sum(), dtype=probs.dtype)

    def backward(g):
        d = (-(t / p) + (1 - t) / (1 - p)) * w * inside
        return ((g * d).astype(probs.dtype),)

    return _make(out, (probs,), backward)
