"""Dense tensors with reverse-mode automatic differentiation.

Values are plain numpy arrays. float32 is the working precision for
training and inference; float64 exists for verifying gradients against
finite differences. Ops record a tape node only when gradients are
globally enabled and at least one input takes part in the graph, so the
same code runs tape-free at inference time under ``no_grad()``.

Broadcasting is supported only where the models here need it: leading
batch axes for matmul against 2-d weights, and numpy-style broadcasting
in add/mul (bias rows, masks, scalar scaling).
"""
from __future__ import annotations

from contextlib import contextmanager

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "no_grad",
    "grad_enabled",
    "backward",
    "add",
    "mul",
    "matmul",
    "transpose",
    "reshape",
    "embedding",
    "softmax",
    "log_softmax",
    "layer_norm",
    "relu",
    "tsum",
    "tmean",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested op."""


_grad_enabled = True


@contextmanager
def no_grad():
    """Disable tape recording inside the block (inference / teacher passes)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """One node of the reverse-mode graph.

    Leaves built by the user may set ``requires_grad``; internal nodes
    inherit it from their parents. ``grad`` accumulates additively across
    fan-out during :func:`backward`.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._vjp = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{tag})"

    # arithmetic sugar; scalars stay raw floats so no graph node is wasted
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Tensor) else -other)

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not an op here; multiply by a precomputed reciprocal")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self, grad=None):
        backward(self, grad)


def _node(data, parents, vjp) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = True
    out._parents = parents
    out._vjp = vjp
    return out


def _const(data) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = False
    out._parents = ()
    out._vjp = None
    return out


def _tracing(*tensors) -> bool:
    return _grad_enabled and any(t.requires_grad for t in tensors)


def _unbroadcast(g, shape):
    """Reduce a broadcast gradient back to ``shape``."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def backward(root: Tensor, grad=None):
    """Reverse-mode sweep from ``root``; visits each node exactly once.

    Gradients land in ``.grad`` of every reachable tensor with
    ``requires_grad``; fan-out accumulates additively. The sweep is
    iterative so 48-layer graphs do not hit the recursion limit.
    """
    if grad is None:
        if root.data.size != 1:
            raise ShapeError("backward() without an explicit gradient needs a scalar root")
        grad = np.ones_like(root.data)
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    root.grad = grad
    for node in reversed(order):
        if node._vjp is None:
            continue
        for parent, g in zip(node._parents, node._vjp(node.grad)):
            if g is None or not parent.requires_grad:
                continue
            parent.grad = g if parent.grad is None else parent.grad + g
        node._vjp = None
        if node is not root:
            node.grad = None


# ---------------------------------------------------------------------------
# ops


def add(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a, b = b, a
    if isinstance(b, Tensor):
        data = a.data + b.data
        if not _tracing(a, b):
            return _const(data)

        def vjp(g):
            return (
                _unbroadcast(g, a.data.shape) if a.requires_grad else None,
                _unbroadcast(g, b.data.shape) if b.requires_grad else None,
            )

        return _node(data, (a, b), vjp)
    # tensor + constant array/scalar
    bc = np.asarray(b, dtype=a.data.dtype) if not np.isscalar(b) else b
    data = a.data + bc
    if not _tracing(a):
        return _const(data)
    return _node(data, (a,), lambda g: (_unbroadcast(g, a.data.shape),))


def mul(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a, b = b, a
    if isinstance(b, Tensor):
        data = a.data * b.data
        if not _tracing(a, b):
            return _const(data)
        ad, bd = a.data, b.data

        def vjp(g):
            return (
                _unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
                _unbroadcast(g * ad, bd.shape) if b.requires_grad else None,
            )

        return _node(data, (a, b), vjp)
    bc = np.asarray(b, dtype=a.data.dtype) if not np.isscalar(b) else b
    data = a.data * bc
    if not _tracing(a):
        return _const(data)
    return _node(data, (a,), lambda g: (_unbroadcast(g * bc, a.data.shape),))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with leading batch axes; gradients g@b^T and a^T@g."""
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2:
        raise ShapeError(f"matmul needs 2-d or batched operands, got {ad.shape} @ {bd.shape}")
    if ad.shape[-1] != bd.shape[-2]:
        raise ShapeError(f"inner dimensions differ: {ad.shape} @ {bd.shape}")
    data = ad @ bd
    if not _tracing(a, b):
        return _const(data)

    def vjp(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ bd.swapaxes(-1, -2), ad.shape)
        if b.requires_grad:
            gb = _unbroadcast(ad.swapaxes(-1, -2) @ g, bd.shape)
        return ga, gb

    return _node(data, (a, b), vjp)


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    data = a.data.transpose(axes)
    if not _tracing(a):
        return _const(data)
    inv = tuple(np.argsort(axes))
    return _node(data, (a,), lambda g: (g.transpose(inv),))


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    data = a.data.reshape(shape)
    if not _tracing(a):
        return _const(data)
    orig = a.data.shape
    return _node(data, (a,), lambda g: (g.reshape(orig),))


def embedding(weight: Tensor, ids) -> Tensor:
    """Row gather; the gradient scatter-adds back into the table."""
    ids = np.asarray(ids)
    data = weight.data[ids]
    if not _tracing(weight):
        return _const(data)

    def vjp(g):
        gw = np.zeros_like(weight.data)
        np.add.at(gw, ids.reshape(-1), g.reshape(-1, weight.data.shape[-1]))
        return (gw,)

    return _node(data, (weight,), vjp)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-stabilized softmax along ``axis``; rows sum to 1."""
    z = x.data - x.data.max(axis=axis, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=axis, keepdims=True)
    if not _tracing(x):
        return _const(z)

    def vjp(g):
        inner = (g * z).sum(axis=axis, keepdims=True)
        return ((g - inner) * z,)

    return _node(z, (x,), vjp)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    y = log_softmax_np(x.data, axis)
    if not _tracing(x):
        return _const(y)

    def vjp(g):
        return (g - np.exp(y) * g.sum(axis=axis, keepdims=True),)

    return _node(y, (x,), vjp)


def log_softmax_np(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Tape-free log-softmax, shared with the inference path."""
    m = x.max(axis=axis, keepdims=True)
    z = x - m
    lse = np.log(np.sum(np.exp(z), axis=axis, keepdims=True))
    return z - lse


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    y, sigma = _layer_norm_np(x.data, eps)
    data = y * gain.data + bias.data
    if not _tracing(x, gain, bias):
        return _const(data)
    gd = gain.data

    def vjp(g):
        gx = ggain = gbias = None
        if x.requires_grad:
            gy = g * gd
            m1 = gy.mean(axis=-1, keepdims=True)
            m2 = (gy * y).mean(axis=-1, keepdims=True)
            gx = (gy - m1 - y * m2) / sigma
        if gain.requires_grad:
            ggain = (g * y).reshape(-1, y.shape[-1]).sum(axis=0)
        if bias.requires_grad:
            gbias = g.reshape(-1, y.shape[-1]).sum(axis=0)
        return gx, ggain, gbias

    return _node(data, (x, gain, bias), vjp)


def _layer_norm_np(x: np.ndarray, eps: float):
    mu = x.mean(axis=-1, keepdims=True)
    d = x - mu
    var = (d * d).mean(axis=-1, keepdims=True)
    sigma = np.sqrt(var + eps)
    return d / sigma, sigma


def layer_norm_np(x: np.ndarray, gain: np.ndarray, bias: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Tape-free layer norm for the inference path."""
    y, _ = _layer_norm_np(x, eps)
    return y * gain + bias


def relu(x: Tensor) -> Tensor:
    data = np.maximum(x.data, 0)
    if not _tracing(x):
        return _const(data)
    mask = x.data > 0
    return _node(data, (x,), lambda g: (g * mask,))


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = x.data.sum(axis=axis, keepdims=keepdims)
    if not _tracing(x):
        return _const(data)
    shape = x.data.shape

    def vjp(g):
        gg = g
        if axis is not None and not keepdims:
            gg = np.expand_dims(gg, axis)
        return (np.broadcast_to(gg, shape),)

    return _node(data, (x,), vjp)


def tmean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = x.data.size
    else:
        n = x.data.shape[axis]
    return mul(tsum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def assert_finite(arr: np.ndarray, what: str = "tensor"):
    """Raise if NaN/Inf appears; the training loop treats that as fatal."""
    if not np.isfinite(arr).all():
        raise FloatingPointError(f"non-finite values in {what}")
