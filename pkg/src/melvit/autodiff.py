"""Dense tensors with reverse-mode automatic differentiation.

A :class:`Tensor` wraps a row-major numpy float array plus an optional tape
node (parent tensors and a backward closure). Calling :func:`backward` on a
scalar walks the tape in reverse topological order and accumulates gradients
into every leaf that has ``requires_grad`` set. Non-leaf gradient buffers are
transient per pass; leaf gradients accumulate until zeroed by the caller.

Compute is float32 by default; constructing parameters as float64 turns the
whole graph into float64, which the finite-difference tests rely on.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf, expit

from . import backend
from .rng import Rng

DEFAULT_DTYPE = np.float32

_FLOATS = (np.float32, np.float64)


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible; message names both."""


class NumericsError(RuntimeError):
    """Raised on NaN/Inf where silent propagation would poison a run."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_prev", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = np.ascontiguousarray(arr, dtype=dtype)
        elif arr.dtype not in _FLOATS:
            arr = np.ascontiguousarray(arr, dtype=DEFAULT_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._prev = ()
        self._backward = None

    # -- introspection --------------------------------------------------------

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
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    # -- operators -------------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, power(other, -1.0))
        return mul(self, 1.0 / other)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, axes):
        return transpose(self, axes)


# -- tape plumbing -------------------------------------------------------------


def _as_tensor(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


def _make(data, parents, backward_fn) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._prev = tuple(parents)
        out._backward = backward_fn
    return out


def _accum(t: Tensor, g: np.ndarray):
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _topo(root: Tensor):
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._prev:
            if p.requires_grad:
                stack.append((p, False))
    return order


def backward(loss: Tensor):
    """Populate ``grad`` on every requires_grad leaf reachable from ``loss``.

    ``loss`` must be a scalar. Repeated calls accumulate into leaf gradients;
    intermediate buffers are reset per pass.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad:
        return
    order = _topo(loss)
    for node in order:
        if node._prev:
            node.grad = None
    _accum(loss, np.ones_like(loss.data))
    for node in reversed(order):
        if node._backward is None or node.grad is None:
            continue
        node._backward(node.grad)


# -- elementwise and shape ops ---------------------------------------------------


def add(a, b):
    a = a if isinstance(a, Tensor) else Tensor(np.asarray(a, dtype=b.data.dtype))
    b = _as_tensor(b, a)

    def back(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g, b.data.shape))

    return _make(a.data + b.data, (a, b), back)


def mul(a, b):
    a = a if isinstance(a, Tensor) else Tensor(np.asarray(a, dtype=b.data.dtype))
    b = _as_tensor(b, a)

    def back(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(a.data * b.data, (a, b), back)


def power(a: Tensor, exponent: float):
    e = float(exponent)

    def back(g):
        if a.requires_grad:
            _accum(a, g * e * a.data ** (e - 1.0))

    return _make(a.data**e, (a,), back)


def exp(a: Tensor):
    out_data = np.exp(a.data)

    def back(g):
        if a.requires_grad:
            _accum(a, g * out_data)

    return _make(out_data, (a,), back)


def log(a: Tensor):
    def back(g):
        if a.requires_grad:
            _accum(a, g / a.data)

    return _make(np.log(a.data), (a,), back)


def tsum(a: Tensor, axis=None, keepdims=False):
    def back(g):
        if not a.requires_grad:
            return
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.data.shape).copy())

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), back)


def tmean(a: Tensor, axis=None, keepdims=False):
    if axis is None:
        n = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([a.data.shape[ax] for ax in axes]))

    def back(g):
        if not a.requires_grad:
            return
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.data.shape) / n)

    return _make(a.data.mean(axis=axis, keepdims=keepdims), (a,), back)


def reshape(a: Tensor, shape):
    def back(g):
        if a.requires_grad:
            _accum(a, g.reshape(a.data.shape))

    return _make(a.data.reshape(shape), (a,), back)


def transpose(a: Tensor, axes):
    inv = np.argsort(axes)

    def back(g):
        if a.requires_grad:
            _accum(a, g.transpose(inv))

    return _make(a.data.transpose(axes), (a,), back)


def getitem(a: Tensor, idx):
    def back(g):
        if a.requires_grad:
            dx = np.zeros_like(a.data)
            np.add.at(dx, idx, g)
            _accum(a, dx)

    return _make(a.data[idx], (a,), back)


def concatenate(tensors, axis=0):
    tensors = list(tensors)
    sizes = [t.data.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def back(g):
        for t, piece in zip(tensors, np.split(g, cuts, axis=axis)):
            if t.requires_grad:
                _accum(t, piece)

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, back)


def broadcast_to(a: Tensor, shape):
    def back(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.data.shape))

    return _make(np.broadcast_to(a.data, shape).copy(), (a,), back)


# -- matmul ---------------------------------------------------------------------


def matmul(a: Tensor, b) -> Tensor:
    """Matrix product with numpy batch broadcasting over leading axes."""
    b = _as_tensor(b, a)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.data.shape} @ {b.data.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul: inner extents disagree: {a.data.shape} @ {b.data.shape}")

    def back(g):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            _accum(a, _unbroadcast(ga, a.data.shape))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            _accum(b, _unbroadcast(gb, b.data.shape))

    return _make(np.matmul(a.data, b.data), (a, b), back)


# -- activations ------------------------------------------------------------------

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(a: Tensor):
    """x * Phi(x) with the exact normal CDF (erf form)."""
    x = a.data
    phi = 0.5 * (1.0 + erf(x * _INV_SQRT2))

    def back(g):
        if a.requires_grad:
            pdf = np.exp(-0.5 * x * x) * _INV_SQRT2PI
            _accum(a, g * (phi + x * pdf).astype(x.dtype))

    return _make((x * phi).astype(x.dtype), (a,), back)


def softmax(a: Tensor, axis: int = -1):
    """Stable softmax along ``axis``; each slice sums to 1."""
    nd = a.data.ndim
    if not -nd <= axis < nd:
        raise ShapeError(f"softmax: axis {axis} out of range for shape {a.data.shape}")
    z = a.data - a.data.max(axis=axis, keepdims=True)
    ez = np.exp(z)
    s = ez / ez.sum(axis=axis, keepdims=True)

    def back(g):
        if a.requires_grad:
            _accum(a, s * (g - (g * s).sum(axis=axis, keepdims=True)))

    return _make(s, (a,), back)


def dropout(a: Tensor, p: float, rng: Rng, training: bool):
    """Inverted dropout: zero with prob ``p`` and scale survivors by 1/(1-p)."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return a
    keep = (rng.uniform(size=a.data.shape) >= p).astype(a.data.dtype)
    scale = np.asarray(1.0 / (1.0 - p), dtype=a.data.dtype)
    mask = keep * scale

    def back(g):
        if a.requires_grad:
            _accum(a, g * mask)

    return _make(a.data * mask, (a,), back)


# -- normalization -----------------------------------------------------------------


def layer_norm(a: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5):
    """Normalize over the last axis, then apply the per-feature affine."""
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    lead = tuple(range(x.ndim - 1))

    def back(g):
        if gamma.requires_grad:
            _accum(gamma, (g * xhat).sum(axis=lead))
        if beta.requires_grad:
            _accum(beta, g.sum(axis=lead))
        if a.requires_grad:
            dxhat = g * gamma.data
            dx = inv * (
                dxhat
                - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
            )
            _accum(a, dx.astype(x.dtype))

    return _make((gamma.data * xhat + beta.data).astype(x.dtype), (a, gamma, beta), back)


def batch_norm(
    a: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
):
    """Per-channel batch normalization; channels live on axis 1.

    Training mode normalizes by batch statistics and updates the running
    buffers in place; eval mode normalizes by the running buffers.
    """
    x = a.data
    axes = (0,) + tuple(range(2, x.ndim))
    rs = (1, x.shape[1]) + (1,) * (x.ndim - 2)
    if training:
        if x.shape[0] < 2:
            raise ValueError(f"batch_norm: training mode needs batch size >= 2, got {x.shape[0]}")
        mu = x.mean(axis=axes)
        var = x.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mu = running_mean
        var = running_var
    inv = (1.0 / np.sqrt(var + eps)).reshape(rs)
    xhat = (x - mu.reshape(rs)) * inv
    y = gamma.data.reshape(rs) * xhat + beta.data.reshape(rs)

    def back(g):
        if gamma.requires_grad:
            _accum(gamma, (g * xhat).sum(axis=axes))
        if beta.requires_grad:
            _accum(beta, g.sum(axis=axes))
        if a.requires_grad:
            dxhat = g * gamma.data.reshape(rs)
            if training:
                dx = inv * (
                    dxhat
                    - dxhat.mean(axis=axes, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=axes, keepdims=True)
                )
            else:
                dx = dxhat * inv
            _accum(a, dx.astype(x.dtype))

    return _make(y.astype(x.dtype), (a, gamma, beta), back)


# -- convolution and pooling ---------------------------------------------------------


def conv2d(x: Tensor, w: Tensor, bias: Tensor | None = None, pad: int = 0):
    """Stride-1 2-D correlation: x [B,C,H,W], w [F,C,kh,kw] -> [B,F,H',W']."""
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D operands, got {x.data.shape} and {w.data.shape}")
    if x.data.shape[1] != w.data.shape[1]:
        raise ShapeError(
            f"conv2d: input channels {x.data.shape[1]} != kernel channels {w.data.shape[1]} "
            f"(input {x.data.shape}, weight {w.data.shape})"
        )
    kh, kw = w.data.shape[2], w.data.shape[3]
    Hp, Wp = x.data.shape[2] + 2 * pad, x.data.shape[3] + 2 * pad
    if kh > Hp or kw > Wp:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than padded input {Hp}x{Wp}")
    if pad > 0:
        xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    else:
        xp = x.data
    y = backend.conv2d_forward(xp, w.data)
    if bias is not None:
        y = y + bias.data.reshape(1, -1, 1, 1)
    parents = (x, w) if bias is None else (x, w, bias)

    def back(g):
        g = np.ascontiguousarray(g)
        if w.requires_grad:
            _accum(w, backend.conv2d_backward_w(xp, g))
        if bias is not None and bias.requires_grad:
            _accum(bias, g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            dxp = backend.conv2d_backward_x(g, w.data, Hp, Wp)
            if pad > 0:
                dxp = dxp[:, :, pad:-pad, pad:-pad]
            _accum(x, dxp)

    return _make(y, parents, back)


def maxpool2d(x: Tensor, k: int):
    """Non-overlapping k*k max pooling; remainder rows/cols are dropped."""
    if x.data.ndim != 4:
        raise ShapeError(f"maxpool2d expects a 4-D input, got {x.data.shape}")
    H, W = x.data.shape[2], x.data.shape[3]
    if H < k or W < k:
        raise ShapeError(f"maxpool2d: window {k}x{k} larger than input {H}x{W}")
    out, arg = backend.maxpool2d_forward(np.ascontiguousarray(x.data), k)

    def back(g):
        if x.requires_grad:
            _accum(x, backend.maxpool2d_backward(np.ascontiguousarray(g), arg, H, W))

    return _make(out, (x,), back)


# -- losses ----------------------------------------------------------------------


def cross_entropy_logits(logits: Tensor, labels) -> Tensor:
    """Softmax cross-entropy against integer labels, averaged over the batch."""
    labels = np.asarray(labels)
    z = logits.data
    if z.ndim != 2:
        raise ShapeError(f"cross_entropy_logits expects [batch, classes] logits, got {z.shape}")
    n_classes = z.shape[1]
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= n_classes:
        raise ValueError(f"label out of range for {n_classes} classes: {labels}")
    zs = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(zs).sum(axis=1, keepdims=True))
    logp = zs - lse
    batch = z.shape[0]
    loss = -logp[np.arange(batch), labels].mean()

    def back(g):
        if logits.requires_grad:
            grad = np.exp(logp)
            grad[np.arange(batch), labels] -= 1.0
            _accum(logits, (g * grad / batch).astype(z.dtype))

    return _make(np.asarray(loss, dtype=z.dtype), (logits,), back)


def bce_with_logits(logits: Tensor, targets) -> Tensor:
    """Sigmoid binary cross-entropy on raw logits, averaged over all elements."""
    z = logits.data
    y = np.asarray(targets, dtype=z.dtype).reshape(z.shape)
    loss = (np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))).mean()
    n = z.size

    def back(g):
        if logits.requires_grad:
            p = expit(z)
            _accum(logits, (g * (p - y) / n).astype(z.dtype))

    return _make(np.asarray(loss, dtype=z.dtype), (logits,), back)
