"""Minimal reverse-mode automatic differentiation on numpy arrays.

A Tensor wraps an ndarray and records, for every operation, a closure that
propagates gradients to its parents. Calling ``backward()`` on a scalar
output walks the tape in reverse topological order. The engine is
deliberately small: it implements exactly the operations the rest of this
package needs (elementwise math, reductions, 2D/3D convolution, group
normalization, nearest-neighbor upsampling, box filtering, bilinear
sampling and max-pooling over a feature set), plus an Adam optimizer.

Scalar precision follows the input arrays: use float64 for gradient
checks, float32 for training and optimization runs. One tape is
single-threaded; independent tapes may live on separate threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

_GRAD_ENABLED = True


class no_grad:
    """Context manager that disables tape recording (inference mode)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def _to_float_array(data):
    arr = np.asarray(data)
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float64)
    return arr


class Tensor:
    """ndarray + gradient accumulator + backward closure."""

    # keep numpy from hijacking `ndarray op Tensor`
    __array_ufunc__ = None

    __slots__ = ("data", "requires_grad", "grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False):
        if isinstance(data, Tensor):
            raise TypeError("wrap raw array data, not another Tensor")
        self.data = _to_float_array(data)
        self.requires_grad = bool(requires_grad) and _GRAD_ENABLED
        self.grad = np.zeros_like(self.data) if self.requires_grad else None
        self._backward = None
        self._parents = ()

    # ------------------------------------------------------------------
    # bookkeeping
    # ------------------------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self):
        if self.grad is not None:
            self.grad.fill(0.0)

    def set_requires_grad(self, flag: bool):
        """Toggle participation in future tapes (e.g. freeze network weights)."""
        flag = bool(flag)
        if flag and self.grad is None:
            self.grad = np.zeros_like(self.data)
        if not flag:
            self.grad = None
        self.requires_grad = flag

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # ------------------------------------------------------------------
    # autograd core
    # ------------------------------------------------------------------
    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed needs a scalar output")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.data.dtype)
            if grad.shape != self.data.shape:
                raise ValueError(f"seed shape {grad.shape} != output shape {self.data.shape}")

        # iterative topological order (closures can nest deeply)
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))

        self._accumulate(grad)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward()

    # ------------------------------------------------------------------
    # op plumbing
    # ------------------------------------------------------------------
    @staticmethod
    def _result(data, parents, backward_builder):
        out = Tensor(data)
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out.grad = None  # intermediates allocate lazily on first accumulate
            out._parents = tuple(parents)
            out._backward = backward_builder(out)
        return out

    @staticmethod
    def _unbroadcast(g, shape):
        if g.shape == shape:
            return g
        extra = g.ndim - len(shape)
        if extra > 0:
            g = g.sum(axis=tuple(range(extra)))
        axes = tuple(i for i, (gs, ts) in enumerate(zip(g.shape, shape)) if ts == 1 and gs != 1)
        if axes:
            g = g.sum(axis=axes, keepdims=True)
        return g.reshape(shape)

    # ------------------------------------------------------------------
    # elementwise binary ops
    # ------------------------------------------------------------------
    def __add__(self, other):
        other = as_tensor(other)
        def bw(out):
            def _run():
                if self.requires_grad:
                    self._accumulate(self._unbroadcast(out.grad, self.shape))
                if other.requires_grad:
                    other._accumulate(self._unbroadcast(out.grad, other.shape))
            return _run
        return self._result(self.data + other.data, (self, other), bw)

    __radd__ = __add__

    def __sub__(self, other):
        other = as_tensor(other)
        def bw(out):
            def _run():
                if self.requires_grad:
                    self._accumulate(self._unbroadcast(out.grad, self.shape))
                if other.requires_grad:
                    other._accumulate(-self._unbroadcast(out.grad, other.shape))
            return _run
        return self._result(self.data - other.data, (self, other), bw)

    def __rsub__(self, other):
        return as_tensor(other).__sub__(self)

    def __mul__(self, other):
        other = as_tensor(other)
        def bw(out):
            def _run():
                if self.requires_grad:
                    self._accumulate(self._unbroadcast(out.grad * other.data, self.shape))
                if other.requires_grad:
                    other._accumulate(self._unbroadcast(out.grad * self.data, other.shape))
            return _run
        return self._result(self.data * other.data, (self, other), bw)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        def bw(out):
            def _run():
                if self.requires_grad:
                    self._accumulate(self._unbroadcast(out.grad / other.data, self.shape))
                if other.requires_grad:
                    g = -out.grad * self.data / (other.data * other.data)
                    other._accumulate(self._unbroadcast(g, other.shape))
            return _run
        return self._result(self.data / other.data, (self, other), bw)

    def __rtruediv__(self, other):
        return as_tensor(other).__truediv__(self)

    def __neg__(self):
        def bw(out):
            def _run():
                if self.requires_grad:
                    self._accumulate(-out.grad)
            return _run
        return self._result(-self.data, (self,), bw)

    def __pow__(self, exponent):
        if isinstance(exponent, Tensor):
            raise TypeError("tensor exponents are not supported")
        c = float(exponent)
        def bw(out):
            def _run():
                if self.requires_grad:
                    self._accumulate(out.grad * c * self.data ** (c - 1.0))
            return _run
        return self._result(self.data ** c, (self,), bw)

    # ------------------------------------------------------------------
    # elementwise unary ops
    # ------------------------------------------------------------------
    def exp(self):
        y = np.exp(self.data)
        def bw(out):
            def _run():
                if self.requires_grad:
                    self._accumulate(out.grad * y)
            return _run
        return self._result(y, (self,), bw)

    def log(self):
        def bw(out):
            def _run():
                if self.requires_grad:
                    self._accumulate(out.grad / self.data)
            return _run
        return self._result(np.log(self.data), (self,), bw)

    def sqrt(self):
        y = np.sqrt(self.data)
        def bw(out):
            def _run():
                if self.requires_grad:
                    self._accumulate(out.grad * 0.5 / y)
            return _run
        return self._result(y, (self,), bw)

    def tanh(self):
        y = np.tanh(self.data)
        def bw(out):
            def _run():
                if self.requires_grad:
                    self._accumulate(out.grad * (1.0 - y * y))
            return _run
        return self._result(y, (self,), bw)

    def sigmoid(self):
        y = 1.0 / (1.0 + np.exp(-self.data))
        def bw(out):
            def _run():
                if self.requires_grad:
                    self._accumulate(out.grad * y * (1.0 - y))
            return _run
        return self._result(y, (self,), bw)

    def relu(self):
        mask = self.data > 0
        def bw(out):
            def _run():
                if self.requires_grad:
                    self._accumulate(out.grad * mask)
            return _run
        return self._result(self.data * mask, (self,), bw)

    def abs(self):
        sign = np.sign(self.data)
        def bw(out):
            def _run():
                if self.requires_grad:
                    self._accumulate(out.grad * sign)
            return _run
        return self._result(np.abs(self.data), (self,), bw)

    def clip(self, lo, hi):
        """Clamp values; gradient is identity strictly inside [lo, hi], else 0."""
        mask = (self.data > lo) & (self.data < hi)
        def bw(out):
            def _run():
                if self.requires_grad:
                    self._accumulate(out.grad * mask)
            return _run
        return self._result(np.clip(self.data, lo, hi), (self,), bw)

    # ------------------------------------------------------------------
    # reductions / shaping
    # ------------------------------------------------------------------
    def sum(self, axis=None, keepdims=False):
        def bw(out):
            def _run():
                if not self.requires_grad:
                    return
                g = out.grad
                if axis is not None and not keepdims:
                    g = np.expand_dims(g, axis)
                self._accumulate(np.broadcast_to(g, self.shape).copy()
                                 if g.shape != self.shape else g)
            return _run
        return self._result(self.data.sum(axis=axis, keepdims=keepdims), (self,), bw)

    def mean(self, axis=None, keepdims=False):
        if axis is None:
            n = self.data.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            n = int(np.prod([self.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        def bw(out):
            def _run():
                if self.requires_grad:
                    self._accumulate(out.grad.reshape(old))
            return _run
        return self._result(self.data.reshape(shape), (self,), bw)

    def transpose(self, axes):
        axes = tuple(axes)
        inv = tuple(np.argsort(axes))
        def bw(out):
            def _run():
                if self.requires_grad:
                    self._accumulate(out.grad.transpose(inv))
            return _run
        return self._result(self.data.transpose(axes), (self,), bw)

    def __getitem__(self, idx):
        def bw(out):
            def _run():
                if self.requires_grad:
                    g = np.zeros_like(self.data)
                    g[idx] += out.grad
                    self._accumulate(g)
            return _run
        return self._result(self.data[idx], (self,), bw)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ----------------------------------------------------------------------
# dispatch helpers: useful for formulas written once for Tensor or ndarray
# ----------------------------------------------------------------------
def exp(x):
    return x.exp() if isinstance(x, Tensor) else np.exp(x)


def log(x):
    return x.log() if isinstance(x, Tensor) else np.log(x)


def sqrt(x):
    return x.sqrt() if isinstance(x, Tensor) else np.sqrt(x)


def clip(x, lo, hi):
    return x.clip(lo, hi) if isinstance(x, Tensor) else np.clip(x, lo, hi)


def relu(x):
    return x.relu() if isinstance(x, Tensor) else np.maximum(x, 0.0)


def values(x):
    """Underlying ndarray of a Tensor, or the array itself."""
    return x.data if isinstance(x, Tensor) else np.asarray(x)


# ----------------------------------------------------------------------
# structural ops
# ----------------------------------------------------------------------
def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    def bw(out):
        def _run():
            parts = np.split(out.grad, splits, axis=axis)
            for t, g in zip(tensors, parts):
                if t.requires_grad:
                    t._accumulate(g)
        return _run
    return Tensor._result(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw)


def maxpool_over_set(tensors):
    """Elementwise maximum over a list of same-shape tensors.

    Gradient routes to the argmax element; ties go to the lowest list index.
    """
    if len(tensors) == 0:
        raise ValueError("maxpool_over_set needs at least one tensor")
    tensors = [as_tensor(t) for t in tensors]
    shape = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != shape:
            raise ValueError(f"shape mismatch in maxpool_over_set: {t.shape} vs {shape}")
    stacked = np.stack([t.data for t in tensors], axis=0)
    arg = np.argmax(stacked, axis=0)  # first occurrence wins ties
    out_data = np.max(stacked, axis=0)
    def bw(out):
        def _run():
            for i, t in enumerate(tensors):
                if t.requires_grad:
                    t._accumulate(out.grad * (arg == i))
        return _run
    return Tensor._result(out_data, tensors, bw)


def softmax(x: Tensor, axis: int):
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)
    def bw(out):
        def _run():
            if x.requires_grad:
                dot = (out.grad * s).sum(axis=axis, keepdims=True)
                x._accumulate(s * (out.grad - dot))
        return _run
    return Tensor._result(s, (x,), bw)


def linmap(matrix: np.ndarray, x: Tensor):
    """Apply a constant matrix along the leading axis: out = matrix @ x."""
    x = as_tensor(x)
    A = np.asarray(matrix, dtype=x.dtype)
    def bw(out):
        def _run():
            if x.requires_grad:
                x._accumulate(np.tensordot(A.T, out.grad, axes=1))
        return _run
    return Tensor._result(np.tensordot(A, x.data, axes=1), (x,), bw)


# ----------------------------------------------------------------------
# convolution
# ----------------------------------------------------------------------
def _pair(v):
    return (v, v) if np.isscalar(v) else tuple(v)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride=1, padding=0):
    """2D cross-correlation. x: [C,H,W] or [B,C,H,W]; weight: [Cout,Cin,kh,kw]."""
    x = as_tensor(x)
    weight = as_tensor(weight)
    squeeze = x.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4 or weight.ndim != 4:
        raise ValueError(f"conv2d expects 4D input/weight, got {x.shape} and {weight.shape}")
    B, C, H, W = xd.shape
    Cout, Cin, kh, kw = weight.shape
    if C != Cin:
        raise ValueError(f"conv2d channel mismatch: input has {C} channels, weight expects {Cin}")
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    if sh < 1 or sw < 1:
        raise ValueError("conv2d stride must be >= 1")
    Ho = (H + 2 * ph - kh) // sh + 1
    Wo = (W + 2 * pw - kw) // sw + 1
    if Ho < 1 or Wo < 1:
        raise ValueError(
            f"conv2d kernel {kh}x{kw} does not fit padded input {H + 2 * ph}x{W + 2 * pw}")

    xp = np.pad(xd, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else xd
    # shift-accumulate: one channel-mixing product per kernel tap; avoids
    # materializing the full im2col buffer
    out_data = np.zeros((B, Cout, Ho, Wo), dtype=xd.dtype)
    for i in range(kh):
        for j in range(kw):
            sl = xp[:, :, i:i + sh * Ho:sh, j:j + sw * Wo:sw]
            out_data += np.tensordot(weight.data[:, :, i, j], sl,
                                     axes=([1], [1])).transpose(1, 0, 2, 3)
    if bias is not None:
        out_data += bias.data.reshape(1, Cout, 1, 1)
    if squeeze:
        out_data = out_data[0]

    parents = (x, weight) if bias is None else (x, weight, bias)

    def bw(out):
        def _run():
            go = out.grad[None] if squeeze else out.grad
            if bias is not None and bias.requires_grad:
                bias._accumulate(go.sum(axis=(0, 2, 3)))
            if weight.requires_grad:
                dw = np.empty_like(weight.data)
                for i in range(kh):
                    for j in range(kw):
                        sl = xp[:, :, i:i + sh * Ho:sh, j:j + sw * Wo:sw]
                        dw[:, :, i, j] = np.tensordot(go, sl,
                                                      axes=([0, 2, 3], [0, 2, 3]))
                weight._accumulate(dw)
            if x.requires_grad:
                dxp = np.zeros_like(xp)
                for i in range(kh):
                    for j in range(kw):
                        dxp[:, :, i:i + sh * Ho:sh, j:j + sw * Wo:sw] += np.tensordot(
                            weight.data[:, :, i, j], go,
                            axes=([0], [1])).transpose(1, 0, 2, 3)
                dx = dxp[:, :, ph:ph + H, pw:pw + W] if (ph or pw) else dxp
                x._accumulate(dx[0] if squeeze else dx)
        return _run

    return Tensor._result(out_data, parents, bw)


def _triple(v):
    return (v, v, v) if np.isscalar(v) else tuple(v)


def conv3d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride=1, padding=0):
    """3D cross-correlation. x: [C,D,H,W] or [B,C,D,H,W]; weight: [Cout,Cin,kd,kh,kw]."""
    x = as_tensor(x)
    weight = as_tensor(weight)
    squeeze = x.ndim == 4
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 5 or weight.ndim != 5:
        raise ValueError(f"conv3d expects 5D input/weight, got {x.shape} and {weight.shape}")
    B, C, D, H, W = xd.shape
    Cout, Cin, kd, kh, kw = weight.shape
    if C != Cin:
        raise ValueError(f"conv3d channel mismatch: input has {C} channels, weight expects {Cin}")
    sd, sh, sw = _triple(stride)
    pd, ph, pw = _triple(padding)
    if min(sd, sh, sw) < 1:
        raise ValueError("conv3d stride must be >= 1")
    Do = (D + 2 * pd - kd) // sd + 1
    Ho = (H + 2 * ph - kh) // sh + 1
    Wo = (W + 2 * pw - kw) // sw + 1
    if min(Do, Ho, Wo) < 1:
        raise ValueError("conv3d kernel does not fit padded input")

    xp = np.pad(xd, ((0, 0), (0, 0), (pd, pd), (ph, ph), (pw, pw))) if (pd or ph or pw) else xd
    out_data = np.zeros((B, Cout, Do, Ho, Wo), dtype=xd.dtype)
    taps = [(a, i, j) for a in range(kd) for i in range(kh) for j in range(kw)]
    for a, i, j in taps:
        sl = xp[:, :, a:a + sd * Do:sd, i:i + sh * Ho:sh, j:j + sw * Wo:sw]
        out_data += np.tensordot(weight.data[:, :, a, i, j], sl,
                                 axes=([1], [1])).transpose(1, 0, 2, 3, 4)
    if bias is not None:
        out_data += bias.data.reshape(1, Cout, 1, 1, 1)
    if squeeze:
        out_data = out_data[0]

    parents = (x, weight) if bias is None else (x, weight, bias)

    def bw(out):
        def _run():
            go = out.grad[None] if squeeze else out.grad
            if bias is not None and bias.requires_grad:
                bias._accumulate(go.sum(axis=(0, 2, 3, 4)))
            if weight.requires_grad:
                dw = np.empty_like(weight.data)
                for a, i, j in taps:
                    sl = xp[:, :, a:a + sd * Do:sd, i:i + sh * Ho:sh, j:j + sw * Wo:sw]
                    dw[:, :, a, i, j] = np.tensordot(
                        go, sl, axes=([0, 2, 3, 4], [0, 2, 3, 4]))
                weight._accumulate(dw)
            if x.requires_grad:
                dxp = np.zeros_like(xp)
                for a, i, j in taps:
                    dxp[:, :, a:a + sd * Do:sd, i:i + sh * Ho:sh,
                        j:j + sw * Wo:sw] += np.tensordot(
                            weight.data[:, :, a, i, j], go,
                            axes=([0], [1])).transpose(1, 0, 2, 3, 4)
                dx = dxp[:, :, pd:pd + D, ph:ph + H, pw:pw + W] if (pd or ph or pw) else dxp
                x._accumulate(dx[0] if squeeze else dx)
        return _run

    return Tensor._result(out_data, parents, bw)


# ----------------------------------------------------------------------
# normalization
# ----------------------------------------------------------------------
def group_norm(x: Tensor, groups: int, weight: Tensor | None = None,
               bias: Tensor | None = None, eps: float = 1e-5, spatial_dims: int = 2):
    """Group normalization over [C,*spatial] or [B,C,*spatial].

    spatial_dims disambiguates batched from unbatched input (a 4D tensor is
    [B,C,H,W] for spatial_dims=2 but [C,D,H,W] for spatial_dims=3).
    """
    x = as_tensor(x)
    xd = x.data
    if xd.ndim == spatial_dims + 1:
        squeeze = True
    elif xd.ndim == spatial_dims + 2:
        squeeze = False
    else:
        raise ValueError(f"group_norm: rank-{xd.ndim} input with {spatial_dims} spatial dims")
    if squeeze:
        xd = xd[None]
    B, C = xd.shape[0], xd.shape[1]
    if C % groups != 0:
        raise ValueError(f"channel count {C} not divisible by {groups} groups")
    spatial = xd.shape[2:]
    m = (C // groups) * int(np.prod(spatial)) if spatial else C // groups

    xg = xd.reshape(B, groups, m)
    mu = xg.mean(axis=2, keepdims=True)
    var = xg.var(axis=2, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = ((xg - mu) * inv).reshape(xd.shape)

    out_data = xhat
    aff_shape = (1, C) + (1,) * len(spatial)
    if weight is not None:
        out_data = out_data * weight.data.reshape(aff_shape)
    if bias is not None:
        out_data = out_data + bias.data.reshape(aff_shape)
    if squeeze:
        out_data = out_data[0]

    parents = [x] + [p for p in (weight, bias) if p is not None]

    def bw(out):
        def _run():
            go = out.grad[None] if squeeze else out.grad
            reduce_axes = (0,) + tuple(range(2, go.ndim))
            if bias is not None and bias.requires_grad:
                bias._accumulate(go.sum(axis=reduce_axes))
            if weight is not None and weight.requires_grad:
                weight._accumulate((go * xhat).sum(axis=reduce_axes))
            if x.requires_grad:
                dxhat = go * weight.data.reshape(aff_shape) if weight is not None else go
                dg = dxhat.reshape(B, groups, m)
                xh = xhat.reshape(B, groups, m)
                mean_dg = dg.mean(axis=2, keepdims=True)
                mean_dgxh = (dg * xh).mean(axis=2, keepdims=True)
                dx = inv * (dg - mean_dg - xh * mean_dgxh)
                dx = dx.reshape(xd.shape)
                x._accumulate(dx[0] if squeeze else dx)
        return _run

    return Tensor._result(out_data, parents, bw)


# ----------------------------------------------------------------------
# resampling
# ----------------------------------------------------------------------
def upsample_nearest2d(x: Tensor, factor: int = 2):
    x = as_tensor(x)
    f = int(factor)
    y = np.repeat(np.repeat(x.data, f, axis=-2), f, axis=-1)
    def bw(out):
        def _run():
            if x.requires_grad:
                g = out.grad
                shape = g.shape[:-2] + (g.shape[-2] // f, f, g.shape[-1] // f, f)
                x._accumulate(g.reshape(shape).sum(axis=(-3, -1)))
        return _run
    return Tensor._result(y, (x,), bw)


def upsample_nearest3d(x: Tensor, factor: int = 2):
    x = as_tensor(x)
    f = int(factor)
    y = np.repeat(np.repeat(np.repeat(x.data, f, axis=-3), f, axis=-2), f, axis=-1)
    def bw(out):
        def _run():
            if x.requires_grad:
                g = out.grad
                shape = g.shape[:-3] + (g.shape[-3] // f, f, g.shape[-2] // f, f,
                                        g.shape[-1] // f, f)
                x._accumulate(g.reshape(shape).sum(axis=(-5, -3, -1)))
        return _run
    return Tensor._result(y, (x,), bw)


def _box_sum(a: np.ndarray, radius: int) -> np.ndarray:
    """Sum over a (2r+1)^2 window clipped at the borders; a is [..., H, W]."""
    H, W = a.shape[-2], a.shape[-1]
    c = np.zeros(a.shape[:-2] + (H + 1, W + 1), dtype=a.dtype)
    c[..., 1:, 1:] = a.cumsum(axis=-2).cumsum(axis=-1)
    ylo = np.clip(np.arange(H) - radius, 0, H)
    yhi = np.clip(np.arange(H) + radius + 1, 0, H)
    xlo = np.clip(np.arange(W) - radius, 0, W)
    xhi = np.clip(np.arange(W) + radius + 1, 0, W)
    return (c[..., yhi[:, None], xhi[None, :]] - c[..., ylo[:, None], xhi[None, :]]
            - c[..., yhi[:, None], xlo[None, :]] + c[..., ylo[:, None], xlo[None, :]])


def box_counts(shape_hw, radius: int, dtype=np.float64) -> np.ndarray:
    H, W = shape_hw
    ny = np.minimum(np.arange(H) + radius + 1, H) - np.maximum(np.arange(H) - radius, 0)
    nx = np.minimum(np.arange(W) + radius + 1, W) - np.maximum(np.arange(W) - radius, 0)
    return (ny[:, None] * nx[None, :]).astype(dtype)


def box_filter2d(x: Tensor, radius: int):
    """Mean filter over a clipped square window (the guided-filter box)."""
    x = as_tensor(x)
    if radius < 0:
        raise ValueError("radius must be >= 0")
    if radius == 0:
        return x * 1.0
    cnt = box_counts(x.shape[-2:], radius, dtype=x.dtype)
    y = _box_sum(x.data, radius) / cnt
    def bw(out):
        def _run():
            if x.requires_grad:
                x._accumulate(_box_sum(out.grad / cnt, radius))
        return _run
    return Tensor._result(y, (x,), bw)


def sample2d(map_t: Tensor, coords, out_of_bounds: str = "zero"):
    """Bilinear sampling of [C,H,W] at coords[...,2] given as (x, y) pixels.

    Differentiable w.r.t. the map and, when coords is a Tensor, w.r.t. the
    coordinates. Samples outside the image fade to zero ("zero") or clamp to
    the border ("clamp").
    """
    map_t = as_tensor(map_t)
    coords_t = coords if isinstance(coords, Tensor) else None
    cd = values(coords)
    if cd.shape[-1] != 2:
        raise ValueError("coords must have a trailing dimension of size 2")
    C, H, W = map_t.shape
    lead = cd.shape[:-1]
    u = cd[..., 0].reshape(-1)
    v = cd[..., 1].reshape(-1)
    if out_of_bounds == "clamp":
        u = np.clip(u, 0.0, W - 1.0)
        v = np.clip(v, 0.0, H - 1.0)
    x0 = np.floor(u).astype(np.int64)
    y0 = np.floor(v).astype(np.int64)
    fx = u - x0
    fy = v - y0

    corners = []
    for dy, dx, w in ((0, 0, (1 - fx) * (1 - fy)), (0, 1, fx * (1 - fy)),
                      (1, 0, (1 - fx) * fy), (1, 1, fx * fy)):
        xc = x0 + dx
        yc = y0 + dy
        ok = (xc >= 0) & (xc < W) & (yc >= 0) & (yc < H)
        idx = np.where(ok, yc * W + xc, 0)
        corners.append((idx, ok, w))

    flat = map_t.data.reshape(C, H * W)
    vals = [flat[:, idx] * ok for idx, ok, _ in corners]  # each [C,K]
    out_data = sum(v * w for v, (_, _, w) in zip(vals, corners))
    out_data = out_data.reshape((C,) + lead)

    parents = (map_t,) if coords_t is None else (map_t, coords_t)

    def bw(out):
        def _run():
            go = out.grad.reshape(C, -1)
            if map_t.requires_grad:
                dmap = np.zeros((C, H * W), dtype=map_t.dtype)
                for idx, ok, w in corners:
                    contrib = go * (w * ok)
                    for c in range(C):
                        dmap[c] += np.bincount(idx, weights=contrib[c], minlength=H * W)
                map_t._accumulate(dmap.reshape(map_t.shape))
            if coords_t is not None and coords_t.requires_grad:
                m00, m10, m01, m11 = vals
                dval_du = (m10 - m00) * (1 - fy) + (m11 - m01) * fy
                dval_dv = (m01 - m00) * (1 - fx) + (m11 - m10) * fx
                du = (go * dval_du).sum(axis=0)
                dv = (go * dval_dv).sum(axis=0)
                if out_of_bounds == "clamp":
                    inside_u = (u > 0) & (u < W - 1.0)
                    inside_v = (v > 0) & (v < H - 1.0)
                    du *= inside_u
                    dv *= inside_v
                g = np.stack([du, dv], axis=-1).reshape(cd.shape)
                coords_t._accumulate(g)
        return _run

    return Tensor._result(out_data, parents, bw)


# ----------------------------------------------------------------------
# optimizer
# ----------------------------------------------------------------------
@dataclass
class AdamState:
    """Per-parameter Adam moments and schedule."""

    m: np.ndarray
    v: np.ndarray
    step_count: int = 0
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_param(cls, param: Tensor, lr: float = 0.001, beta1: float = 0.9,
                  beta2: float = 0.999, epsilon: float = 1e-8) -> "AdamState":
        return cls(m=np.zeros_like(param.data), v=np.zeros_like(param.data),
                   lr=lr, beta1=beta1, beta2=beta2, epsilon=epsilon)


def adam_step(param: Tensor, state: AdamState):
    """One bias-corrected Adam update, applied in place; clears the gradient."""
    if param.grad is None:
        raise ValueError("adam_step: parameter has no gradient accumulator")
    if state.m.shape != param.data.shape:
        raise ValueError("adam_step: state shape does not match parameter")
    g = param.grad
    state.step_count += 1
    state.m *= state.beta1
    state.m += (1.0 - state.beta1) * g
    state.v *= state.beta2
    state.v += (1.0 - state.beta2) * (g * g)
    mhat = state.m / (1.0 - state.beta1 ** state.step_count)
    vhat = state.v / (1.0 - state.beta2 ** state.step_count)
    param.data -= state.lr * mhat / (np.sqrt(vhat) + state.epsilon)
    param.grad.fill(0.0)


class Adam:
    """Adam over a list of parameters, one AdamState each."""

    def __init__(self, params, lr=0.001, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.params = list(params)
        self.states = [AdamState.for_param(p, lr, beta1, beta2, epsilon) for p in self.params]

    def step(self):
        for p, s in zip(self.params, self.states):
            adam_step(p, s)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()
