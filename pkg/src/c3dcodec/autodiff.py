"""Reverse-mode automatic differentiation over the numpy kernels.

A ``Var`` wraps an ndarray and remembers how it was produced; calling
``backward()`` on a scalar Var accumulates gradients into every upstream
Var created with ``requires_grad=True``.

Every function in this module is polymorphic: given plain ndarrays it
computes with numpy directly and returns an ndarray, given at least one
Var it records a tape node. Rate and distortion formulas are therefore
written once and shared between the codec path (arrays) and the training
path (Vars).
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit, ndtr

from . import kernels

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)
_LN2 = float(np.log(2.0))


class NondifferentiableError(RuntimeError):
    """Raised when a gradient is requested through a hard-rounding op."""


class Var:
    __slots__ = ("value", "grad", "_parents", "_vjp", "requires_grad")

    def __init__(self, value, parents=(), vjp=None, requires_grad=False):
        self.value = np.asarray(value)
        self._parents = tuple(parents)
        self._vjp = vjp
        self.requires_grad = requires_grad or any(p.requires_grad for p in self._parents)
        self.grad = None

    @property
    def shape(self):
        return self.value.shape

    def backward(self):
        if self.value.ndim != 0 and self.value.size != 1:
            raise ValueError("backward() requires a scalar output")
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))
        self.grad = np.ones_like(self.value)
        for node in reversed(topo):
            if node._vjp is None or node.grad is None:
                continue
            for parent, g in zip(node._parents, node._vjp(node.grad)):
                if g is None or not parent.requires_grad:
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g

    # arithmetic sugar
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
        return mul(self, -1.0)

    def __getitem__(self, idx):
        return getitem(self, idx)


def value_of(x):
    return x.value if isinstance(x, Var) else np.asarray(x)


def _any_var(*xs):
    return any(isinstance(x, Var) for x in xs)


def _as_var(x):
    return x if isinstance(x, Var) else Var(np.asarray(x))


def _unbroadcast(g, shape):
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, (gd, sd) in enumerate(zip(g.shape, shape)):
        if sd == 1 and gd != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def parameter(value) -> Var:
    return Var(np.asarray(value), requires_grad=True)


def stop_grad(x):
    return Var(value_of(x)) if isinstance(x, Var) else np.asarray(x)


def add(a, b):
    if not _any_var(a, b):
        return value_of(a) + value_of(b)
    av, bv = value_of(a), value_of(b)
    return Var(av + bv, (_as_var(a), _as_var(b)),
               lambda g: (_unbroadcast(g, av.shape), _unbroadcast(g, bv.shape)))


def sub(a, b):
    if not _any_var(a, b):
        return value_of(a) - value_of(b)
    av, bv = value_of(a), value_of(b)
    return Var(av - bv, (_as_var(a), _as_var(b)),
               lambda g: (_unbroadcast(g, av.shape), _unbroadcast(-g, bv.shape)))


def mul(a, b):
    if not _any_var(a, b):
        return value_of(a) * value_of(b)
    av, bv = value_of(a), value_of(b)
    return Var(av * bv, (_as_var(a), _as_var(b)),
               lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))


def div(a, b):
    if not _any_var(a, b):
        return value_of(a) / value_of(b)
    av, bv = value_of(a), value_of(b)
    return Var(av / bv, (_as_var(a), _as_var(b)),
               lambda g: (_unbroadcast(g / bv, av.shape),
                          _unbroadcast(-g * av / (bv * bv), bv.shape)))


def exp(x):
    if not _any_var(x):
        return np.exp(value_of(x))
    out = np.exp(x.value)
    return Var(out, (x,), lambda g: (g * out,))


def log(x):
    if not _any_var(x):
        return np.log(value_of(x))
    return Var(np.log(x.value), (x,), lambda g: (g / x.value,))


def log2(x):
    if not _any_var(x):
        return np.log2(value_of(x))
    return Var(np.log2(x.value), (x,), lambda g: (g / (x.value * _LN2),))


def pow_const(x, p):
    if not _any_var(x):
        return np.power(value_of(x), p)
    xv = x.value
    return Var(np.power(xv, p), (x,), lambda g: (g * p * np.power(xv, p - 1.0),))


def maximum(x, floor):
    """max(x, floor) with gradient passing where x >= floor. floor is constant."""
    fv = np.asarray(floor)
    if not _any_var(x):
        return np.maximum(value_of(x), fv)
    xv = x.value
    mask = xv >= fv
    return Var(np.maximum(xv, fv), (x,), lambda g: (g * mask,))


def relu(x):
    return maximum(x, 0.0)


def clamp(x, lo, hi):
    if not _any_var(x):
        return np.clip(value_of(x), lo, hi)
    xv = x.value
    mask = (xv >= lo) & (xv <= hi)
    return Var(np.clip(xv, lo, hi), (x,), lambda g: (g * mask,))


def leaky_relu(x, slope):
    if not _any_var(x):
        return kernels.leaky_relu(value_of(x), slope)
    out = kernels.leaky_relu(x.value, slope)
    mask = np.where(x.value >= 0, np.asarray(1.0, x.value.dtype),
                    np.asarray(slope, x.value.dtype))
    return Var(out, (x,), lambda g: (g * mask,))


def softplus(x):
    if not _any_var(x):
        return np.logaddexp(np.asarray(0.0, dtype=value_of(x).dtype), value_of(x))
    xv = x.value
    out = np.logaddexp(np.asarray(0.0, dtype=xv.dtype), xv)
    return Var(out, (x,), lambda g: (g * expit(xv),))


def normal_cdf(x):
    """Standard normal CDF (abs error <= 1e-7 vs a high-precision oracle)."""
    if not _any_var(x):
        return ndtr(value_of(x))
    xv = x.value
    pdf = np.exp(-0.5 * xv * xv) * _INV_SQRT_2PI
    return Var(ndtr(xv), (x,), lambda g: (g * pdf,))


def blend(mask, a, b):
    """where(mask, a, b); mask is a constant boolean array."""
    mask = np.asarray(mask)
    if not _any_var(a, b):
        return np.where(mask, value_of(a), value_of(b))
    av, bv = value_of(a), value_of(b)
    out = np.where(mask, av, bv)
    return Var(out, (_as_var(a), _as_var(b)),
               lambda g: (_unbroadcast(g * mask, av.shape),
                          _unbroadcast(g * ~mask, bv.shape)))


def sum_all(x, axis=None, keepdims=False):
    if not _any_var(x):
        return np.sum(value_of(x), axis=axis, keepdims=keepdims)
    xv = x.value

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, xv.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, xv.shape).copy(),)

    return Var(np.sum(xv, axis=axis, keepdims=keepdims), (x,), vjp)


def mean(x, axis=None, keepdims=False):
    xv = value_of(x)
    if axis is None:
        n = xv.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = 1
        for ax in axes:
            n *= xv.shape[ax]
    return div(sum_all(x, axis=axis, keepdims=keepdims), float(n))


def reshape(x, shape):
    if not _any_var(x):
        return value_of(x).reshape(shape)
    orig = x.value.shape
    return Var(x.value.reshape(shape), (x,), lambda g: (g.reshape(orig),))


def moveaxis(x, src, dst):
    if not _any_var(x):
        return np.moveaxis(value_of(x), src, dst)
    return Var(np.moveaxis(x.value, src, dst), (x,),
               lambda g: (np.moveaxis(g, dst, src),))


def getitem(x, idx):
    if not _any_var(x):
        return value_of(x)[idx]
    xv = x.value

    def vjp(g):
        gx = np.zeros_like(xv)
        gx[idx] = g
        return (gx,)

    return Var(xv[idx], (x,), vjp)


def concat(parts, axis=0):
    if not _any_var(*parts):
        return np.concatenate([value_of(p) for p in parts], axis=axis)
    vals = [value_of(p) for p in parts]
    sizes = [v.shape[axis] for v in vals]
    splits = np.cumsum(sizes)[:-1]
    return Var(np.concatenate(vals, axis=axis), tuple(_as_var(p) for p in parts),
               lambda g: tuple(np.split(g, splits, axis=axis)))


def broadcast_to(x, shape):
    if not _any_var(x):
        return np.broadcast_to(value_of(x), shape)
    orig = x.value.shape
    return Var(np.broadcast_to(x.value, shape).copy(), (x,),
               lambda g: (_unbroadcast(g, orig),))


def conv2d(x, kernel, bias, stride, pad):
    """Differentiable wrapper over kernels.conv2d_raw (x, kernel, bias)."""
    if not _any_var(x, kernel, bias):
        return kernels.conv2d_raw(value_of(x), value_of(kernel), value_of(bias), stride, pad)
    xv, kv, bv = value_of(x), value_of(kernel), value_of(bias)
    out = kernels.conv2d_raw(xv, kv, bv, stride, pad)
    out_ch, in_ch, kh, kw = kv.shape
    c, h, w = xv.shape
    ho, wo = out.shape[1], out.shape[2]
    xp = np.zeros((c, h + 2 * pad, w + 2 * pad), dtype=xv.dtype)
    xp[:, pad:pad + h, pad:pad + w] = xv

    def vjp(g):
        gb = g.sum(axis=(1, 2))
        gk = np.zeros_like(kv)
        gxp = np.zeros_like(xp)
        for ci in range(in_ch):
            for u in range(kh):
                for v in range(kw):
                    rows = slice(u, u + stride * (ho - 1) + 1, stride)
                    cols = slice(v, v + stride * (wo - 1) + 1, stride)
                    patch = xp[ci, rows, cols]
                    gk[:, ci, u, v] = (g * patch[None, :, :]).sum(axis=(1, 2))
                    gxp[ci, rows, cols] += (kv[:, ci, u, v][:, None, None] * g).sum(axis=0)
        gx = gxp[:, pad:pad + h, pad:pad + w]
        return gx, gk, gb

    return Var(out, (_as_var(x), _as_var(kernel), _as_var(bias)), vjp)


def transposed_conv2d(x, kernel, bias, stride, pad):
    if not _any_var(x, kernel, bias):
        return kernels.transposed_conv2d_raw(value_of(x), value_of(kernel),
                                             value_of(bias), stride, pad)
    xv, kv, bv = value_of(x), value_of(kernel), value_of(bias)
    out = kernels.transposed_conv2d_raw(xv, kv, bv, stride, pad)
    out_ch, in_ch, kh, kw = kv.shape
    c, h, w = xv.shape
    ho, wo = out.shape[1], out.shape[2]

    def vjp(g):
        gb = g.sum(axis=(1, 2))
        gk = np.zeros_like(kv)
        gx = np.zeros_like(xv)
        for ci in range(in_ch):
            for u in range(kh):
                for v in range(kw):
                    ro, co_ = u - pad, v - pad
                    i0 = (-ro + 1) // 2 if ro < 0 else 0
                    i1 = min(h - 1, (ho - 1 - ro) // 2)
                    j0 = (-co_ + 1) // 2 if co_ < 0 else 0
                    j1 = min(w - 1, (wo - 1 - co_) // 2)
                    if i0 > i1 or j0 > j1:
                        continue
                    gpatch = g[:, ro + 2 * i0:ro + 2 * i1 + 1:2,
                               co_ + 2 * j0:co_ + 2 * j1 + 1:2]
                    gk[:, ci, u, v] = (gpatch * xv[ci, i0:i1 + 1, j0:j1 + 1][None]).sum(axis=(1, 2))
                    gx[ci, i0:i1 + 1, j0:j1 + 1] += (kv[:, ci, u, v][:, None, None] * gpatch).sum(axis=0)
        return gx, gk, gb

    return Var(out, (_as_var(x), _as_var(kernel), _as_var(bias)), vjp)


def quantize_round(x):
    """Hard rounding; differentiating through it is rejected."""
    if isinstance(x, Var) and x.requires_grad:
        raise NondifferentiableError(
            "quantize_round is not differentiable; train with add_uniform_noise instead"
        )
    return kernels.quantize_round(value_of(x))


def grad_check(f, x, eps=1e-4):
    """Max relative error between reverse-mode and central differences.

    ``f`` maps a Var to a scalar Var. Differences are evaluated in
    float64 regardless of the input dtype. eps must lie in [1e-4, 1e-2].
    """
    if not 1e-4 <= eps <= 1e-2:
        raise ValueError(f"eps must be in [1e-4, 1e-2], got {eps}")
    x64 = np.asarray(value_of(x), dtype=np.float64)
    v = Var(x64.copy(), requires_grad=True)
    out = f(v)
    out.backward()
    analytic = v.grad if v.grad is not None else np.zeros_like(x64)
    fd = np.zeros_like(x64)
    flat = fd.ravel()
    for i in range(x64.size):
        xp = x64.copy()
        xp.flat[i] += eps
        fp = float(value_of(f(Var(xp))))
        xm = x64.copy()
        xm.flat[i] -= eps
        fm = float(value_of(f(Var(xm))))
        flat[i] = (fp - fm) / (2.0 * eps)
    denom = np.maximum(1.0, np.abs(analytic))
    return float(np.max(np.abs(analytic - fd) / denom))
