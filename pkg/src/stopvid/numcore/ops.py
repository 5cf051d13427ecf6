"""Differentiable operations.

Every op takes and returns :class:`Tensor` and registers its local backward
rule on the active tape. Broadcasting is limited to tensor-with-scalar;
callers broadcast constants explicitly.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from scipy.special import erf

from .tensor import ConfigError, DimensionError, Tensor, as_tensor, make_result

_SQRT_HALF = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _same_shape(a: Tensor, b: Tensor, name: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{name}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------- elementwise

def add(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor) or b.ndim == 0:
        c = b.data if isinstance(b, Tensor) else float(b)
        if isinstance(b, Tensor) and b.tracked:
            return make_result(a.data + c, (a, b), lambda g: (g, np.sum(g)))
        return make_result(a.data + c, (a,), lambda g: (g,))
    _same_shape(a, b, "add")
    return make_result(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor) or b.ndim == 0:
        return add(a, -(b.data if isinstance(b, Tensor) else float(b)))
    _same_shape(a, b, "sub")
    return make_result(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    if not isinstance(b, Tensor):
        return scale(a, float(b))
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return make_result(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    return make_result(a.data * s, (a,), lambda g: (g * s,))


def elementwise(a: Tensor, b, op: str) -> Tensor:
    if op == "add":
        return add(a, b)
    if op == "sub":
        return sub(a, b)
    if op == "mul":
        return mul(a, b)
    if op == "scale":
        return scale(a, float(b.data if isinstance(b, Tensor) else b))
    raise ValueError(f"unknown elementwise op {op!r}")


def square(a: Tensor) -> Tensor:
    ad = a.data
    return make_result(ad * ad, (a,), lambda g: (2.0 * ad * g,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return make_result(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    ad = a.data
    return make_result(np.log(ad), (a,), lambda g: (g / ad,))


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, x * Phi(x)."""
    xd = x.data
    cdf = 0.5 * (1.0 + erf(xd * _SQRT_HALF))

    def back(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * xd * xd)
        return (g * (cdf + xd * pdf),)

    return make_result(xd * cdf, (x,), back)


# ---------------------------------------------------------------- shape ops

def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    old = a.shape
    return make_result(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return make_result(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def swap_last(a: Tensor) -> Tensor:
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, axes)


def getitem(a: Tensor, index) -> Tensor:
    shape = a.shape

    def back(g):
        full = np.zeros(shape)
        np.add.at(full, index, g) if _is_fancy(index) else full.__setitem__(index, g)
        return (full,)

    return make_result(np.array(a.data[index]), (a,), back)


def _is_fancy(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise DimensionError("concat of an empty list")
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=axis))

    return make_result(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), back)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    n = len(tensors)

    def back(g):
        return tuple(np.take(g, i, axis=axis) for i in range(n))

    return make_result(np.stack([t.data for t in tensors], axis=axis), tuple(tensors), back)


# ---------------------------------------------------------------- reductions

def sum(a: Tensor, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy
    shape = a.shape

    def back(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return make_result(np.sum(a.data, axis=axis), (a,), back)


def mean(a: Tensor, axis=None) -> Tensor:
    if axis is None:
        n = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([a.shape[i] for i in axes]))
    return scale(sum(a, axis), 1.0 / n)


# ---------------------------------------------------------------- linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product. 2-D operands, or stacks of matrices with equal leading extents."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2] or a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def back(g):
        return g @ np.swapaxes(bd, -1, -2), np.swapaxes(ad, -1, -2) @ g

    return make_result(ad @ bd, (a, b), back)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x[..., k] @ w[k, n] (+ b[n])."""
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise DimensionError(f"linear: incompatible shapes {x.shape} and {w.shape}")
    if b is not None and b.shape != (w.shape[1],):
        raise DimensionError(f"linear: bias shape {b.shape} does not match {w.shape}")
    xd, wd = x.data, w.data
    out = xd @ wd
    if b is not None:
        out = out + b.data

    def back(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = g @ wd.T
        gw = xd.reshape(-1, xd.shape[-1]).T @ g2
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    inputs = (x, w) if b is None else (x, w, b)
    return make_result(out, inputs, back)


def add_rowwise(x: Tensor, v: Tensor) -> Tensor:
    """x[..., n] + v[n], with the gradient of v summed over leading axes."""
    if x.shape[-1:] != v.shape:
        raise DimensionError(f"add_rowwise: {x.shape} vs {v.shape}")
    n = v.shape[0]
    return make_result(x.data + v.data, (x, v), lambda g: (g, g.reshape(-1, n).sum(axis=0)))


# ---------------------------------------------------------------- normalization

def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"softmax: axis {axis} out of range for rank {x.ndim}")
    z = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / np.sum(e, axis=axis, keepdims=True)

    def back(g):
        return (y * (g - np.sum(g * y, axis=axis, keepdims=True)),)

    return make_result(y, (x,), back)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - np.max(x.data, axis=axis, keepdims=True)
    lse = np.log(np.sum(np.exp(z), axis=axis, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def back(g):
        return (g - p * np.sum(g, axis=axis, keepdims=True),)

    return make_result(out, (x,), back)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(f"layer_norm: last extent {d} vs gain {gain.shape}, bias {bias.shape}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    gd = gain.data

    def back(g):
        dxhat = g * gd
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        g2 = g.reshape(-1, d)
        return dx, (g2 * xhat.reshape(-1, d)).sum(axis=0), g2.sum(axis=0)

    return make_result(xhat * gd + bias.data, (x, gain, bias), back)


def l2_normalize(x: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    """x / (||x|| + eps) along ``axis``."""
    xd = x.data
    norm = np.sqrt(np.sum(xd * xd, axis=axis, keepdims=True))
    den = norm + eps
    y = xd / den

    def back(g):
        # d/dx [x / (|x| + eps)] = g/den - x (x.g) / (|x| den^2)
        dot = np.sum(g * xd, axis=axis, keepdims=True)
        safe = np.where(norm > 0, norm, 1.0)
        return (g / den - xd * dot / (safe * den * den),)

    return make_result(y, (x,), back)


# ---------------------------------------------------------------- convolution

def conv3d(x: Tensor, weights: Tensor, bias: Tensor, channels_last: bool = False) -> Tensor:
    """Same-padded 3-D cross-correlation.

    ``x`` is [C, T, H, W] (or [T, H, W, C] with ``channels_last``), optionally
    with a leading batch axis. ``weights`` is [C_out, C, kt, kh, kw] with odd
    kernel extents; zero padding keeps T, H, W unchanged.
    """
    if weights.ndim != 5:
        raise DimensionError(f"conv3d: weights must be rank 5, got {weights.shape}")
    c_out, c_in, kt, kh, kw = weights.shape
    if kt % 2 == 0 or kh % 2 == 0 or kw % 2 == 0:
        raise ConfigError(f"conv3d: kernel extents must be odd, got {(kt, kh, kw)}")
    if bias.shape != (c_out,):
        raise DimensionError(f"conv3d: bias shape {bias.shape} vs {c_out} output channels")
    if x.ndim not in (4, 5):
        raise DimensionError(f"conv3d: input must be rank 4 or 5, got {x.shape}")

    batched = x.ndim == 5
    xd = x.data if batched else x.data[None]
    if not channels_last:
        xd = np.moveaxis(xd, 1, -1)
    if xd.shape[-1] != c_in:
        raise DimensionError(f"conv3d: input has {xd.shape[-1]} channels, weights expect {c_in}")
    nb, t, hh, ww, _ = xd.shape
    pt, ph, pw = kt // 2, kh // 2, kw // 2
    xp = np.pad(xd, ((0, 0), (pt, pt), (ph, ph), (pw, pw), (0, 0)))
    wd = weights.data
    # [kt, kh, kw, C_in, C_out], contiguous per offset for fast BLAS
    wk = np.ascontiguousarray(wd.transpose(2, 3, 4, 1, 0))
    offsets = [(a, b, c) for a in range(kt) for b in range(kh) for c in range(kw)]

    n_pos = nb * t * hh * ww

    def window(a, b, c):
        return np.ascontiguousarray(xp[:, a:a + t, b:b + hh, c:c + ww, :]).reshape(n_pos, c_in)

    out = np.zeros((n_pos, c_out))
    out += bias.data
    for a, b, c in offsets:
        out += window(a, b, c) @ wk[a, b, c]
    out = out.reshape(nb, t, hh, ww, c_out)

    def back(g):
        gl = g if batched else g[None]
        if not channels_last:
            gl = np.moveaxis(gl, 1, -1)
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(wd)
        g2 = np.ascontiguousarray(gl).reshape(n_pos, c_out)
        for a, b, c in offsets:
            gxp[:, a:a + t, b:b + hh, c:c + ww, :] += (g2 @ wk[a, b, c].T).reshape(nb, t, hh, ww, c_in)
            gw[:, :, a, b, c] = g2.T @ window(a, b, c)
        gx = gxp[:, pt:pt + t, ph:ph + hh, pw:pw + ww, :]
        if not channels_last:
            gx = np.moveaxis(gx, -1, 1)
        if not batched:
            gx = gx[0]
        return np.ascontiguousarray(gx), gw, g2.sum(axis=0)

    if not channels_last:
        out = np.moveaxis(out, -1, 1)
    if not batched:
        out = out[0]
    return make_result(np.ascontiguousarray(out), (x, weights, bias), back)
