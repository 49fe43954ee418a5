"""Differentiable operations used to assemble the networks.

All spatial ops are channels-last and stride-1; downsampling happens only
through max pooling and upsampling through nearest-neighbor repeat, which
is all the architectures here require. Convolutions use 'same' padding
with the asymmetric (floor, ceil) split for even kernel sizes.
"""

from __future__ import annotations

import numpy as np

from .. import kernels as K
from .tensor import Tensor


def _same_pad(k: int) -> tuple[int, int]:
    return ((k - 1) // 2, k // 2)


def constant(data: np.ndarray) -> Tensor:
    return Tensor(data)


# Patch matrices blow activations up by the kernel volume, so convolutions
# run over sample chunks and rebuild the patches during backward instead of
# caching them on the tape.
_COL_BUDGET_BYTES = 192 * 1024 * 1024


def _chunks(n: int, per_sample: int):
    step = max(1, _COL_BUDGET_BYTES // max(per_sample, 1))
    for lo in range(0, n, step):
        yield lo, min(lo + step, n)


# ---------------------------------------------------------------------------
# Convolutions
# ---------------------------------------------------------------------------

def conv2d(x: Tensor, w: Tensor, b: Tensor | None) -> Tensor:
    """2D convolution, 'same' padding. w: (kh, kw, cin, cout)."""
    kh, kw, cin, cout = w.data.shape
    n, h, wd, _ = x.data.shape
    (pt, pb), (pl, pr) = _same_pad(kh), _same_pad(kw)
    ksz = kh * kw * cin
    wm = w.data.reshape(ksz, cout)
    per_sample = h * wd * ksz * x.data.itemsize

    def pad(arr):
        return np.pad(arr, ((0, 0), (pt, pb), (pl, pr), (0, 0)))

    y = np.empty((n, h, wd, cout), dtype=x.data.dtype)
    xp = pad(x.data)
    for lo, hi in _chunks(n, per_sample):
        cols = K.im2col2d(xp[lo:hi], kh, kw).reshape(-1, ksz)
        yc = cols @ wm
        if b is not None:
            yc += b.data
        y[lo:hi] = yc.reshape(hi - lo, h, wd, cout)

    parents = (x, w) if b is None else (x, w, b)

    def bwd(dy):
        dw = np.zeros_like(wm)
        dx = np.empty_like(x.data)
        xpb = pad(x.data)
        for lo, hi in _chunks(n, per_sample):
            cols = K.im2col2d(xpb[lo:hi], kh, kw).reshape(-1, ksz)
            dyf = dy[lo:hi].reshape(-1, cout)
            dw += cols.T @ dyf
            dcols = dyf @ wm.T
            dxp = K.col2im2d(dcols, hi - lo, h + pt + pb, wd + pl + pr,
                             cin, kh, kw)
            dx[lo:hi] = dxp[:, pt:pt + h, pl:pl + wd, :]
        dwf = dw.reshape(w.data.shape)
        if b is None:
            return dx, dwf
        return dx, dwf, dy.reshape(-1, cout).sum(axis=0)

    return Tensor(y, parents, bwd)


def conv3d(x: Tensor, w: Tensor, b: Tensor | None) -> Tensor:
    """3D convolution, 'same' padding. w: (kh, kw, kd, cin, cout)."""
    kh, kw, kd, cin, cout = w.data.shape
    n, h, wd, d, _ = x.data.shape
    (pt, pb), (pl, pr), (pf, pk) = _same_pad(kh), _same_pad(kw), _same_pad(kd)
    ksz = kh * kw * kd * cin
    wm = w.data.reshape(ksz, cout)
    per_sample = h * wd * d * ksz * x.data.itemsize

    def pad(arr):
        return np.pad(arr, ((0, 0), (pt, pb), (pl, pr), (pf, pk), (0, 0)))

    y = np.empty((n, h, wd, d, cout), dtype=x.data.dtype)
    xp = pad(x.data)
    for lo, hi in _chunks(n, per_sample):
        cols = K.im2col3d(xp[lo:hi], kh, kw, kd).reshape(-1, ksz)
        yc = cols @ wm
        if b is not None:
            yc += b.data
        y[lo:hi] = yc.reshape(hi - lo, h, wd, d, cout)

    parents = (x, w) if b is None else (x, w, b)

    def bwd(dy):
        dw = np.zeros_like(wm)
        dx = np.empty_like(x.data)
        xpb = pad(x.data)
        for lo, hi in _chunks(n, per_sample):
            cols = K.im2col3d(xpb[lo:hi], kh, kw, kd).reshape(-1, ksz)
            dyf = dy[lo:hi].reshape(-1, cout)
            dw += cols.T @ dyf
            dcols = dyf @ wm.T
            dxp = K.col2im3d(dcols, hi - lo, h + pt + pb, wd + pl + pr,
                             d + pf + pk, cin, kh, kw, kd)
            dx[lo:hi] = dxp[:, pt:pt + h, pl:pl + wd, pf:pf + d, :]
        dwf = dw.reshape(w.data.shape)
        if b is None:
            return dx, dwf
        return dx, dwf, dy.reshape(-1, cout).sum(axis=0)

    return Tensor(y, parents, bwd)


def dense(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """(n, cin) @ (cin, cout)."""
    y = x.data @ w.data
    if b is not None:
        y = y + b.data
    parents = (x, w) if b is None else (x, w, b)

    def bwd(dy):
        dx = dy @ w.data.T
        dw = x.data.T @ dy
        if b is None:
            return dx, dw
        return dx, dw, dy.sum(axis=0)

    return Tensor(y, parents, bwd)


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------

def batchnorm_train(x: Tensor, gamma: Tensor, beta: Tensor, eps: float):
    """Batch stats normalization over all axes but the last.

    Returns (out, batch_mean, batch_var); the caller owns the running
    statistics update.
    """
    axes = tuple(range(x.data.ndim - 1))
    m = x.data.mean(axis=axes)
    v = x.data.var(axis=axes)
    inv = 1.0 / np.sqrt(v + eps)
    xhat = (x.data - m) * inv
    y = xhat * gamma.data + beta.data
    count = x.data.size // x.data.shape[-1]

    def bwd(dy):
        dgamma = (dy * xhat).sum(axis=axes)
        dbeta = dy.sum(axis=axes)
        dxhat = dy * gamma.data
        # classic fused batchnorm input gradient
        dx = (inv / count) * (
            count * dxhat
            - dxhat.sum(axis=axes)
            - xhat * (dxhat * xhat).sum(axis=axes)
        )
        return dx.astype(x.data.dtype), dgamma, dbeta

    return Tensor(y.astype(x.data.dtype), (x, gamma, beta), bwd), m, v


def batchnorm_eval(x: Tensor, gamma: Tensor, beta: Tensor,
                   mean: np.ndarray, var: np.ndarray, eps: float) -> Tensor:
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean) * inv
    y = xhat * gamma.data + beta.data
    axes = tuple(range(x.data.ndim - 1))

    def bwd(dy):
        dgamma = (dy * xhat).sum(axis=axes)
        dbeta = dy.sum(axis=axes)
        dx = dy * (gamma.data * inv)
        return dx.astype(x.data.dtype), dgamma, dbeta

    return Tensor(y.astype(x.data.dtype), (x, gamma, beta), bwd)


# ---------------------------------------------------------------------------
# Pooling / resampling
# ---------------------------------------------------------------------------

def maxpool2d(x: Tensor, fh: int = 2, fw: int = 2) -> Tensor:
    y, idx = K.maxpool2d_fwd(x.data, fh, fw)

    def bwd(dy):
        return (K.maxpool2d_bwd(dy, idx, fh, fw),)

    return Tensor(y, (x,), bwd)


def maxpool3d(x: Tensor, fh: int = 2, fw: int = 2, fd: int = 2) -> Tensor:
    y, idx = K.maxpool3d_fwd(x.data, fh, fw, fd)

    def bwd(dy):
        return (K.maxpool3d_bwd(dy, idx, fh, fw, fd),)

    return Tensor(y, (x,), bwd)


def upsample2d(x: Tensor, fh: int = 2, fw: int = 2) -> Tensor:
    """Nearest-neighbor upsampling by integer factors."""
    y = np.repeat(np.repeat(x.data, fh, axis=1), fw, axis=2)
    n, h, w, c = x.data.shape

    def bwd(dy):
        d = dy.reshape(n, h, fh, w, fw, c).sum(axis=(2, 4))
        return (d,)

    return Tensor(y, (x,), bwd)


def upsample3d(x: Tensor, fh: int = 2, fw: int = 2, fd: int = 2) -> Tensor:
    y = np.repeat(np.repeat(np.repeat(x.data, fh, axis=1), fw, axis=2), fd, axis=3)
    n, h, w, d, c = x.data.shape

    def bwd(dy):
        g = dy.reshape(n, h, fh, w, fw, d, fd, c).sum(axis=(2, 4, 6))
        return (g,)

    return Tensor(y, (x,), bwd)


# ---------------------------------------------------------------------------
# Pointwise / structural
# ---------------------------------------------------------------------------

def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    y = np.where(mask, x.data, 0)

    def bwd(dy):
        return (dy * mask,)

    return Tensor(y.astype(x.data.dtype), (x,), bwd)


def sigmoid(x: Tensor) -> Tensor:
    z = np.exp(-np.abs(x.data))
    y = np.where(x.data >= 0, 1.0 / (1.0 + z), z / (1.0 + z))

    def bwd(dy):
        return ((dy * y * (1.0 - y)).astype(x.data.dtype),)

    return Tensor(y.astype(x.data.dtype), (x,), bwd)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError(f"add shape mismatch: {a.data.shape} vs {b.data.shape}")

    def bwd(dy):
        return dy, dy

    return Tensor(a.data + b.data, (a, b), bwd)


def concat(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate along the channel (last) axis."""
    ca = a.data.shape[-1]

    def bwd(dy):
        return dy[..., :ca], dy[..., ca:]

    return Tensor(np.concatenate([a.data, b.data], axis=-1), (a, b), bwd)


def scale_channels(x: Tensor, g: Tensor) -> Tensor:
    """Multiply (n, ..., c) by per-sample channel gates g: (n, c)."""
    n, c = g.data.shape
    gshape = (n,) + (1,) * (x.data.ndim - 2) + (c,)
    gb = g.data.reshape(gshape)
    y = x.data * gb
    axes = tuple(range(1, x.data.ndim - 1))

    def bwd(dy):
        dx = dy * gb
        dg = (dy * x.data).sum(axis=axes)
        return dx, dg

    return Tensor(y, (x, g), bwd)


def global_avg_pool2d(x: Tensor) -> Tensor:
    n, h, w, c = x.data.shape
    y = x.data.mean(axis=(1, 2))

    def bwd(dy):
        return (np.broadcast_to(dy[:, None, None, :] / (h * w), x.data.shape).astype(x.data.dtype),)

    return Tensor(y, (x,), bwd)


def squeeze_last(x: Tensor) -> Tensor:
    """(n, h, w, d, 1) -> (n, h, w, d): depth becomes the channel axis."""
    if x.data.shape[-1] != 1:
        raise ValueError("squeeze_last expects a trailing singleton axis")
    shape = x.data.shape

    def bwd(dy):
        return (dy.reshape(shape),)

    return Tensor(x.data.reshape(shape[:-1]), (x,), bwd)


def expand_last(x: Tensor) -> Tensor:
    """(n, h, w, d) -> (n, h, w, d, 1)."""
    shape = x.data.shape

    def bwd(dy):
        return (dy.reshape(shape),)

    return Tensor(x.data.reshape(shape + (1,)), (x,), bwd)


def dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; identity when rate == 0."""
    if rate <= 0.0:
        return x
    keep = 1.0 - rate
    mask = (rng.random(x.data.shape) < keep).astype(x.data.dtype) / keep

    def bwd(dy):
        return (dy * mask,)

    return Tensor(x.data * mask, (x,), bwd)
