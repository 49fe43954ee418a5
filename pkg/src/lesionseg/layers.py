"""Network building blocks.

Layers hold their parameter arrays (wrapped once in persistent tape
tensors so gradients can be collected by name) and compose the
differentiable ops in :mod:`lesionseg.engine.ops`. Weight layers use
He-normal initialization; batch normalization follows the epsilon-1e-3 /
momentum-0.99 convention and tracks moving statistics as non-trainable
buffers, which the parameter counts include.
"""

from __future__ import annotations

import numpy as np

from .engine import ops
from .engine.tensor import Tensor


class Ctx:
    """Per-forward context: mode, randomness, and optional recording."""

    def __init__(self, training: bool = False,
                 rng: np.random.Generator | None = None,
                 trace: dict | None = None,
                 capture: dict | None = None):
        self.training = training
        self.rng = rng
        self.trace = trace
        self.capture = capture

    def record(self, name: str, t: Tensor) -> None:
        if self.trace is not None:
            self.trace[name] = tuple(t.data.shape[1:])
        if self.capture is not None:
            self.capture[name] = t.data.copy()


def he_normal(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    std = np.sqrt(2.0 / fan_in)
    return (rng.standard_normal(shape) * std).astype(dtype)


class Module:
    """Base with explicit parameter / buffer / child registries."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._buffers: dict[str, np.ndarray] = {}
        self._children: dict[str, "Module"] = {}

    def add_param(self, name: str, arr: np.ndarray) -> Tensor:
        t = Tensor(arr)
        self._params[name] = t
        return t

    def add_buffer(self, name: str, arr: np.ndarray) -> np.ndarray:
        self._buffers[name] = arr
        return arr

    def add_child(self, name: str, child: "Module") -> "Module":
        self._children[name] = child
        return child

    def param_tensors(self, prefix: str = ""):
        """Yield (path, Tensor) for every trainable parameter."""
        for name, t in self._params.items():
            yield prefix + name, t
        for cname, child in self._children.items():
            yield from child.param_tensors(prefix + cname + "/")

    def param_items(self, prefix: str = ""):
        for name, t in self.param_tensors(prefix):
            yield name, t.data

    def buffer_items(self, prefix: str = ""):
        for name, arr in self._buffers.items():
            yield prefix + name, arr
        for cname, child in self._children.items():
            yield from child.buffer_items(prefix + cname + "/")

    def set_param(self, path: str, value: np.ndarray) -> None:
        head, _, rest = path.partition("/")
        if rest:
            self._children[head].set_param(rest, value)
        else:
            arr = self._params[path].data
            if arr.shape != value.shape:
                raise ValueError(
                    f"parameter {path!r} has shape {arr.shape}, got {value.shape}"
                )
            arr[...] = value.astype(arr.dtype)

    def set_buffer(self, path: str, value: np.ndarray) -> None:
        head, _, rest = path.partition("/")
        if rest:
            self._children[head].set_buffer(rest, value)
        else:
            self._buffers[path][...] = value.astype(self._buffers[path].dtype)


class Conv2D(Module):
    def __init__(self, kh, kw, cin, cout, rng, dtype=np.float32, bias=True):
        super().__init__()
        self.w = self.add_param(
            "w", he_normal(rng, (kh, kw, cin, cout), kh * kw * cin, dtype))
        self.b = self.add_param("b", np.zeros(cout, dtype)) if bias else None

    def __call__(self, x: Tensor, ctx: Ctx) -> Tensor:
        return ops.conv2d(x, self.w, self.b)


class Conv3D(Module):
    def __init__(self, kh, kw, kd, cin, cout, rng, dtype=np.float32, bias=True):
        super().__init__()
        self.w = self.add_param(
            "w", he_normal(rng, (kh, kw, kd, cin, cout), kh * kw * kd * cin, dtype))
        self.b = self.add_param("b", np.zeros(cout, dtype)) if bias else None

    def __call__(self, x: Tensor, ctx: Ctx) -> Tensor:
        return ops.conv3d(x, self.w, self.b)


class Dense(Module):
    def __init__(self, cin, cout, rng, dtype=np.float32, bias=True):
        super().__init__()
        self.w = self.add_param("w", he_normal(rng, (cin, cout), cin, dtype))
        self.b = self.add_param("b", np.zeros(cout, dtype)) if bias else None

    def __call__(self, x: Tensor, ctx: Ctx) -> Tensor:
        return ops.dense(x, self.w, self.b)


class BatchNorm(Module):
    def __init__(self, c, dtype=np.float32, eps=1e-3, momentum=0.99):
        super().__init__()
        self.eps = eps
        self.momentum = momentum
        self.gamma = self.add_param("gamma", np.ones(c, dtype))
        self.beta = self.add_param("beta", np.zeros(c, dtype))
        self.add_buffer("moving_mean", np.zeros(c, dtype))
        self.add_buffer("moving_var", np.ones(c, dtype))

    def __call__(self, x: Tensor, ctx: Ctx) -> Tensor:
        if ctx.training:
            y, m, v = ops.batchnorm_train(x, self.gamma, self.beta, self.eps)
            mm = self._buffers["moving_mean"]
            mv = self._buffers["moving_var"]
            mm *= self.momentum
            mm += (1.0 - self.momentum) * m.astype(mm.dtype)
            mv *= self.momentum
            mv += (1.0 - self.momentum) * v.astype(mv.dtype)
            return y
        return ops.batchnorm_eval(x, self.gamma, self.beta,
                                  self._buffers["moving_mean"],
                                  self._buffers["moving_var"], self.eps)


class Dropout(Module):
    def __init__(self, rate: float):
        super().__init__()
        self.rate = rate

    def __call__(self, x: Tensor, ctx: Ctx) -> Tensor:
        if not ctx.training or self.rate <= 0.0:
            return x
        if ctx.rng is None:
            raise RuntimeError("training-mode dropout needs ctx.rng")
        return ops.dropout(x, self.rate, ctx.rng)


class ConvBlock2D(Module):
    """Two (3x3 conv -> [BN] -> ReLU) stages."""

    def __init__(self, cin, filters, rng, dtype=np.float32, with_bn=True):
        super().__init__()
        self.with_bn = with_bn
        self.conv1 = self.add_child("conv1", Conv2D(3, 3, cin, filters, rng, dtype))
        self.conv2 = self.add_child("conv2", Conv2D(3, 3, filters, filters, rng, dtype))
        if with_bn:
            self.bn1 = self.add_child("bn1", BatchNorm(filters, dtype))
            self.bn2 = self.add_child("bn2", BatchNorm(filters, dtype))

    def __call__(self, x: Tensor, ctx: Ctx) -> Tensor:
        x = self.conv1(x, ctx)
        if self.with_bn:
            x = self.bn1(x, ctx)
        x = ops.relu(x)
        x = self.conv2(x, ctx)
        if self.with_bn:
            x = self.bn2(x, ctx)
        return ops.relu(x)


class ConvBlock3D(Module):
    """Two (3x3x3 conv -> [BN] -> ReLU) stages."""

    def __init__(self, cin, filters, rng, dtype=np.float32, with_bn=True):
        super().__init__()
        self.with_bn = with_bn
        self.conv1 = self.add_child("conv1", Conv3D(3, 3, 3, cin, filters, rng, dtype))
        self.conv2 = self.add_child("conv2", Conv3D(3, 3, 3, filters, filters, rng, dtype))
        if with_bn:
            self.bn1 = self.add_child("bn1", BatchNorm(filters, dtype))
            self.bn2 = self.add_child("bn2", BatchNorm(filters, dtype))

    def __call__(self, x: Tensor, ctx: Ctx) -> Tensor:
        x = self.conv1(x, ctx)
        if self.with_bn:
            x = self.bn1(x, ctx)
        x = ops.relu(x)
        x = self.conv2(x, ctx)
        if self.with_bn:
            x = self.bn2(x, ctx)
        return ops.relu(x)


class SEBlock(Module):
    """Squeeze-and-excite channel gating on (n, h, w, c) maps.

    Global average per channel, bias-free bottleneck c -> c/r -> c, and a
    sigmoid gate rescaling each channel, so the gated output never exceeds
    the input in magnitude.
    """

    def __init__(self, c, r, rng, dtype=np.float32):
        super().__init__()
        if c % r != 0:
            raise ValueError(f"channels {c} not divisible by reduction ratio {r}")
        self.squeeze = self.add_child("squeeze", Dense(c, c // r, rng, dtype, bias=False))
        self.excite = self.add_child("excite", Dense(c // r, c, rng, dtype, bias=False))

    def __call__(self, x: Tensor, ctx: Ctx) -> Tensor:
        s = ops.global_avg_pool2d(x)
        s = ops.relu(self.squeeze(s, ctx))
        g = ops.sigmoid(self.excite(s, ctx))
        return ops.scale_channels(x, g)


class DimensionTransform(Module):
    """Fold a (n, h, w, d, c) volume feature into the 2D stream.

    The volume is squashed to one channel with a 1x1x1 convolution, its
    depth axis is reinterpreted as channels, and a 3x3 convolution restores
    c channels. Fusion then adds the result to the 2D map, optionally
    gating both addends with separate SE blocks first.
    """

    def __init__(self, depth, c, rng, dtype=np.float32, use_se=False, r=16):
        super().__init__()
        self.use_se = use_se
        self.compress = self.add_child("compress", Conv3D(1, 1, 1, c, 1, rng, dtype))
        self.restore = self.add_child("restore", Conv2D(3, 3, depth, c, rng, dtype))
        if use_se:
            self.se_volume = self.add_child("se_volume", SEBlock(c, r, rng, dtype))
            self.se_plane = self.add_child("se_plane", SEBlock(c, r, rng, dtype))

    def reduce(self, x3d: Tensor, ctx: Ctx) -> Tensor:
        y = self.compress(x3d, ctx)
        y = ops.squeeze_last(y)
        return ops.relu(self.restore(y, ctx))

    def fuse(self, reduced: Tensor, x2d: Tensor, ctx: Ctx) -> Tensor:
        if reduced.data.shape != x2d.data.shape:
            raise ValueError(
                f"fusion shape mismatch: {reduced.data.shape} vs {x2d.data.shape}"
            )
        if self.use_se:
            return ops.add(self.se_volume(reduced, ctx), self.se_plane(x2d, ctx))
        return ops.add(reduced, x2d)

    def __call__(self, x3d: Tensor, x2d: Tensor, ctx: Ctx) -> Tensor:
        return self.fuse(self.reduce(x3d, ctx), x2d, ctx)


class UpBlock2D(Module):
    """Nearest 2x upsample -> 2x2 conv (no BN) -> skip concat -> conv block."""

    def __init__(self, cin, skip_c, filters, rng, dtype=np.float32, with_bn=True):
        super().__init__()
        self.upconv = self.add_child("upconv", Conv2D(2, 2, cin, filters, rng, dtype))
        self.block = self.add_child(
            "block", ConvBlock2D(filters + skip_c, filters, rng, dtype, with_bn))

    def __call__(self, x: Tensor, skip: Tensor, ctx: Ctx) -> Tensor:
        x = ops.upsample2d(x)
        x = ops.relu(self.upconv(x, ctx))
        x = ops.concat(x, skip)
        return self.block(x, ctx)


class UpBlock3D(Module):
    """3D mirror of :class:`UpBlock2D`; factors undo the matching pool."""

    def __init__(self, cin, skip_c, filters, factors, rng, dtype=np.float32,
                 with_bn=True):
        super().__init__()
        self.factors = factors
        self.upconv = self.add_child("upconv", Conv3D(2, 2, 2, cin, filters, rng, dtype))
        self.block = self.add_child(
            "block", ConvBlock3D(filters + skip_c, filters, rng, dtype, with_bn))

    def __call__(self, x: Tensor, skip: Tensor, ctx: Ctx) -> Tensor:
        x = ops.upsample3d(x, *self.factors)
        x = ops.relu(self.upconv(x, ctx))
        x = ops.concat(x, skip)
        return self.block(x, ctx)
