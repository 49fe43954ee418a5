"""Model variants: dimension-fusion networks and their UNet baselines.

The dimension-fusion network runs a 2D encoder over a 4-slice stack and a
3D encoder over the same stack viewed as a single-channel volume, folding
the volume features into the 2D stream at configurable encoder stages
(before the matching max-pooling). Baselines are plain 2D/3D UNets; the
2D baselines consume only the center slice of the stack, which is also
the slice the target mask belongs to.

Parameter accounting matches framework-style grand totals: trainable
weights plus batch-norm moving statistics.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .engine import ops
from .engine.tensor import Tensor
from .layers import (
    Conv2D,
    Conv3D,
    ConvBlock2D,
    ConvBlock3D,
    Ctx,
    DimensionTransform,
    Dropout,
    Module,
    UpBlock2D,
    UpBlock3D,
)

VARIANT_NAMES = ("unet2d_original", "unet2d_transform", "unet3d_transform", "dunet")

# slice the 4-channel stack is centered on; also the depth index the 3D
# baseline's prediction is read from
TARGET_CHANNEL = 2


@dataclass(frozen=True)
class ArchSpec:
    """Declarative description of a network variant."""

    variant: str = "dunet"
    fusion_stages: tuple[int, ...] = (2, 3)
    use_se: bool = True
    se_reduction: int = 16
    base_filters: int = 32
    dropout_rate: float = 0.5
    input_shape: tuple[int, int, int] = (192, 192, 4)

    def __post_init__(self):
        object.__setattr__(self, "fusion_stages",
                           tuple(sorted(set(self.fusion_stages))))
        object.__setattr__(self, "input_shape", tuple(self.input_shape))
        self.validate()

    def validate(self) -> None:
        if self.variant not in VARIANT_NAMES:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.variant == "dunet":
            if not self.fusion_stages:
                raise ValueError("dunet needs at least one fusion stage")
            if not set(self.fusion_stages) <= {1, 2, 3}:
                raise ValueError("fusion stages must be a subset of {1, 2, 3}")
        elif self.fusion_stages:
            raise ValueError("fusion_stages only apply to the dunet variant")
        if self.use_se and self.variant != "dunet":
            raise ValueError("SE gating only applies to the dunet variant")
        if self.se_reduction < 1:
            raise ValueError("se_reduction must be positive")
        if self.use_se and self.base_filters % self.se_reduction != 0:
            raise ValueError("base_filters must be divisible by se_reduction")
        if self.base_filters < 1:
            raise ValueError("base_filters must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        h, w, c = self.input_shape
        if c != 4:
            raise ValueError("input stacks carry exactly 4 slices")
        if h % 16 or w % 16:
            raise ValueError("input height/width must be divisible by 16")

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "fusion_stages": list(self.fusion_stages),
            "use_se": self.use_se,
            "se_reduction": self.se_reduction,
            "base_filters": self.base_filters,
            "dropout_rate": self.dropout_rate,
            "input_shape": list(self.input_shape),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArchSpec":
        known = {"variant", "fusion_stages", "use_se", "se_reduction",
                 "base_filters", "dropout_rate", "input_shape"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown architecture keys: {sorted(unknown)}")
        kw = dict(d)
        if "fusion_stages" in kw:
            kw["fusion_stages"] = tuple(kw["fusion_stages"])
        if "input_shape" in kw:
            kw["input_shape"] = tuple(kw["input_shape"])
        return cls(**kw)

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def content_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


def preset(name: str, input_shape=(192, 192, 4), dropout_rate=0.5) -> ArchSpec:
    """Spec for a named variant as reported in the comparison tables.

    The SE ablation that fuses at all three stages used reduction ratio 8;
    every other SE configuration uses 16.
    """
    key = name.lower().replace("_", "-")
    table = {
        "unet2d-original": dict(variant="unet2d_original", fusion_stages=(),
                                use_se=False, base_filters=64),
        "unet2d-transform": dict(variant="unet2d_transform", fusion_stages=(),
                                 use_se=False, base_filters=32),
        "unet3d-transform": dict(variant="unet3d_transform", fusion_stages=(),
                                 use_se=False, base_filters=32),
        "add-1": dict(variant="dunet", fusion_stages=(1,), use_se=False),
        "add-12": dict(variant="dunet", fusion_stages=(1, 2), use_se=False),
        "add-23": dict(variant="dunet", fusion_stages=(2, 3), use_se=False),
        "add-123": dict(variant="dunet", fusion_stages=(1, 2, 3), use_se=False),
        "se-add-12": dict(variant="dunet", fusion_stages=(1, 2), use_se=True,
                          se_reduction=16),
        "se-add-23": dict(variant="dunet", fusion_stages=(2, 3), use_se=True,
                          se_reduction=16),
        "se-add-123": dict(variant="dunet", fusion_stages=(1, 2, 3), use_se=True,
                           se_reduction=8),
        "dunet": dict(variant="dunet", fusion_stages=(2, 3), use_se=True,
                      se_reduction=16),
    }
    if key not in table:
        raise KeyError(f"unknown variant name {name!r}; known: {sorted(table)}")
    return ArchSpec(input_shape=input_shape, dropout_rate=dropout_rate, **table[key])


PRESET_NAMES = ("unet2d-original", "unet2d-transform", "unet3d-transform",
                "add-1", "add-12", "add-23", "add-123",
                "se-add-12", "se-add-23", "se-add-123")


class Model:
    """A built network: layer tree, spec, and forward passes."""

    def __init__(self, spec: ArchSpec, seed: int = 0, dtype=np.float32):
        self.spec = spec
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        self.root = Module()
        b = spec.base_filters
        h, w, d = spec.input_shape

        if spec.variant in ("unet2d_original", "unet2d_transform"):
            self._build_2d(rng, cin=1, with_bn=spec.variant == "unet2d_transform")
        elif spec.variant == "unet3d_transform":
            self._build_3d(rng, depth=d)
        else:
            self._build_2d(rng, cin=4, with_bn=True)
            self._build_3d_stream(rng, depth=d)

    # -- construction ------------------------------------------------------

    def _filters2d(self):
        b = self.spec.base_filters
        return [b, 2 * b, 4 * b, 8 * b, 16 * b]

    def _build_2d(self, rng, cin, with_bn):
        fs = self._filters2d()
        add = self.root.add_child
        dtype = self.dtype
        c = cin
        for i, f in enumerate(fs, start=1):
            add(f"enc2d_block{i}", ConvBlock2D(c, f, rng, dtype, with_bn))
            c = f
        add("drop4", Dropout(self.spec.dropout_rate))
        add("drop5", Dropout(self.spec.dropout_rate))
        skips = fs[:4]
        cur = fs[4]
        for i, f in enumerate(reversed(skips), start=1):
            add(f"up{i}", UpBlock2D(cur, f, f, rng, dtype, with_bn))
            cur = f
        add("head", Conv2D(1, 1, fs[0], 1, rng, dtype))

    def _build_3d(self, rng, depth):
        fs = self._filters2d()
        add = self.root.add_child
        dtype = self.dtype
        c = 1
        self.pool3d_factors = []
        cur_d = depth
        for i, f in enumerate(fs, start=1):
            add(f"enc3d_block{i}", ConvBlock3D(c, f, rng, dtype, with_bn=True))
            c = f
            if i < len(fs):
                fd = 2 if cur_d % 2 == 0 and cur_d >= 2 else 1
                self.pool3d_factors.append((2, 2, fd))
                cur_d //= fd
        add("drop4", Dropout(self.spec.dropout_rate))
        add("drop5", Dropout(self.spec.dropout_rate))
        skips = fs[:4]
        cur = fs[4]
        for i, f in enumerate(reversed(skips), start=1):
            factors = self.pool3d_factors[len(skips) - i]
            add(f"up{i}", UpBlock3D(cur, f, f, factors, rng, dtype, with_bn=True))
            cur = f
        add("head", Conv3D(1, 1, 1, fs[0], 1, rng, dtype))

    def _build_3d_stream(self, rng, depth):
        spec = self.spec
        add = self.root.add_child
        dtype = self.dtype
        b = spec.base_filters
        fs3 = [b, 2 * b, 4 * b]
        top = max(spec.fusion_stages)
        c = 1
        cur_d = depth
        for i in range(1, top + 1):
            add(f"enc3d_block{i}", ConvBlock3D(c, fs3[i - 1], rng, dtype, with_bn=True))
            c = fs3[i - 1]
            if i in spec.fusion_stages:
                add(f"fuse{i}", DimensionTransform(
                    cur_d, fs3[i - 1], rng, dtype,
                    use_se=spec.use_se, r=spec.se_reduction))
            if i < top:
                cur_d //= 2

    # -- parameter plumbing --------------------------------------------------

    def params(self) -> dict[str, np.ndarray]:
        return dict(self.root.param_items())

    def param_tensors(self) -> dict[str, Tensor]:
        return dict(self.root.param_tensors())

    def buffers(self) -> dict[str, np.ndarray]:
        return dict(self.root.buffer_items())

    def zero_grads(self) -> None:
        for _, t in self.root.param_tensors():
            t.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        return {name: t.grad for name, t in self.root.param_tensors()
                if t.grad is not None}

    def parameter_inventory(self) -> list[tuple[str, tuple[int, ...]]]:
        inv = [(name, arr.shape) for name, arr in self.root.param_items()]
        inv += [(name, arr.shape) for name, arr in self.root.buffer_items()]
        return inv

    def load_state(self, params: dict, buffers: dict) -> None:
        own_p = self.params()
        if set(params) != set(own_p):
            missing = set(own_p) - set(params)
            extra = set(params) - set(own_p)
            raise ValueError(
                f"parameter name mismatch (missing={sorted(missing)[:3]}, "
                f"extra={sorted(extra)[:3]})"
            )
        for name, value in params.items():
            self.root.set_param(name, value)
        own_b = self.buffers()
        if set(buffers) != set(own_b):
            raise ValueError("buffer name mismatch against architecture spec")
        for name, value in buffers.items():
            self.root.set_buffer(name, value)

    # -- forward -------------------------------------------------------------

    def _check_input(self, batch: np.ndarray) -> np.ndarray:
        h, w, c = self.spec.input_shape
        if batch.ndim != 4 or batch.shape[1:] != (h, w, c):
            raise ValueError(
                f"expected input of shape (n, {h}, {w}, {c}), got {batch.shape}"
            )
        return np.ascontiguousarray(batch, dtype=self.dtype)

    def forward(self, batch: np.ndarray, training: bool = False,
                rng: np.random.Generator | None = None,
                trace: dict | None = None,
                capture: dict | None = None) -> np.ndarray:
        return self.forward_tensor(batch, training, rng, trace, capture).data

    def forward_tensor(self, batch: np.ndarray, training: bool = False,
                       rng: np.random.Generator | None = None,
                       trace: dict | None = None,
                       capture: dict | None = None) -> Tensor:
        x = self._check_input(batch)
        ctx = Ctx(training=training, rng=rng, trace=trace, capture=capture)
        if self.spec.variant in ("unet2d_original", "unet2d_transform"):
            t = ops.constant(np.ascontiguousarray(x[..., TARGET_CHANNEL:TARGET_CHANNEL + 1]))
            return self._forward_2d(t, ctx, skip_override=None)
        if self.spec.variant == "unet3d_transform":
            t = ops.constant(x.reshape(x.shape[0], *self.spec.input_shape, 1))
            return self._forward_3d(t, ctx)
        return self._forward_dunet(x, ctx)

    def _forward_2d(self, t: Tensor, ctx: Ctx, skip_override) -> Tensor:
        """Encoder/decoder over the 2D stream.

        ``skip_override`` maps stage index (1..3) to the tensor the stream
        continues from after that stage (the fused map, for dunet).
        """
        layers = self.root._children
        ctx.record("2d/input", t)
        skips = []
        for i in range(1, 6):
            t = layers[f"enc2d_block{i}"](t, ctx)
            ctx.record(f"2d/conv_block_{i}", t)
            if skip_override and i in skip_override:
                t = skip_override[i](t)
                ctx.record(f"fusion_{i}", t)
            if i == 4:
                t = layers["drop4"](t, ctx)
            elif i == 5:
                t = layers["drop5"](t, ctx)
            if i < 5:
                skips.append(t)
                t = ops.maxpool2d(t)
                ctx.record(f"2d/pool_{i}", t)
        for i in range(1, 5):
            t = layers[f"up{i}"](t, skips[4 - i], ctx)
            ctx.record(f"2d/up_{i}", t)
        t = ops.sigmoid(layers["head"](t, ctx))
        ctx.record("2d/output", t)
        return t

    def _forward_3d(self, t: Tensor, ctx: Ctx) -> Tensor:
        layers = self.root._children
        ctx.record("3d/input", t)
        skips = []
        for i in range(1, 6):
            t = layers[f"enc3d_block{i}"](t, ctx)
            ctx.record(f"3d/conv_block_{i}", t)
            if i == 4:
                t = layers["drop4"](t, ctx)
            elif i == 5:
                t = layers["drop5"](t, ctx)
            if i < 5:
                skips.append(t)
                t = ops.maxpool3d(t, *self.pool3d_factors[i - 1])
                ctx.record(f"3d/pool_{i}", t)
        for i in range(1, 5):
            t = layers[f"up{i}"](t, skips[4 - i], ctx)
            ctx.record(f"3d/up_{i}", t)
        t = ops.sigmoid(layers["head"](t, ctx))
        ctx.record("3d/output", t)
        # prediction for the stack's target slice
        n, h, w, d, _ = t.data.shape
        shape = t.data.shape

        def bwd(dy):
            g = np.zeros(shape, dtype=dy.dtype)
            g[:, :, :, TARGET_CHANNEL, :] = dy
            return (g,)

        return Tensor(np.ascontiguousarray(t.data[:, :, :, TARGET_CHANNEL, :]), (t,), bwd)

    def _forward_dunet(self, x: np.ndarray, ctx: Ctx) -> Tensor:
        spec = self.spec
        layers = self.root._children
        x3 = ops.constant(x.reshape(x.shape[0], *spec.input_shape, 1))
        ctx.record("3d/input", x3)
        top = max(spec.fusion_stages)
        fused: dict[int, Tensor] = {}
        t3 = x3
        for i in range(1, top + 1):
            t3 = layers[f"enc3d_block{i}"](t3, ctx)
            ctx.record(f"3d/conv_block_{i}", t3)
            if i in spec.fusion_stages:
                fused[i] = layers[f"fuse{i}"].reduce(t3, ctx)
            if i < top:
                t3 = ops.maxpool3d(t3)
                ctx.record(f"3d/pool_{i}", t3)

        def make_override(stage):
            def apply(t2d):
                return layers[f"fuse{stage}"].fuse(fused[stage], t2d, ctx)
            return apply

        override = {s: make_override(s) for s in spec.fusion_stages}
        return self._forward_2d(ops.constant(x), ctx, skip_override=override)


def build_model(spec: ArchSpec, seed: int = 0, dtype=np.float32) -> Model:
    return Model(spec, seed=seed, dtype=dtype)


def count_parameters(model: Model) -> int:
    """Grand total: trainable parameters plus batch-norm moving statistics."""
    return parameter_counts(model)["total"]


def parameter_counts(model: Model) -> dict[str, int]:
    trainable = sum(arr.size for _, arr in model.root.param_items())
    buffers = sum(arr.size for _, arr in model.root.buffer_items())
    return {"trainable": trainable, "non_trainable": buffers,
            "total": trainable + buffers}
