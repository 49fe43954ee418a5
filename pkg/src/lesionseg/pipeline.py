"""Preprocessing, slice stacking, augmentation, and the train/val split.

Each transverse slice is cropped to the fixed 180x180 window with corners
(10, 40) and (190, 220), resized with bilinear interpolation, and stacked
with its two upper neighbors and one lower neighbor into a 4-channel
input; the segmentation target is the slice at channel index 2. Edge
slices replicate out-of-range neighbors so every slice yields a sample.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import kernels as K
from .io import VolumeCase

CROP_ROWS = (10, 190)
CROP_COLS = (40, 220)
# the far corner pixel must exist in the slice
MIN_ROWS = CROP_ROWS[1] + 1
MIN_COLS = CROP_COLS[1] + 1

# offsets of the stacked slices relative to the target slice
STACK_OFFSETS = (-2, -1, 0, 1)
TARGET_CHANNEL = STACK_OFFSETS.index(0)


@dataclass
class SliceStack:
    """One training sample: a 4-slice input stack and its target mask."""

    input: np.ndarray        # (s, s, 4) float32
    target: np.ndarray       # (s, s) uint8
    case_id: str
    target_index: int

    def __post_init__(self):
        if self.input.ndim != 3 or self.input.shape[2] != 4:
            raise ValueError(f"stack input must be (s, s, 4), got {self.input.shape}")
        if self.target.shape != self.input.shape[:2]:
            raise ValueError(
                f"target {self.target.shape} does not align with input "
                f"{self.input.shape[:2]}")
        if not np.all((self.target == 0) | (self.target == 1)):
            raise ValueError("stack target must be binary")


def crop_and_resize(slice2d: np.ndarray, out_size: int = 192) -> np.ndarray:
    """Crop the fixed window and resize to (out_size, out_size) bilinearly."""
    slice2d = np.asarray(slice2d)
    if slice2d.ndim != 2:
        raise ValueError("expected a 2D slice")
    r, c = slice2d.shape
    if r < MIN_ROWS or c < MIN_COLS:
        raise ValueError(
            f"slice {slice2d.shape} too small for the "
            f"({CROP_ROWS[0]}, {CROP_COLS[0]})-({CROP_ROWS[1]}, {CROP_COLS[1]}) "
            f"crop window (needs at least {MIN_ROWS}x{MIN_COLS})")
    window = np.ascontiguousarray(
        slice2d[CROP_ROWS[0]:CROP_ROWS[1], CROP_COLS[0]:CROP_COLS[1]],
        dtype=slice2d.dtype if slice2d.dtype in (np.float32, np.float64) else np.float32)
    if window.shape[0] == out_size and window.shape[1] == out_size:
        return window.copy()
    return K.bilinear_resize2d(window, out_size, out_size)


def preprocess_image_volume(image: np.ndarray, out_size: int = 192) -> np.ndarray:
    """(h, w, d) raw volume -> (out_size, out_size, d) preprocessed slices."""
    depth = image.shape[2]
    out = np.empty((out_size, out_size, depth), dtype=np.float32)
    for k in range(depth):
        out[:, :, k] = crop_and_resize(
            np.ascontiguousarray(image[:, :, k], dtype=np.float32), out_size)
    return out


def preprocess_label_volume(label: np.ndarray, out_size: int = 192) -> np.ndarray:
    """Labels ride through the same crop/resize, then re-binarize at 0.5."""
    depth = label.shape[2]
    out = np.empty((out_size, out_size, depth), dtype=np.uint8)
    for k in range(depth):
        resized = crop_and_resize(
            np.ascontiguousarray(label[:, :, k], dtype=np.float32), out_size)
        out[:, :, k] = (resized >= 0.5).astype(np.uint8)
    return out


def build_stacks(case: VolumeCase, out_size: int = 192) -> list[SliceStack]:
    """One stack per transverse slice, neighbors replicate-padded at edges."""
    if case.depth < 1:
        raise ValueError("volume needs at least one slice")
    img = preprocess_image_volume(case.image, out_size)
    lab = preprocess_label_volume(case.label, out_size)
    depth = case.depth
    stacks = []
    for i in range(depth):
        channels = [img[:, :, min(max(i + off, 0), depth - 1)]
                    for off in STACK_OFFSETS]
        stacks.append(SliceStack(
            input=np.stack(channels, axis=-1),
            target=lab[:, :, i],
            case_id=case.case_id,
            target_index=i,
        ))
    return stacks


# ---------------------------------------------------------------------------
# Augmentation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AugmentConfig:
    max_shift: float = 0.1            # fraction of the image extent
    scale_range: tuple[float, float] = (0.9, 1.1)
    hflip: bool = True

    def to_dict(self) -> dict:
        return {"max_shift": self.max_shift,
                "scale_range": list(self.scale_range),
                "hflip": self.hflip}


def normalize_input(stack_input: np.ndarray) -> np.ndarray:
    """Zero the mean of one input sample (over all four channels)."""
    x = stack_input.astype(np.float32)
    return x - x.mean(dtype=np.float64).astype(np.float32)


def normalize_stack(stack: SliceStack) -> SliceStack:
    return replace(stack, input=normalize_input(stack.input))


def hflip_stack(stack: SliceStack) -> SliceStack:
    """Exact horizontal mirror of input and target (an involution)."""
    return replace(stack,
                   input=np.ascontiguousarray(stack.input[:, ::-1, :]),
                   target=np.ascontiguousarray(stack.target[:, ::-1]))


def _warp_plane(plane: np.ndarray, scale: float, ty: float, tx: float,
                flip: bool, size: int) -> np.ndarray:
    # source = center + (dest - center - t) / scale, optionally mirrored
    c = (size - 1) / 2.0
    m00 = 1.0 / scale
    t0 = c - (c + ty) / scale
    m11 = 1.0 / scale
    t1 = c - (c + tx) / scale
    if flip:
        m11 = -m11
        t1 = (size - 1) - t1
    return K.affine_bilinear2d(plane.astype(np.float32), m00, 0.0, 0.0, m11,
                               t0, t1, np.float32(0.0))


def augment(stack: SliceStack, seed: int,
            cfg: AugmentConfig = AugmentConfig()) -> SliceStack:
    """Seeded random translation / scaling / horizontal flip, then zero-mean.

    The identical geometric transform hits input and target; the target is
    re-binarized after interpolation. Same (stack, seed, cfg) gives the
    identical output.
    """
    rng = np.random.default_rng(seed)
    size = stack.input.shape[0]
    ty = rng.uniform(-cfg.max_shift, cfg.max_shift) * size
    tx = rng.uniform(-cfg.max_shift, cfg.max_shift) * size
    scale = rng.uniform(*cfg.scale_range)
    flip = bool(cfg.hflip and rng.random() < 0.5)

    warped = np.stack(
        [_warp_plane(stack.input[:, :, ch], scale, ty, tx, flip, size)
         for ch in range(stack.input.shape[2])], axis=-1)
    target = _warp_plane(stack.target.astype(np.float32), scale, ty, tx, flip, size)
    return replace(stack,
                   input=normalize_input(warped),
                   target=(target >= 0.5).astype(np.uint8))


# ---------------------------------------------------------------------------
# Train / validation split
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SplitSpec:
    train_ratio: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_ratio < 1.0:
            raise ValueError("train_ratio must lie strictly between 0 and 1")


def split_dataset(case_ids, spec: SplitSpec) -> tuple[list[str], list[str]]:
    """Case-level split: |train| = round(ratio * n), deterministic per seed."""
    ids = list(case_ids)
    if len(ids) != len(set(ids)):
        raise ValueError("case ids must be unique")
    if len(ids) < 2:
        raise ValueError("need at least 2 cases to split")
    rng = np.random.default_rng(spec.seed)
    order = rng.permutation(len(ids))
    n_train = round(spec.train_ratio * len(ids))
    shuffled = [ids[i] for i in order]
    return sorted(shuffled[:n_train]), sorted(shuffled[n_train:])
