"""Segmentation objectives: focal, dice, and the enhanced mixing loss.

All three operate on flat (or any-shape) probability/target arrays and
return a scalar plus, via the ``*_grad`` twins, the exact analytic
gradient with respect to the probabilities. Everything is float64 and
side-effect free.

The mixing loss averages the focal term over the batch voxel count and
subtracts the log of the soft dice coefficient. Taking the log of the
dice *loss* instead (available behind ``literal_log_dice``) rewards
predictions for getting worse, so the coefficient form is the default.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LossParams:
    """Modulation factors shared by the loss family.

    alpha weights foreground against background in the focal term; values
    above 1 flip the sign of the background contribution and are allowed
    but warned about. gamma is the focusing exponent, delta the dice
    smoothing term, eps the probability clamp used before any logarithm.
    """

    alpha: float = 1.1
    gamma: float = 0.48
    delta: float = 1.0
    eps: float = 1e-7
    literal_log_dice: bool = False

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if not 0.0 <= self.gamma <= 5.0:
            raise ValueError("gamma must lie in [0, 5]")
        if not 0.0 <= self.delta <= 1.0:
            raise ValueError("delta must lie in [0, 1]")
        if not 0.0 < self.eps <= 1e-3:
            raise ValueError("eps must lie in (0, 1e-3]")
        if self.alpha > 1.0:
            warnings.warn(
                f"alpha={self.alpha} exceeds 1: background focal terms change "
                "sign and reward confident background errors",
                UserWarning, stacklevel=2)

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "gamma": self.gamma, "delta": self.delta,
                "eps": self.eps, "literal_log_dice": self.literal_log_dice}


def _validate(p: np.ndarray, g: np.ndarray, check_binary: bool = True) -> None:
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch: p {p.shape} vs g {g.shape}")
    if check_binary and not np.all((g == 0) | (g == 1)):
        raise ValueError("targets must be exactly 0 or 1")


def _clamp(p: np.ndarray, eps: float) -> np.ndarray:
    return np.clip(p.astype(np.float64), eps, 1.0 - eps)


# ---------------------------------------------------------------------------
# Focal loss
# ---------------------------------------------------------------------------

def focal_loss(p: np.ndarray, g: np.ndarray, params: LossParams) -> float:
    return focal_loss_value_and_grad(p, g, params, need_grad=False)[0]


def focal_loss_grad(p: np.ndarray, g: np.ndarray, params: LossParams) -> np.ndarray:
    return focal_loss_value_and_grad(p, g, params)[1]


def focal_loss_value_and_grad(p, g, params: LossParams, need_grad=True):
    """Sum over foreground of -alpha (1-p)^gamma log p, plus sum over
    background of -(1-alpha) p^gamma log(1-p)."""
    _validate(p, g, check_binary=True)
    a, y = params.alpha, params.gamma
    pc = _clamp(p, params.eps)
    fg = g == 1
    one_m = 1.0 - pc
    logp = np.log(pc)
    log1m = np.log(one_m)
    fg_terms = -a * one_m ** y * logp
    bg_terms = -(1.0 - a) * pc ** y * log1m
    value = float(np.where(fg, fg_terms, bg_terms).sum())
    if not need_grad:
        return value, None
    # d/dp of each branch; the clamp zeroes the gradient where it saturates
    dfg = a * (y * one_m ** (y - 1.0) * logp - one_m ** y / pc)
    dbg = -(1.0 - a) * (y * pc ** (y - 1.0) * log1m - pc ** y / one_m)
    grad = np.where(fg, dfg, dbg)
    interior = (p > params.eps) & (p < 1.0 - params.eps)
    return value, np.where(interior, grad, 0.0)


def bce(p: np.ndarray, g: np.ndarray, eps: float = 1e-7) -> float:
    """Binary cross-entropy sum with the same probability clamp."""
    _validate(p, g, check_binary=True)
    pc = _clamp(p, eps)
    return float(-(g * np.log(pc) + (1 - g) * np.log(1 - pc)).sum())


# ---------------------------------------------------------------------------
# Dice coefficient loss
# ---------------------------------------------------------------------------

def dice_loss(p: np.ndarray, g: np.ndarray, params: LossParams) -> float:
    return dice_loss_value_and_grad(p, g, params, need_grad=False)[0]


def dice_loss_grad(p: np.ndarray, g: np.ndarray, params: LossParams) -> np.ndarray:
    return dice_loss_value_and_grad(p, g, params)[1]


def dice_loss_value_and_grad(p, g, params: LossParams, need_grad=True):
    """1 - (2 sum(p g) + delta) / (sum(p^2) + sum(g^2) + delta).

    No probability clamp here: the exact algebraic limits (perfect binary
    prediction -> 0, both empty -> 0 with delta > 0) must hold.
    """
    _validate(p, g, check_binary=False)
    pf = p.astype(np.float64)
    gf = g.astype(np.float64)
    num = 2.0 * float((pf * gf).sum()) + params.delta
    den = float((pf * pf).sum() + (gf * gf).sum()) + params.delta
    value = 1.0 - num / den
    if not need_grad:
        return value, None
    grad = (2.0 * num * pf - 2.0 * gf * den) / (den * den)
    return value, grad


# ---------------------------------------------------------------------------
# Enhanced mixing loss
# ---------------------------------------------------------------------------

def enhanced_mixing_loss(p, g, params: LossParams) -> float:
    return enhanced_mixing_loss_value_and_grad(p, g, params, need_grad=False)[0]


def enhanced_mixing_loss_grad(p, g, params: LossParams) -> np.ndarray:
    return enhanced_mixing_loss_value_and_grad(p, g, params)[1]


def enhanced_mixing_loss_value_and_grad(p, g, params: LossParams, need_grad=True):
    """Voxel-averaged focal term minus the log of the soft dice coefficient
    (or of the dice loss itself when ``literal_log_dice`` is set). The log
    argument is floored at eps so the value stays finite."""
    _validate(p, g, check_binary=True)
    n = p.size
    fl, dfl = focal_loss_value_and_grad(p, g, params, need_grad)
    dl, ddl = dice_loss_value_and_grad(p, g, params, need_grad)
    arg = dl if params.literal_log_dice else 1.0 - dl
    floored = max(arg, params.eps)
    value = fl / n + (-np.log(floored))
    if not need_grad:
        return value, None
    grad = dfl / n
    if arg > params.eps:
        darg = ddl if params.literal_log_dice else -ddl
        grad = grad - darg / floored
    return value, grad


LOSSES = {
    "fl": focal_loss_value_and_grad,
    "dl": dice_loss_value_and_grad,
    "eml": enhanced_mixing_loss_value_and_grad,
}


def get_loss(name: str):
    try:
        return LOSSES[name.lower()]
    except KeyError:
        raise KeyError(f"unknown loss {name!r}; expected one of {sorted(LOSSES)}") from None
