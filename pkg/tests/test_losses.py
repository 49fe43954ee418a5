"""Hand-derived loss values, analytic gradients, and invariants."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from lesionseg.losses import (
    LOSSES,
    LossParams,
    bce,
    dice_loss,
    enhanced_mixing_loss,
    focal_loss,
    focal_loss_grad,
)

P_UNIT = LossParams(alpha=1.0, gamma=1.0, delta=1.0)


def paper_defaults():
    with pytest.warns(UserWarning, match="alpha"):
        return LossParams()


# ---------------------------------------------------------------------------
# Values against hand-evaluated fixtures
# ---------------------------------------------------------------------------

def test_focal_single_voxel():
    got = focal_loss(np.array([0.5]), np.array([1.0]), P_UNIT)
    assert got == pytest.approx(0.5 * -np.log(0.5), abs=1e-9)
    assert got == pytest.approx(0.34657, abs=1e-5)


def test_focal_perfect_prediction_near_zero():
    p = np.array([1.0, 0.0, 1.0])
    g = np.array([1.0, 0.0, 1.0])
    assert abs(focal_loss(p, g, P_UNIT)) < 1e-5


def test_focal_degenerates_to_half_bce():
    params = LossParams(alpha=0.5, gamma=0.0)
    rng = np.random.default_rng(0)
    p = rng.uniform(0.02, 0.98, 200)
    g = (rng.random(200) > 0.5).astype(float)
    assert focal_loss(p, g, params) == pytest.approx(0.5 * bce(p, g, params.eps),
                                                     rel=1e-12)


def test_dice_identities():
    g = np.array([1.0, 1.0, 0.0, 1.0])
    assert dice_loss(g, g, P_UNIT) == 0.0
    zero = np.zeros(5)
    assert dice_loss(zero, zero, P_UNIT) == 0.0
    got = dice_loss(np.array([1.0, 0.0]), np.array([0.0, 1.0]), P_UNIT)
    assert got == pytest.approx(2.0 / 3.0, abs=1e-9)


def test_eml_single_voxel():
    got = enhanced_mixing_loss(np.array([0.5]), np.array([1.0]), P_UNIT)
    want = 0.5 * -np.log(0.5) - np.log((2 * 0.5 + 1) / (0.25 + 1 + 1))
    assert got == pytest.approx(want, abs=1e-12)
    assert got == pytest.approx(0.46435, abs=1e-5)


def test_eml_perfect_prediction():
    g = np.array([1.0, 0.0, 1.0, 0.0])
    assert abs(enhanced_mixing_loss(g.copy(), g, P_UNIT)) < 1e-5


def test_eml_floor_keeps_value_finite():
    params = LossParams(alpha=1.0, gamma=1.0, delta=0.0)
    p = np.array([0.0, 0.0])
    g = np.array([1.0, 1.0])   # sdc == 0 without the floor
    v = enhanced_mixing_loss(p, g, params)
    assert np.isfinite(v)
    assert v == pytest.approx(-np.log(params.eps) + focal_loss(p, g, params) / 2)


def test_literal_log_dice_flag():
    params = LossParams(alpha=1.0, gamma=1.0, delta=1.0, literal_log_dice=True)
    p = np.array([0.5])
    g = np.array([1.0])
    dl = dice_loss(p, g, params)
    want = focal_loss(p, g, params) / 1 - np.log(dl)
    assert enhanced_mixing_loss(p, g, params) == pytest.approx(want, abs=1e-12)


# ---------------------------------------------------------------------------
# Gradients
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("name", sorted(LOSSES))
def test_gradients_match_finite_differences(name):
    fn = LOSSES[name]
    params = paper_defaults()
    worst = 0.0
    for trial in range(25):
        rng = np.random.default_rng(trial)
        n = int(rng.integers(4, 64))
        p = rng.uniform(0.05, 0.95, n)
        g = (rng.random(n) > 0.6).astype(float)
        _, grad = fn(p, g, params)
        h = 1e-6
        for j in rng.integers(0, n, 3):
            pp = p.copy(); pp[j] += h
            pm = p.copy(); pm[j] -= h
            fd = (fn(pp, g, params)[0] - fn(pm, g, params)[0]) / (2 * h)
            rel = abs(fd - grad[j]) / max(abs(fd), abs(grad[j]), 1e-12)
            worst = max(worst, rel)
    assert worst < 1e-4


def test_focal_grad_zero_outside_clamp():
    params = LossParams(alpha=1.0, gamma=1.0)
    p = np.array([0.0, 0.5, 1.0])
    g = np.array([1.0, 1.0, 0.0])
    grad = focal_loss_grad(p, g, params)
    assert grad[0] == 0.0 and grad[2] == 0.0 and grad[1] != 0.0


def test_eml_monotone_improvement():
    params = paper_defaults()
    rng = np.random.default_rng(5)
    p = rng.uniform(0.2, 0.8, 40)
    g = (rng.random(40) > 0.5).astype(float)
    prev = enhanced_mixing_loss(p, g, params)
    for _ in range(20):
        p = np.clip(p + 0.04 * (g - p) / np.abs(g - p).max(), 0.01, 0.99)
        cur = enhanced_mixing_loss(p, g, params)
        assert cur <= prev + 1e-12
        prev = cur


# ---------------------------------------------------------------------------
# Property-based invariants
# ---------------------------------------------------------------------------

probs = hnp.arrays(np.float64, st.integers(1, 40),
                   elements=st.floats(0.0, 1.0, allow_nan=False))


@given(probs, st.randoms(use_true_random=False))
@settings(max_examples=60, deadline=None)
def test_dice_range_and_permutation_invariance(p, pyrandom):
    rng = np.random.default_rng(pyrandom.randrange(2 ** 32))
    g = (rng.random(p.size) > 0.5).astype(float)
    params = LossParams(alpha=1.0, gamma=1.0, delta=1.0)
    dl = dice_loss(p, g, params)
    assert 0.0 <= dl <= 1.0
    perm = rng.permutation(p.size)
    assert dice_loss(p[perm], g[perm], params) == pytest.approx(dl, rel=1e-12)
    assert focal_loss(p[perm], g[perm], params) == pytest.approx(
        focal_loss(p, g, params), rel=1e-12)
    assert enhanced_mixing_loss(p[perm], g[perm], params) == pytest.approx(
        enhanced_mixing_loss(p, g, params), rel=1e-12)


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def test_param_validation():
    with pytest.raises(ValueError):
        LossParams(alpha=0.0)
    with pytest.raises(ValueError):
        LossParams(alpha=1.0, gamma=6.0)
    with pytest.raises(ValueError):
        LossParams(alpha=1.0, delta=1.5)
    with pytest.raises(ValueError):
        LossParams(alpha=1.0, eps=0.1)
    with pytest.warns(UserWarning, match="alpha"):
        LossParams(alpha=1.1)


def test_error_cases():
    params = P_UNIT
    with pytest.raises(ValueError, match="shape"):
        focal_loss(np.zeros(3), np.zeros(4), params)
    with pytest.raises(ValueError, match="0 or 1"):
        focal_loss(np.zeros(3), np.array([0.0, 0.5, 1.0]), params)
    with pytest.raises(ValueError, match="shape"):
        dice_loss(np.zeros(3), np.zeros(2), params)
