import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hais import gradcheck, losses
from hais.errors import InputError
from hais.losses import (
    MaskLossInput,
    ScoreLossInput,
    ShiftLossInput,
    mask_loss,
    score_loss,
    semantic_ce_loss,
    shift_loss,
    total_loss,
)

LOG2 = math.log(2.0)


# --- shift --------------------------------------------------------------------

def test_shift_zero_at_perfect():
    gt = np.random.default_rng(0).normal(size=(10, 3))
    loss, grad = shift_loss(ShiftLossInput(gt, gt, np.ones(10, bool)))
    assert loss == 0.0 and not grad.any()


def test_shift_examples():
    assert shift_loss(ShiftLossInput([(2, 0, 0)], [(0, 0, 0)], [True]))[0] == 2.0
    assert shift_loss(ShiftLossInput([(0.5, 0, 0)], [(0, 0, 0)], [True]))[0] == 0.25


def test_shift_background_ignored():
    gt = [(2, 0, 0), (5, 5, 5)]
    pred = [(0, 0, 0), (0, 0, 0)]
    loss, grad = shift_loss(ShiftLossInput(gt, pred, [True, False]))
    assert loss == 2.0 and not grad[1].any()
    loss, grad = shift_loss(ShiftLossInput(gt, pred, [False, False]))
    assert loss == 0.0 and not grad.any()


def test_shift_subgradient_zero_at_kink():
    _, grad = shift_loss(ShiftLossInput([(1, 1, 1)], [(1, 0, 2)], [True]))
    assert grad.tolist() == [[0.0, -1.0, 1.0]]


def test_shift_weight_clamp_scaling():
    rng = np.random.default_rng(1)
    gt = rng.normal(size=(20, 3)) * 3
    gt /= np.linalg.norm(gt, axis=1, keepdims=True)  # |gt| = 1
    fg = np.ones(20, bool)
    for t in (1.0, 2.0, 7.5):
        # scaling gt keeps w = 1, so the loss is the plain L1 distance
        loss, _ = shift_loss(ShiftLossInput(gt * t, np.zeros((20, 3)), fg))
        assert loss == pytest.approx(np.abs(gt * t).sum() / 20, rel=1e-12)


def test_shift_length_mismatch():
    with pytest.raises(InputError):
        ShiftLossInput(np.zeros((2, 3)), np.zeros((3, 3)), [True, True])


def test_shift_gradient_200_points():
    rng = np.random.default_rng(2)
    gt, pred, fg = gradcheck._shift_case(rng, 200)
    _, g = shift_loss(ShiftLossInput(gt, pred, fg))
    f = lambda p: shift_loss(ShiftLossInput(gt, p, fg))[0]  # noqa: E731
    away = np.abs(gt - pred) > max(1e-6, gradcheck.STEP)
    fd = gradcheck.central_difference(f, pred, mask=away)
    assert np.abs(g[away] - fd[away]).max() < 1e-4


# --- mask ---------------------------------------------------------------------

def test_mask_perfect_is_small():
    y = np.array([1.0, 0.0, 1.0])
    loss, _ = mask_loss([MaskLossInput(y, y, 0.9)])
    assert 0 <= loss <= -math.log(1 - losses.EPS) + 1e-15


def test_mask_gate():
    loss, grads = mask_loss([MaskLossInput([0.1, 0.9], [1, 0], 0.4)])
    assert loss == 0.0 and not grads[0].any()
    loss, _ = mask_loss([MaskLossInput([0.1, 0.9], [1, 0], 0.5)])
    assert loss == 0.0
    assert mask_loss([])[0] == 0.0


def test_mask_single_point():
    assert mask_loss([MaskLossInput([0.5], [1], 0.9)])[0] == pytest.approx(LOG2, abs=1e-15)


def test_mask_normalization():
    a = MaskLossInput([0.5], [1], 0.9)
    b = MaskLossInput([0.25, 0.25, 0.25], [0, 0, 0], 0.7)
    want = (LOG2 + 3 * -math.log(0.75)) / 4
    assert mask_loss([a, b])[0] == pytest.approx(want, rel=1e-14)


def test_mask_invalid_probability():
    with pytest.raises(InputError):
        mask_loss([MaskLossInput([1.2], [1], 0.9)])
    with pytest.raises(InputError):
        MaskLossInput([0.5, 0.5], [1], 0.9)


def test_mask_gradient():
    rng = np.random.default_rng(3)
    for _ in range(10):
        assert gradcheck.check_mask(rng) <= gradcheck.RTOL


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_mask_gate_bitwise(seed):
    assert gradcheck.check_mask_gate(np.random.default_rng(seed))


# --- score --------------------------------------------------------------------

def test_score_examples():
    assert score_loss([ScoreLossInput(0.5, 0.5)])[0] == pytest.approx(LOG2, abs=1e-15)
    assert score_loss([ScoreLossInput(1 - 1e-12, 1.0)])[0] < 1e-6
    assert score_loss([])[0] == 0.0


def test_score_stationary():
    rng = np.random.default_rng(4)
    for _ in range(20):
        assert gradcheck.check_score_stationary(rng) <= 1e-6
    # and it is a minimum along each coordinate
    iou = 0.3
    base = score_loss([ScoreLossInput(iou, iou)])[0]
    assert score_loss([ScoreLossInput(iou + 0.01, iou)])[0] > base
    assert score_loss([ScoreLossInput(iou - 0.01, iou)])[0] > base


def test_score_gradient():
    rng = np.random.default_rng(5)
    for _ in range(10):
        assert gradcheck.check_score(rng) <= gradcheck.RTOL


def test_score_bad_target():
    with pytest.raises(InputError):
        score_loss([ScoreLossInput(0.5, 1.5)])


# --- semantic ----------------------------------------------------------------

def test_semantic_uniform():
    for c in (2, 5, 20):
        assert semantic_ce_loss(np.zeros((4, c)), [0, 1, 0, 1])[0] == pytest.approx(math.log(c), rel=1e-14)


def test_semantic_confident():
    logits = np.full((3, 4), -50.0)
    logits[np.arange(3), [2, 0, 3]] = 50.0
    assert semantic_ce_loss(logits, [2, 0, 3])[0] < 1e-20


def test_semantic_errors():
    with pytest.raises(InputError):
        semantic_ce_loss(np.zeros((2, 3)), [0, 3])
    with pytest.raises(InputError):
        semantic_ce_loss(np.zeros((2, 3)), [0])


def test_semantic_gradient():
    rng = np.random.default_rng(6)
    for _ in range(10):
        assert gradcheck.check_semantic(rng) <= gradcheck.RTOL


# --- total and suite ----------------------------------------------------------

def test_total():
    assert total_loss(0, 0, 0, 0) == 0
    assert total_loss(1, 2, 3, 4) == 10
    rng = np.random.default_rng(7)
    for _ in range(20):
        v = rng.random(4) * 10
        assert abs(total_loss(*v) - sum(v)) <= 1e-12
    with pytest.raises(InputError):
        total_loss(1, math.nan, 0, 0)
    with pytest.raises(InputError):
        total_loss(1, 0, math.inf, 0)


def test_nonnegative():
    rng = np.random.default_rng(8)
    for _ in range(20):
        gt, pred, fg = gradcheck._shift_case(rng, 30)
        assert shift_loss(ShiftLossInput(gt, pred, fg))[0] >= 0
        assert mask_loss(gradcheck._mask_case(rng))[0] >= 0
        assert score_loss([ScoreLossInput(rng.random(), rng.random())])[0] >= 0


def test_clamp_gradient_zero_outside():
    _, g = score_loss([ScoreLossInput(0.0, 0.3), ScoreLossInput(1.0, 0.3)])
    assert g.tolist() == [0.0, 0.0]


def test_run_all_passes():
    results = gradcheck.run_all(trials=10, seed=11)
    assert [r.passed for r in results] == [True] * 6
