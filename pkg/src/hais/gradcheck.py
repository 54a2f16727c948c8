"""Finite-difference verification of the loss gradients."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import losses

STEP = 1e-5
RTOL = 1e-4
# floor for the relative error denominator where the gradient is ~0
DENOM_FLOOR = 1e-6
KINK_MARGIN = 1e-6


@dataclass
class CheckResult:
    name: str
    passed: bool
    max_rel_error: float
    detail: str = ""


def central_difference(f, x: np.ndarray, step: float = STEP, mask=None) -> np.ndarray:
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    todo = range(flat.size) if mask is None else np.flatnonzero(np.asarray(mask).reshape(-1))
    for k in todo:
        orig = flat[k]
        flat[k] = orig + step
        up = f(x)
        flat[k] = orig - step
        down = f(x)
        flat[k] = orig
        gflat[k] = (up - down) / (2 * step)
    return g


def rel_error(analytic, numeric, mask=None) -> float:
    a, n = np.asarray(analytic), np.asarray(numeric)
    if mask is not None:
        a, n = a[mask], n[mask]
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - n) / np.maximum(np.abs(n), DENOM_FLOOR)))


def _shift_case(rng, n):
    gt = rng.normal(scale=0.8, size=(n, 3))
    pred = gt + rng.normal(scale=0.3, size=(n, 3))
    fg = rng.random(n) < 0.7
    fg[0] = True
    return gt, pred, fg


def check_shift(rng, n=40) -> float:
    gt, pred, fg = _shift_case(rng, n)
    _, g = losses.shift_loss(losses.ShiftLossInput(gt, pred, fg))
    f = lambda p: losses.shift_loss(losses.ShiftLossInput(gt, p, fg))[0]  # noqa: E731
    # a central difference straddles the kink unless it is more than one step away
    away = np.abs(gt - pred) > max(KINK_MARGIN, STEP)
    fd = central_difference(f, pred, mask=away)
    return rel_error(g, fd, away)


def _mask_case(rng):
    k = int(rng.integers(1, 5))
    out = []
    for _ in range(k):
        m = int(rng.integers(1, 12))
        out.append(
            losses.MaskLossInput(
                rng.uniform(0.05, 0.95, m), (rng.random(m) < 0.5).astype(float), float(rng.uniform(0.3, 1.0))
            )
        )
    out[0].iou = 0.9
    return out


def check_mask(rng) -> float:
    inputs = _mask_case(rng)
    _, grads = losses.mask_loss(inputs)
    errs = []
    for k, inp in enumerate(inputs):
        def f(p, k=k):
            trial = list(inputs)
            trial[k] = losses.MaskLossInput(p, inp.labels, inp.iou)
            return losses.mask_loss(trial)[0]

        errs.append(rel_error(grads[k], central_difference(f, inp.probs)))
    return max(errs)


def check_score(rng) -> float:
    n = int(rng.integers(1, 20))
    s = rng.uniform(0.05, 0.95, n)
    iou = rng.uniform(0, 1, n)
    mk = lambda v: [losses.ScoreLossInput(a, b) for a, b in zip(v, iou)]  # noqa: E731
    _, g = losses.score_loss(mk(s))
    return rel_error(g, central_difference(lambda v: losses.score_loss(mk(v))[0], s))


def check_semantic(rng) -> float:
    n, c = int(rng.integers(1, 15)), int(rng.integers(2, 8))
    logits = rng.normal(scale=2.0, size=(n, c))
    labels = rng.integers(0, c, n)
    _, g = losses.semantic_ce_loss(logits, labels)
    fd = central_difference(lambda z: losses.semantic_ce_loss(z, labels)[0], logits)
    return rel_error(g, fd)


def check_mask_gate(rng) -> bool:
    inputs = _mask_case(rng)
    inputs.append(losses.MaskLossInput(rng.uniform(0.05, 0.95, 7), np.ones(7), 0.5))
    base = losses.mask_loss(inputs)[0]
    perturbed = list(inputs)
    perturbed[-1] = losses.MaskLossInput(rng.uniform(0.05, 0.95, 7), inputs[-1].labels, 0.5)
    return losses.mask_loss(perturbed)[0] == base


def check_score_stationary(rng) -> float:
    iou = rng.uniform(0.01, 0.99, int(rng.integers(1, 10)))
    _, g = losses.score_loss([losses.ScoreLossInput(v, v) for v in iou])
    return float(np.max(np.abs(g)))


def run_all(trials: int = 50, seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []
    for name, fn in (
        ("shift_loss gradient", check_shift),
        ("mask_loss gradient", check_mask),
        ("score_loss gradient", check_score),
        ("semantic_ce_loss gradient", check_semantic),
    ):
        worst = max(fn(rng) for _ in range(trials))
        results.append(CheckResult(name, worst <= RTOL, worst))
    gate = all(check_mask_gate(rng) for _ in range(trials))
    results.append(CheckResult("mask_loss gate inert for iou <= 0.5", gate, 0.0))
    stat = max(check_score_stationary(rng) for _ in range(trials))
    results.append(CheckResult("score_loss stationary at score == iou", stat <= 1e-6, stat))
    return results
