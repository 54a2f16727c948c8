"""Training objectives as plain numpy functions returning ``(loss, grad)``.

Nothing here trains anything; the functions exist so the objectives and
their derivatives can be checked in isolation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InputError

EPS = 1e-7
MASK_IOU_GATE = 0.5


@dataclass
class ShiftLossInput:
    gt_shift: np.ndarray
    pred_shift: np.ndarray
    is_foreground: np.ndarray

    def __post_init__(self):
        self.gt_shift = np.asarray(self.gt_shift, dtype=np.float64).reshape(-1, 3)
        self.pred_shift = np.asarray(self.pred_shift, dtype=np.float64).reshape(-1, 3)
        self.is_foreground = np.asarray(self.is_foreground, dtype=bool).reshape(-1)
        if not len(self.gt_shift) == len(self.pred_shift) == len(self.is_foreground):
            raise InputError("gt_shift, pred_shift and is_foreground differ in length")


@dataclass
class MaskLossInput:
    probs: np.ndarray
    labels: np.ndarray
    iou: float

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64).reshape(-1)
        self.labels = np.asarray(self.labels, dtype=np.float64).reshape(-1)
        if self.probs.shape != self.labels.shape:
            raise InputError("probs and labels differ in length")


@dataclass
class ScoreLossInput:
    score: float
    iou: float


def _clamped(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if not np.isfinite(p).all() or (p < 0).any() or (p > 1).any():
        raise InputError("probabilities must be finite and within [0, 1]")
    return np.clip(p, EPS, 1 - EPS)


def _clip_grad(p: np.ndarray) -> np.ndarray:
    # derivative of the clamp: zero where the input was clipped
    return ((p > EPS) & (p < 1 - EPS)).astype(np.float64)


def shift_loss(inp: ShiftLossInput) -> tuple[float, np.ndarray]:
    """Weighted L1 offset error averaged over foreground points.

    Weight is ``min(|gt|_2, 1)``; the L1 subgradient at zero is 0.
    """
    fg = inp.is_foreground
    n_fg = int(fg.sum())
    grad = np.zeros_like(inp.pred_shift)
    if n_fg == 0:
        return 0.0, grad
    diff = inp.gt_shift - inp.pred_shift
    w = np.minimum(np.sqrt((inp.gt_shift**2).sum(axis=1)), 1.0)
    per_point = w * np.abs(diff).sum(axis=1)
    loss = math.fsum(per_point[fg]) / n_fg
    grad[fg] = -(w[fg, None] * np.sign(diff[fg])) / n_fg
    return loss, grad


def mask_loss(inputs: Sequence[MaskLossInput]) -> tuple[float, list[np.ndarray]]:
    """Binary cross-entropy over instances with IoU above 0.5, normalized by
    the total point count of those instances."""
    grads = [np.zeros_like(m.probs) for m in inputs]
    clamped = [_clamped(m.probs) for m in inputs]
    gated = [k for k, m in enumerate(inputs) if m.iou > MASK_IOU_GATE]
    norm = sum(inputs[k].probs.size for k in gated)
    if norm == 0:
        return 0.0, grads
    terms = []
    for k in gated:
        p, y = clamped[k], inputs[k].labels
        terms.append(math.fsum(y * np.log(p) + (1 - y) * np.log(1 - p)))
        grads[k] = -(y / p - (1 - y) / (1 - p)) * _clip_grad(inputs[k].probs) / norm
    return -math.fsum(terms) / norm, grads


def score_loss(inputs: Sequence[ScoreLossInput]) -> tuple[float, np.ndarray]:
    """Cross-entropy between predicted certainty and IoU target, averaged."""
    if not inputs:
        return 0.0, np.zeros(0)
    raw = np.array([s.score for s in inputs], dtype=np.float64)
    iou = np.array([s.iou for s in inputs], dtype=np.float64)
    if not np.isfinite(iou).all() or (iou < 0).any() or (iou > 1).any():
        raise InputError("iou targets must lie in [0, 1]")
    s = _clamped(raw)
    n = len(inputs)
    loss = -math.fsum(iou * np.log(s) + (1 - iou) * np.log(1 - s)) / n
    grad = -(iou / s - (1 - iou) / (1 - s)) * _clip_grad(raw) / n
    return loss, grad


def semantic_ce_loss(logits, labels) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy; gradient with respect to the logits."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if logits.ndim != 2 or logits.shape[0] != labels.size:
        raise InputError("logits must be (N, C) with one label per row")
    n, c = logits.shape
    if n == 0:
        return 0.0, np.zeros_like(logits)
    if (labels < 0).any() or (labels >= c).any():
        raise InputError(f"labels must lie in [0, {c})")
    z = logits - logits.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1))
    logp = z - logsumexp[:, None]
    rows = np.arange(n)
    loss = -math.fsum(logp[rows, labels]) / n
    grad = np.exp(logp)
    grad[rows, labels] -= 1.0
    return loss, grad / n


def total_loss(seg: float, shift: float, mask: float, score: float) -> float:
    parts = (seg, shift, mask, score)
    if not all(math.isfinite(p) for p in parts):
        raise InputError("loss components must be finite")
    return seg + shift + mask + score
