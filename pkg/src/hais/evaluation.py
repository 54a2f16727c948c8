"""Instance segmentation metrics: AP family and coverage/precision/recall."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import InstanceSet
from .refine import ScoredInstance, rank_key

AP_THRESHOLDS = tuple(round(0.5 + 0.05 * k, 2) for k in range(10))
DEFAULT_SIZE_BINS = tuple(float(b) for b in np.logspace(0, 6, 13))


def _iou_matrix(preds: Sequence[ScoredInstance], gts: InstanceSet) -> np.ndarray:
    """IoU of every prediction with every ground-truth instance of the same class."""
    m = np.zeros((len(preds), len(gts)))
    if not len(preds) or not len(gts):
        return m
    n = 1 + max(int(c.point_indices.max()) for c in [*(p.cluster for p in preds), *gts] if c.size)
    owner = np.full(n, -1, dtype=np.int64)
    for j, g in enumerate(gts):
        owner[g.point_indices] = j
    gt_sizes = gts.sizes()
    gt_sem = np.array([g.semantic for g in gts])
    for i, p in enumerate(preds):
        hit = owner[p.cluster.point_indices]
        inter = np.bincount(hit[hit >= 0], minlength=len(gts)).astype(np.float64)
        union = p.size + gt_sizes - inter
        m[i] = np.where(gt_sem == p.cluster.semantic, inter / union, 0.0)
    return m


def match_predictions(
    preds: Sequence[ScoredInstance], gts: InstanceSet, iou_threshold: float, ious=None
) -> tuple[np.ndarray, np.ndarray]:
    """Greedy matching in score order.

    Returns a TP flag per prediction (aligned with ``preds``) and a matched
    flag per ground-truth instance.  Equal scores are processed in a fixed
    canonical order (larger first, then smaller canonical id) so the outcome
    does not depend on how ties were ordered in the input.
    """
    order = sorted(range(len(preds)), key=lambda k: rank_key(preds[k]))
    if ious is None:
        ious = _iou_matrix(preds, gts)
    tp = np.zeros(len(preds), dtype=bool)
    matched = np.zeros(len(gts), dtype=bool)
    for k in order:
        if not len(gts):
            break
        cand = np.where(matched, -1.0, ious[k])
        j = int(np.argmax(cand))
        if cand[j] > 0 and cand[j] >= iou_threshold:
            tp[k] = True
            matched[j] = True
    return tp, matched


def average_precision(tp_flags, scores, n_gt: int) -> float:
    """Area under the precision envelope of the PR curve.

    The curve is sampled only at distinct score thresholds, so permuting
    equally scored predictions leaves the value unchanged.  With no ground
    truth the result is 1.0 when there are also no predictions, else 0.0.
    """
    tp_flags = np.asarray(tp_flags, dtype=bool)
    scores = np.asarray(scores, dtype=np.float64)
    if n_gt == 0:
        return 1.0 if tp_flags.size == 0 else 0.0
    if tp_flags.size == 0:
        return 0.0
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    tp = np.cumsum(tp_flags[order])
    fp = np.cumsum(~tp_flags[order])
    last = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1]
    tp, fp = tp[last].astype(np.float64), fp[last].astype(np.float64)
    precision = tp / (tp + fp)
    recall = tp / n_gt
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    steps = np.diff(np.r_[0.0, recall])
    return float(math.fsum(steps * envelope))


def size_histogram(sizes_or_instances, bins=DEFAULT_SIZE_BINS) -> np.ndarray:
    bins = np.asarray(bins, dtype=np.float64)
    if bins.ndim != 1 or bins.size < 2 or (np.diff(bins) <= 0).any():
        raise ValueError("bins must be strictly increasing with at least two edges")
    if isinstance(sizes_or_instances, InstanceSet):
        sizes = sizes_or_instances.sizes()
    else:
        sizes = np.asarray(list(sizes_or_instances), dtype=np.float64)
    counts, _ = np.histogram(sizes, bins=bins)
    return counts


@dataclass
class CoverageMetrics:
    mcov: float | None
    mwcov: float | None
    mprec: float | None
    mrec: float | None


def coverage_metrics(scenes: Sequence[tuple[Sequence[ScoredInstance], InstanceSet]]) -> CoverageMetrics:
    """Coverage, weighted coverage, precision and recall at IoU 0.5.

    Statistics are pooled over scenes per class, then averaged over classes.
    Coverage and recall average over classes with ground truth; precision
    over classes with ground truth or predictions.
    """
    cov: dict[int, list[float]] = {}
    wcov: dict[int, list[tuple[int, float]]] = {}
    pred_hits: dict[int, list[bool]] = {}
    gt_hits: dict[int, list[bool]] = {}
    for preds, gts in scenes:
        ious = _iou_matrix(preds, gts)
        for j, g in enumerate(gts):
            best = float(ious[:, j].max()) if len(preds) else 0.0
            cov.setdefault(g.semantic, []).append(best)
            wcov.setdefault(g.semantic, []).append((g.size, best))
            gt_hits.setdefault(g.semantic, []).append(best >= 0.5)
        for i, p in enumerate(preds):
            best = float(ious[i].max()) if len(gts) else 0.0
            pred_hits.setdefault(p.cluster.semantic, []).append(best >= 0.5)
    if not cov:
        return CoverageMetrics(None, None, None, None)
    mcov = np.mean([math.fsum(v) / len(v) for v in cov.values()])
    per_class_w = []
    for pairs in wcov.values():
        total = sum(size for size, _ in pairs)
        per_class_w.append(math.fsum(size * iou for size, iou in pairs) / total)
    mwcov = np.mean(per_class_w)
    classes = sorted(set(cov) | set(pred_hits))
    prec = [np.mean(pred_hits[c]) if pred_hits.get(c) else 0.0 for c in classes]
    mrec = np.mean([np.mean(v) for v in gt_hits.values()])
    return CoverageMetrics(float(mcov), float(mwcov), float(np.mean(prec)), float(mrec))


@dataclass
class EvalReport:
    ap_per_class: dict[float, dict[int, float]]
    mcov: float | None
    mwcov: float | None
    mprec: float | None
    mrec: float | None
    pred_size_histogram: np.ndarray
    gt_size_histogram: np.ndarray
    size_bins: tuple = DEFAULT_SIZE_BINS
    n_scenes: int = 0
    extra: dict = field(default_factory=dict)

    def mean_ap(self, threshold: float) -> float | None:
        values = list(self.ap_per_class[threshold].values())
        return float(np.mean(values)) if values else None

    @property
    def ap50(self):
        return self.mean_ap(0.5)

    @property
    def ap25(self):
        return self.mean_ap(0.25)

    @property
    def ap(self):
        """AP averaged over IoU thresholds 0.50:0.05:0.95."""
        vals = [self.mean_ap(t) for t in AP_THRESHOLDS]
        if any(v is None for v in vals):
            return None
        return float(np.mean(vals))

    def class_ap(self, cls: int) -> dict[str, float]:
        return {
            "ap": float(np.mean([self.ap_per_class[t][cls] for t in AP_THRESHOLDS])),
            "ap50": self.ap_per_class[0.5][cls],
            "ap25": self.ap_per_class[0.25][cls],
        }

    def summary(self) -> dict[str, float | None]:
        return {
            "AP": self.ap,
            "AP_50": self.ap50,
            "AP_25": self.ap25,
            "mCov": self.mcov,
            "mWCov": self.mwcov,
            "mPrec": self.mprec,
            "mRec": self.mrec,
        }

    def to_keyvalue(self) -> str:
        lines = [f"scenes = {self.n_scenes}"]
        for k, v in self.summary().items():
            lines.append(f"{k} = {'NA' if v is None else repr(v)}")
        for cls in sorted(self.ap_per_class[0.5]):
            for k, v in self.class_ap(cls).items():
                lines.append(f"class.{cls}.{k} = {v!r}")
        lines.append("size_bins = " + " ".join(repr(b) for b in self.size_bins))
        lines.append("pred_size_histogram = " + " ".join(str(int(c)) for c in self.pred_size_histogram))
        lines.append("gt_size_histogram = " + " ".join(str(int(c)) for c in self.gt_size_histogram))
        return "\n".join(lines) + "\n"

    def to_table(self) -> str:
        fmt = lambda v: "   NA" if v is None else f"{100 * v:5.1f}"  # noqa: E731
        rows = ["class     AP   AP50   AP25"]
        for cls in sorted(self.ap_per_class[0.5]):
            r = self.class_ap(cls)
            rows.append(f"{cls:5d}  {fmt(r['ap'])}  {fmt(r['ap50'])}  {fmt(r['ap25'])}")
        rows.append(f" mean  {fmt(self.ap)}  {fmt(self.ap50)}  {fmt(self.ap25)}")
        rows.append("")
        rows.append(" mCov  mWCov  mPrec   mRec")
        rows.append(f"{fmt(self.mcov)}  {fmt(self.mwcov)}  {fmt(self.mprec)}  {fmt(self.mrec)}")
        return "\n".join(rows) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.to_keyvalue())


def evaluate(
    scenes: Sequence[tuple[Sequence[ScoredInstance], InstanceSet]],
    size_bins=DEFAULT_SIZE_BINS,
) -> EvalReport:
    """AP at 0.25 and 0.50:0.05:0.95 plus coverage metrics over several scenes.

    Per class, predictions of all scenes are pooled into one ranking.
    Classes with neither ground truth nor predictions are left out.
    """
    thresholds = sorted(set(AP_THRESHOLDS) | {0.25})
    classes = sorted(
        {g.semantic for _, gts in scenes for g in gts}
        | {p.cluster.semantic for preds, _ in scenes for p in preds}
    )
    ap_per_class: dict[float, dict[int, float]] = {t: {} for t in thresholds}
    ious = [_iou_matrix(preds, gts) for preds, gts in scenes]
    for t in thresholds:
        flags: dict[int, list] = {c: [] for c in classes}
        scores: dict[int, list] = {c: [] for c in classes}
        n_gt = {c: 0 for c in classes}
        for (preds, gts), m in zip(scenes, ious):
            tp, _ = match_predictions(preds, gts, t, m)
            for p, f in zip(preds, tp):
                flags[p.cluster.semantic].append(bool(f))
                scores[p.cluster.semantic].append(p.score)
            for g in gts:
                n_gt[g.semantic] += 1
        for c in classes:
            ap_per_class[t][c] = average_precision(flags[c], scores[c], n_gt[c])
    cov = coverage_metrics(scenes)
    pred_sizes = [p.size for preds, _ in scenes for p in preds]
    gt_sizes = [g.size for _, gts in scenes for g in gts]
    return EvalReport(
        ap_per_class,
        cov.mcov,
        cov.mwcov,
        cov.mprec,
        cov.mrec,
        size_histogram(pred_sizes, size_bins),
        size_histogram(gt_sizes, size_bins),
        tuple(size_bins),
        len(scenes),
    )
