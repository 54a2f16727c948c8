"""Per-instance mask filtering, certainty scores and NMS-free ranking."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Protocol, Sequence

import numpy as np

from .core import Cluster, InstanceSet, PointCloud, exact_mean
from .errors import ConfigError, InputError, InvariantViolation


@dataclass
class ScoredInstance:
    cluster: Cluster
    score: float

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise InputError(f"score {self.score} outside [0, 1]")

    @property
    def size(self) -> int:
        return self.cluster.size


class MaskProvider(Protocol):
    """Produces per-member foreground probabilities and a certainty score."""

    def __call__(self, cloud: PointCloud, instance: Cluster) -> tuple[np.ndarray, float]: ...


def _check_mask(instance: Cluster, mask) -> np.ndarray:
    mask = np.asarray(mask, dtype=np.float64).reshape(-1)
    if mask.size != instance.size:
        raise InputError(f"mask has {mask.size} entries for an instance of {instance.size} points")
    if not ((mask >= 0) & (mask <= 1)).all():
        raise InputError("mask probabilities must lie in [0, 1]")
    return mask


def apply_mask(instance: Cluster, mask, threshold: float, coords: np.ndarray | None = None) -> Cluster:
    """Keep members whose probability is at least ``threshold``.

    The center is recomputed from ``coords`` when given.  The result may be
    empty.
    """
    mask = _check_mask(instance, mask)
    kept = instance.point_indices[mask >= threshold]
    if kept.size == instance.size:
        return instance
    if coords is not None:
        return Cluster.from_indices(kept, instance.semantic, coords, instance.source_id)
    center = instance.center if kept.size else np.full(3, np.nan)
    return Cluster(kept, instance.semantic, center, instance.source_id)


def heuristic_mask(cloud: PointCloud, instance: Cluster, scale: float = 2.5) -> np.ndarray:
    """``exp(-(d / (scale * radius))**2)`` with ``d`` the distance to the centroid
    and ``radius`` the mean such distance, both in original coordinates."""
    if instance.size == 0:
        raise InputError("heuristic mask of an empty instance")
    if not scale > 0:
        raise ConfigError("scale must be positive")
    pts = cloud.positions[instance.point_indices]
    d = np.sqrt(((pts - exact_mean(pts)) ** 2).sum(axis=1))
    radius = math.fsum(d) / len(d)
    if radius == 0.0:
        return np.ones(len(d))
    return np.exp(-((d / (scale * radius)) ** 2))


class HeuristicMaskProvider:
    """Geometric stand-in for a learned mask head; score is the mean probability."""

    def __init__(self, scale: float = 2.5):
        if not scale > 0:
            raise ConfigError("scale must be positive")
        self.scale = scale

    def __call__(self, cloud, instance):
        mask = heuristic_mask(cloud, instance, self.scale)
        return mask, math.fsum(mask) / len(mask)


class IdentityMaskProvider:
    """Keeps every point; scores by nothing (constant 1.0)."""

    def __call__(self, cloud, instance):
        return np.ones(instance.size), 1.0


def instance_iou(a, b) -> float:
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    a = np.unique(a)
    b = np.unique(b)
    inter = np.intersect1d(a, b, assume_unique=True).size
    union = a.size + b.size - inter
    return inter / union if union else 0.0


def best_match_gt(pred: Cluster, gts: InstanceSet) -> tuple[int | None, float]:
    """Ground-truth instance with the highest IoU; ties go to the smaller id.

    The id is ``source_id`` when present (ground-truth instance id), else the
    cluster's canonical id.
    """
    best_id, best_iou = None, 0.0
    for gt in gts:
        gid = gt.source_id if gt.source_id is not None else gt.cid
        iou = instance_iou(pred.point_indices, gt.point_indices)
        if iou > best_iou or (iou == best_iou and iou > 0 and best_id is not None and gid < best_id):
            best_id, best_iou = gid, iou
    return best_id, best_iou


class OracleMaskProvider:
    """Mask = membership in the best-matching ground-truth instance;
    score = IoU of the masked instance with that instance."""

    def __init__(self, cloud: PointCloud):
        self.gts = cloud.gt_instances()
        self._by_id = {g.source_id: g for g in self.gts}

    def __call__(self, cloud, instance):
        gid, _ = best_match_gt(instance, self.gts)
        if gid is None:
            return np.zeros(instance.size), 0.0
        gt = self._by_id[gid]
        mask = np.isin(instance.point_indices, gt.point_indices).astype(np.float64)
        kept = instance.point_indices[mask > 0]
        return mask, instance_iou(kept, gt.point_indices)


@dataclass
class ReplayInstance:
    """Externally computed mask and score for one proposal."""

    score: float
    mask: dict[int, float]  # point index -> foreground probability


class ReplayMaskProvider:
    """Replays masks and scores from a prediction file.

    A pipeline instance is paired with the recorded instance sharing the most
    points with it (ties: lower record number).  Members absent from that
    record get probability 0; with no overlapping record the instance is
    rejected.
    """

    def __init__(self, records: Mapping[int, ReplayInstance]):
        self.records = dict(sorted(records.items()))

    def __call__(self, cloud, instance):
        members = instance.point_indices.tolist()
        best, best_overlap = None, 0
        for k, rec in self.records.items():
            overlap = sum(1 for i in members if i in rec.mask)
            if overlap > best_overlap:
                best, best_overlap = k, overlap
        if best is None:
            return np.zeros(instance.size), 0.0
        rec = self.records[best]
        return np.array([rec.mask.get(i, 0.0) for i in members]), rec.score


def check_pairwise_disjoint(instances: Sequence[Cluster]) -> None:
    if not instances:
        return
    allidx = np.concatenate([c.point_indices for c in instances])
    if np.unique(allidx).size != allidx.size:
        raise InvariantViolation("instances overlap; ranking without suppression requires disjoint input")


def rank_key(s: ScoredInstance):
    return (-s.score, -s.size, s.cluster.cid)


def rank_and_filter(scored: Sequence[ScoredInstance], min_points: int = 100) -> list[ScoredInstance]:
    """Drop instances under ``min_points`` and sort by descending score
    (ties: larger first, then smaller canonical id).  Nothing is suppressed."""
    check_pairwise_disjoint([s.cluster for s in scored])
    kept = [s for s in scored if s.size >= min_points]
    return sorted(kept, key=rank_key)


@dataclass
class RefineResult:
    ranked: list[ScoredInstance]
    dropped_empty: int
    dropped_small: int


def refine(
    cloud: PointCloud,
    instances: InstanceSet,
    provider: MaskProvider,
    mask_threshold: float = 0.5,
    min_points: int = 100,
    coords: np.ndarray | None = None,
    threads: int = 1,
) -> RefineResult:
    """Mask every instance, score it and rank the survivors."""
    coords = cloud.positions if coords is None else coords

    def one(inst):
        mask, score = provider(cloud, inst)
        return apply_mask(inst, mask, mask_threshold, coords), float(score)

    if threads > 1 and len(instances) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, instances))
    else:
        results = [one(inst) for inst in instances]
    scored = [ScoredInstance(c, s) for c, s in results if c.size]
    dropped_empty = len(results) - len(scored)
    ranked = rank_and_filter(scored, min_points)
    return RefineResult(ranked, dropped_empty, len(scored) - len(ranked))
