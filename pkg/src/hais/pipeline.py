"""End-to-end clustering: point aggregation, set aggregation, refinement."""
from __future__ import annotations

import time
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from .core import InstanceSet, PointCloud
from .errors import InputError
from .point_aggregation import PerPointPrediction, apply_shift, point_aggregate
from .refine import HeuristicMaskProvider, MaskProvider, RefineResult, ScoredInstance, refine
from .set_aggregation import AggregationConfig, set_aggregate, split_primary_fragments

STAGES = ("point_wise_prediction", "point_aggregation", "set_aggregation", "intra_instance_prediction")


@dataclass
class PipelineResult:
    ranked: list[ScoredInstance]
    preliminary: InstanceSet
    aggregated: InstanceSet
    unabsorbed: InstanceSet
    refine: RefineResult
    timings_ms: dict[str, float] = field(default_factory=dict)

    def diagnostics(self) -> dict[str, int]:
        return {
            "preliminary": len(self.preliminary),
            "aggregated": len(self.aggregated),
            "unabsorbed_fragments": len(self.unabsorbed),
            "dropped_empty": self.refine.dropped_empty,
            "dropped_small": self.refine.dropped_small,
            "final": len(self.ranked),
        }


class _Timer:
    def __init__(self):
        self.ms: dict[str, float] = {}

    @contextmanager
    def stage(self, name):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.ms[name] = self.ms.get(name, 0.0) + 1e3 * (time.perf_counter() - t0)


def cluster_instances(
    cloud: PointCloud,
    pred: PerPointPrediction,
    config: AggregationConfig,
    threads: int = 1,
    timer: _Timer | None = None,
):
    """Point aggregation followed by optional set aggregation.

    Returns ``(preliminary, aggregated, unabsorbed, shifted)``.  Without set
    aggregation every preliminary cluster is passed on unchanged.
    """
    timer = timer or _Timer()
    if len(pred) != len(cloud):
        raise InputError(f"{len(pred)} predictions for {len(cloud)} points")
    with timer.stage("point_aggregation"):
        shifted = apply_shift(cloud.positions, pred.shift)
        prelim = point_aggregate(
            shifted, pred.semantic, config.background_classes, config.r_point, threads=threads
        )
    with timer.stage("set_aggregation"):
        if not config.set_aggregation:
            return prelim, prelim, InstanceSet([]), shifted
        space = shifted if config.coord_space == "shifted" else cloud.positions
        if config.coord_space == "original":
            prelim_space = InstanceSet(
                [type(c).from_indices(c.point_indices, c.semantic, space) for c in prelim]
            )
        else:
            prelim_space = prelim
        primaries, fragments = split_primary_fragments(prelim_space, config.primary_size_threshold)
        result = set_aggregate(primaries, fragments, config, coords=space)
    return prelim, result.instances, result.unabsorbed, shifted


def run_pipeline(
    cloud: PointCloud,
    pred: PerPointPrediction,
    config: AggregationConfig | None = None,
    provider: MaskProvider | None = None,
    threads: int = 1,
    timer: _Timer | None = None,
) -> PipelineResult:
    config = config or AggregationConfig()
    provider = provider or HeuristicMaskProvider()
    timer = timer or _Timer()
    prelim, aggregated, unabsorbed, _ = cluster_instances(cloud, pred, config, threads, timer)
    with timer.stage("intra_instance_prediction"):
        refined = refine(
            cloud,
            aggregated,
            provider,
            config.mask_threshold,
            config.min_final_points,
            threads=threads,
        )
    return PipelineResult(refined.ranked, prelim, aggregated, unabsorbed, refined, dict(timer.ms))


def ranked_signature(ranked) -> list[tuple]:
    """Comparable form of a ranked prediction list (for determinism checks)."""
    return [(s.cluster.point_indices.tolist(), s.cluster.semantic, s.score) for s in ranked]


def remap_ranked(ranked, perm: np.ndarray) -> list[tuple]:
    """Signature of ``ranked`` computed on a permuted cloud, mapped back to the
    original point order (``perm[k]`` is the original index of new point k)."""
    return [
        (sorted(perm[s.cluster.point_indices].tolist()), s.cluster.semantic, s.score) for s in ranked
    ]
