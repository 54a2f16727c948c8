"""Merge small fragments into nearby primary instances with a dynamic bandwidth."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .core import Cluster, InstanceSet, PointCloud, exact_mean
from .errors import ConfigError, InputError, InvariantViolation, ParseError

log = logging.getLogger(__name__)

RADIUS_STATISTICS = ("mean", "rms", "max")
COORD_SPACES = ("shifted", "original")


@dataclass
class AggregationConfig:
    r_point: float = 0.03
    alpha: float = 0.01
    primary_size_threshold: int = 100
    class_radii: dict[int, float] = field(default_factory=dict)
    min_final_points: int = 100
    mask_threshold: float = 0.5
    background_classes: tuple[int, ...] = (0,)
    set_aggregation: bool = True
    coord_space: str = "shifted"

    def __post_init__(self):
        for name in ("r_point", "alpha"):
            value = getattr(self, name)
            if not (value > 0) or not math.isfinite(value):
                raise ConfigError(f"{name} must be positive, got {value}")
        if self.primary_size_threshold < 1:
            raise ConfigError("primary_size_threshold must be >= 1")
        if self.min_final_points < 1:
            raise ConfigError("min_final_points must be >= 1")
        if not 0 < self.mask_threshold < 1:
            raise ConfigError(f"mask_threshold must lie in (0, 1), got {self.mask_threshold}")
        if self.coord_space not in COORD_SPACES:
            raise ConfigError(f"coord_space must be one of {COORD_SPACES}")
        self.class_radii = {int(k): float(v) for k, v in self.class_radii.items()}
        if any(not (v >= 0) for v in self.class_radii.values()):
            raise ConfigError("class radii must be non-negative")
        self.background_classes = tuple(sorted(int(c) for c in self.background_classes))


def split_primary_fragments(instances: InstanceSet, threshold: int) -> tuple[InstanceSet, InstanceSet]:
    if threshold < 1:
        raise ConfigError("threshold must be >= 1")
    prim = [c for c in instances if c.size >= threshold]
    frag = [c for c in instances if c.size < threshold]
    return InstanceSet(prim), InstanceSet(frag)


def instance_radius(coords: np.ndarray, statistic: str = "mean") -> float:
    """Spread of a point set around its centroid."""
    d = np.sqrt(((coords - exact_mean(coords)) ** 2).sum(axis=1))
    if statistic == "mean":
        return math.fsum(d) / len(d)
    if statistic == "rms":
        return math.sqrt(math.fsum(d * d) / len(d))
    if statistic == "max":
        return float(d.max())
    raise ConfigError(f"unknown radius statistic {statistic!r}; choose from {RADIUS_STATISTICS}")


def compute_class_radii(corpus: Iterable[PointCloud], statistic: str = "mean") -> dict[int, float]:
    """Average ground-truth instance radius per semantic class."""
    per_class: dict[int, list[float]] = {}
    seen = False
    for cloud in corpus:
        seen = True
        for inst in cloud.gt_instances():
            radius = instance_radius(cloud.positions[inst.point_indices], statistic)
            per_class.setdefault(inst.semantic, []).append(radius)
    if not seen:
        raise ConfigError("class radii need a non-empty ground-truth corpus")
    return {k: math.fsum(v) / len(v) for k, v in sorted(per_class.items())}


def write_class_radii(radii: Mapping[int, float], path) -> None:
    lines = [f"{int(k)}\t{float(v)!r}\n" for k, v in sorted(radii.items())]
    Path(path).write_text("".join(lines))


def read_class_radii(path) -> dict[int, float]:
    radii = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split("\t") if "\t" in line else line.split()
        try:
            cls, radius = int(parts[0]), float(parts[1])
        except (IndexError, ValueError):
            raise ParseError(path, lineno, f"expected 'class_id<TAB>radius', got {raw!r}") from None
        if len(parts) != 2 or not math.isfinite(radius) or radius < 0:
            raise ParseError(path, lineno, f"bad class radius row {raw!r}")
        radii[cls] = radius
    return radii


def dynamic_bandwidth(primary: Cluster, alpha: float, class_radii: Mapping[int, float]) -> float:
    """``max(alpha * sqrt(size), r_cls)``; classes without a radius use 0."""
    if primary.size < 1:
        raise InputError("bandwidth of an empty primary instance")
    if not alpha > 0:
        raise ConfigError("alpha must be positive")
    r_cls = class_radii.get(primary.semantic)
    if r_cls is None:
        log.warning("no class radius for class %d; using size term only", primary.semantic)
        r_cls = 0.0
    return max(alpha * math.sqrt(primary.size), r_cls)


@dataclass
class SetAggregationResult:
    instances: InstanceSet
    unabsorbed: InstanceSet
    # fragment cid -> primary cid it joined
    assignment: dict[int, int]


def set_aggregate(
    primaries: InstanceSet,
    fragments: InstanceSet,
    config: AggregationConfig,
    coords: np.ndarray | None = None,
) -> SetAggregationResult:
    """Attach each fragment to its nearest same-class primary if the center
    distance is under that primary's bandwidth.

    Centers and bandwidths are taken from the primaries before any merging.
    Equidistant primaries resolve to the smaller canonical id.  ``coords``
    is used to recompute centers of the grown instances; without it the
    original primary centers are kept.
    """
    prim = list(primaries)
    frag = list(fragments)
    if prim and frag:
        p_idx = np.concatenate([c.point_indices for c in prim])
        f_idx = np.concatenate([c.point_indices for c in frag])
        if np.intersect1d(p_idx, f_idx).size:
            raise InvariantViolation("primary instances and fragments overlap")

    assignment: dict[int, int] = {}
    unabsorbed = []
    if prim:
        p_center = np.array([c.center for c in prim])
        p_label = np.array([c.semantic for c in prim])
        p_bw = np.array([dynamic_bandwidth(c, config.alpha, config.class_radii) for c in prim])
    for f in frag:
        if not prim:
            unabsorbed.append(f)
            continue
        cand = np.flatnonzero(p_label == f.semantic)
        if cand.size == 0:
            unabsorbed.append(f)
            continue
        d = p_center[cand] - f.center
        dist = np.sqrt(d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1] + d[:, 2] * d[:, 2])
        best = cand[int(np.argmin(dist))]  # first minimum == smallest cid
        if dist.min() < p_bw[best]:
            assignment[f.cid] = prim[best].cid
        else:
            unabsorbed.append(f)

    by_primary: dict[int, list[np.ndarray]] = {}
    frag_by_cid = {f.cid: f for f in frag}
    for fcid, pcid in assignment.items():
        by_primary.setdefault(pcid, []).append(frag_by_cid[fcid].point_indices)
    grown = []
    for p in prim:
        extra = by_primary.get(p.cid)
        if not extra:
            grown.append(p)
            continue
        idx = np.concatenate([p.point_indices, *extra])
        if coords is not None:
            grown.append(Cluster.from_indices(idx, p.semantic, coords))
        else:
            grown.append(Cluster(np.sort(idx), p.semantic, p.center.copy()))
    return SetAggregationResult(InstanceSet(grown), InstanceSet(unabsorbed), assignment)
