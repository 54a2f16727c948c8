"""Shift points toward predicted centers and group them with a fixed bandwidth."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ._kernels import radius_components
from .core import Cluster, InstanceSet, as_positions, connected_components
from .errors import ConfigError, InputError

__all__ = [
    "PerPointPrediction",
    "Cluster",
    "InstanceSet",
    "apply_shift",
    "point_aggregate",
    "point_aggregate_bruteforce",
]


@dataclass
class PerPointPrediction:
    """Hard semantic label and center-shift vector for every point."""

    semantic: np.ndarray
    shift: np.ndarray

    def __post_init__(self):
        self.semantic = np.asarray(self.semantic, dtype=np.int64).reshape(-1)
        self.shift = as_positions(self.shift, "shift")
        if len(self.semantic) != len(self.shift):
            raise InputError(
                f"{len(self.semantic)} semantic labels but {len(self.shift)} shift vectors"
            )

    def __len__(self) -> int:
        return len(self.semantic)


def apply_shift(positions, shifts) -> np.ndarray:
    positions = as_positions(positions)
    shifts = as_positions(shifts, "shifts")
    if positions.shape != shifts.shape:
        raise InputError(f"{len(positions)} positions but {len(shifts)} shifts")
    return positions + shifts


def _foreground(semantic: np.ndarray, background_classes) -> np.ndarray:
    bg = np.asarray(sorted(background_classes), dtype=np.int64)
    return (semantic >= 0) & ~np.isin(semantic, bg)


def _check_inputs(shifted, semantic, r_point):
    shifted = as_positions(shifted, "shifted")
    semantic = np.asarray(semantic, dtype=np.int64).reshape(-1)
    if len(semantic) != len(shifted):
        raise InputError(f"{len(shifted)} points but {len(semantic)} labels")
    if not (r_point > 0) or not math.isfinite(r_point):
        raise ConfigError(f"r_point must be positive, got {r_point}")
    return shifted, semantic


# Sub-cells of side r/sqrt(3), shrunk so that rounding in floor(p / side) and
# in the squared distance can never put two points of one sub-cell at >= r.
_SUBCELL_FACTOR = (1.0 - 1e-9) / math.sqrt(3.0)
_SUBCELL_MAX_RATIO = 1e6


def _label_components(coords: np.ndarray, r_point: float) -> np.ndarray:
    if coords.size and np.abs(coords).max() / r_point < _SUBCELL_MAX_RATIO:
        side, reach, merge = r_point * _SUBCELL_FACTOR, 2, True
    else:
        side, reach, merge = r_point, 1, False
    cells = np.floor(coords / side).astype(np.int64)
    if cells.size:
        cells -= cells.min(axis=0)
        span = cells.max(axis=0).astype(float) + 2 * reach + 1
        if span.prod() >= 2.0**62:
            raise ConfigError("point extent too large for r_point; cell keys would overflow")
    return radius_components(coords, cells, r_point * r_point, reach, merge)


def _clusters_from_components(idx, local_labels, label, coords) -> list[Cluster]:
    order = np.argsort(local_labels, kind="stable")
    cuts = np.flatnonzero(np.diff(local_labels[order])) + 1
    return [Cluster.from_indices(idx[g], label, coords) for g in np.split(order, cuts)]


def point_aggregate(
    shifted,
    semantic,
    background_classes=(0,),
    r_point: float = 0.03,
    threads: int = 1,
) -> InstanceSet:
    """Connected components over foreground points joined when they share a
    label and lie closer than ``r_point`` in shifted space.

    Labels are independent subproblems, so ``threads > 1`` clusters them
    concurrently; the result does not depend on ``threads``.
    """
    shifted, semantic = _check_inputs(shifted, semantic, r_point)
    fg = _foreground(semantic, background_classes)
    labels = np.unique(semantic[fg]).tolist()

    def run(label):
        idx = np.flatnonzero(semantic == label)
        comp = _label_components(np.ascontiguousarray(shifted[idx]), r_point)
        return _clusters_from_components(idx, comp, label, shifted)

    if threads > 1 and len(labels) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, labels))
    else:
        parts = [run(label) for label in labels]
    return InstanceSet([c for part in parts for c in part])


def point_aggregate_bruteforce(
    shifted,
    semantic,
    background_classes=(0,),
    r_point: float = 0.03,
) -> InstanceSet:
    """Reference implementation: all-pairs distance matrix, then components."""
    shifted, semantic = _check_inputs(shifted, semantic, r_point)
    fg = np.flatnonzero(_foreground(semantic, background_classes))
    if fg.size == 0:
        return InstanceSet([])
    p = shifted[fg]
    d = p[:, None, :] - p[None, :, :]
    d2 = d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1] + d[..., 2] * d[..., 2]
    lab = semantic[fg]
    adj = (d2 < r_point * r_point) & (lab[:, None] == lab[None, :])
    i, j = np.nonzero(np.triu(adj, k=1))
    comp = connected_components(len(fg), np.stack([i, j], axis=1))
    per_point = np.full(len(semantic), -1, dtype=np.int64)
    per_point[fg] = fg[comp]
    return InstanceSet.from_labels(per_point, shifted, semantic=semantic)
