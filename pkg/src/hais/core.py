"""Geometric primitives: point clouds, clusters, a spatial hash grid and union-find.

Positions are stored as ``(N, 3)`` float64 arrays; a single ``Vec3`` is a
length-3 array.  Every operation here is deterministic and independent of
input ordering where the contract says so (cluster ids are always the
smallest member index).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components as _csgraph_components

from .errors import ConfigError, InputError, InvariantViolation

Vec3 = np.ndarray


def as_positions(positions, name: str = "positions") -> np.ndarray:
    """Coerce to a finite ``(N, 3)`` float64 array or raise :class:`InputError`."""
    arr = np.asarray(positions, dtype=np.float64)
    if arr.size == 0:
        return arr.reshape(0, 3)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise InputError(f"{name} must have shape (N, 3), got {arr.shape}")
    if not np.isfinite(arr).all():
        bad = int(np.flatnonzero(~np.isfinite(arr).all(axis=1))[0])
        raise InputError(f"{name}: non-finite coordinate at index {bad}")
    return arr


def exact_mean(values: np.ndarray) -> np.ndarray:
    """Column means of a 2-D array using correctly rounded sums.

    ``math.fsum`` makes the result independent of row order, which keeps
    cluster centers bitwise stable under point permutations.
    """
    n = values.shape[0]
    return np.array([math.fsum(values[:, k]) / n for k in range(values.shape[1])])


def centroid(positions, subset: Sequence[int] | np.ndarray) -> Vec3:
    subset = np.asarray(subset, dtype=np.int64)
    if subset.size == 0:
        raise InputError("centroid of an empty subset is undefined")
    pos = np.asarray(positions, dtype=np.float64)
    return exact_mean(pos[subset])


@dataclass
class PointCloud:
    positions: np.ndarray
    colors: np.ndarray | None = None
    gt_semantic: np.ndarray | None = None
    gt_instance: np.ndarray | None = None

    def __post_init__(self):
        self.positions = as_positions(self.positions)
        n = len(self.positions)
        if self.colors is not None:
            self.colors = np.asarray(self.colors, dtype=np.float64).reshape(-1, 3)
            if len(self.colors) != n:
                raise InputError(f"colors has {len(self.colors)} rows, expected {n}")
            if not np.isfinite(self.colors).all():
                raise InputError("colors contain non-finite values")
            if ((self.colors < 0) | (self.colors > 1)).any():
                raise InputError("colors must lie in [0, 1]")
        for name in ("gt_semantic", "gt_instance"):
            value = getattr(self, name)
            if value is None:
                continue
            value = np.asarray(value, dtype=np.int64).reshape(-1)
            if len(value) != n:
                raise InputError(f"{name} has {len(value)} entries, expected {n}")
            setattr(self, name, value)
        if (self.gt_semantic is None) != (self.gt_instance is None):
            raise InputError("gt_semantic and gt_instance must be given together")
        if self.has_gt:
            inst = self.gt_instance
            valid = inst >= 0
            if valid.any():
                pairs = np.unique(np.stack([inst[valid], self.gt_semantic[valid]], axis=1), axis=0)
                ids, counts = np.unique(pairs[:, 0], return_counts=True)
                if (counts > 1).any():
                    raise InputError(
                        f"instance {int(ids[counts > 1][0])} spans several semantic classes"
                    )

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def has_gt(self) -> bool:
        return self.gt_instance is not None

    def gt_instances(self) -> "InstanceSet":
        """Ground-truth instances as clusters; ``Cluster.semantic`` is the class,
        the instance id is kept in ``Cluster.source_id``."""
        if not self.has_gt:
            raise InputError("point cloud carries no ground truth")
        return InstanceSet.from_labels(
            self.gt_instance, self.positions, semantic=self.gt_semantic, keep_ids=True
        )

    def permuted(self, perm: np.ndarray) -> "PointCloud":
        """Copy with points reordered so that new point ``k`` is old point ``perm[k]``."""
        pick = lambda a: None if a is None else a[perm]  # noqa: E731
        return PointCloud(
            self.positions[perm], pick(self.colors), pick(self.gt_semantic), pick(self.gt_instance)
        )


@dataclass
class Cluster:
    """A set of point indices with a class label and a center.

    ``point_indices`` is sorted and duplicate-free.  ``source_id`` carries an
    external identifier (ground-truth instance id) where one exists.
    """

    point_indices: np.ndarray
    semantic: int
    center: np.ndarray
    source_id: int | None = None

    @classmethod
    def from_indices(cls, indices, semantic: int, coords: np.ndarray, source_id=None) -> "Cluster":
        idx = np.unique(np.asarray(indices, dtype=np.int64))
        center = exact_mean(coords[idx]) if idx.size else np.full(3, np.nan)
        return cls(idx, int(semantic), center, source_id)

    @property
    def size(self) -> int:
        return int(self.point_indices.size)

    @property
    def cid(self) -> int:
        """Canonical id: smallest member index (-1 when empty)."""
        return int(self.point_indices[0]) if self.point_indices.size else -1

    def members(self) -> frozenset:
        return frozenset(self.point_indices.tolist())

    def __eq__(self, other):
        if not isinstance(other, Cluster):
            return NotImplemented
        return (
            self.semantic == other.semantic
            and np.array_equal(self.point_indices, other.point_indices)
            and np.array_equal(self.center, other.center, equal_nan=True)
        )


@dataclass
class InstanceSet:
    """Disjoint clusters ordered by canonical id."""

    clusters: list[Cluster] = field(default_factory=list)

    def __post_init__(self):
        self.clusters = sorted(self.clusters, key=lambda c: c.cid)

    @classmethod
    def from_labels(cls, labels, coords, semantic=None, keep_ids=False) -> "InstanceSet":
        """Group points by a per-point label array; negative labels are skipped.

        ``semantic`` gives the per-point class; every group takes the class of
        its first member.
        """
        labels = np.asarray(labels, dtype=np.int64)
        keep = np.flatnonzero(labels >= 0)
        if keep.size == 0:
            return cls([])
        order = keep[np.argsort(labels[keep], kind="stable")]
        sorted_labels = labels[order]
        cuts = np.flatnonzero(np.diff(sorted_labels)) + 1
        clusters = []
        for group in np.split(order, cuts):
            lab = int(labels[group[0]])
            sem = int(semantic[group[0]]) if semantic is not None else lab
            clusters.append(Cluster.from_indices(group, sem, coords, lab if keep_ids else None))
        return cls(clusters)

    def __len__(self) -> int:
        return len(self.clusters)

    def __iter__(self) -> Iterator[Cluster]:
        return iter(self.clusters)

    def __getitem__(self, k) -> Cluster:
        return self.clusters[k]

    def sizes(self) -> np.ndarray:
        return np.array([c.size for c in self.clusters], dtype=np.int64)

    def partition(self) -> frozenset:
        return frozenset(c.members() for c in self.clusters)

    def point_labels(self, n: int) -> np.ndarray:
        """Per-point canonical cluster id, -1 for unassigned points."""
        out = np.full(n, -1, dtype=np.int64)
        for c in self.clusters:
            out[c.point_indices] = c.cid
        return out

    def check_disjoint(self) -> None:
        if not self.clusters:
            return
        allidx = np.concatenate([c.point_indices for c in self.clusters])
        if np.unique(allidx).size != allidx.size:
            raise InvariantViolation("clusters overlap")


class SpatialHashGrid:
    """Uniform grid bucketing point indices by ``floor(p / cell_size)``.

    Buckets are stored as one index array sorted by cell and then by point
    index, plus a lookup from cell coordinate to its slice.
    """

    def __init__(self, positions, cell_size: float):
        if not (cell_size > 0) or not math.isfinite(cell_size):
            raise ConfigError(f"cell_size must be positive, got {cell_size}")
        self.positions = as_positions(positions)
        self.cell_size = float(cell_size)
        self.cell_coords = np.floor(self.positions / self.cell_size).astype(np.int64)
        c = self.cell_coords
        self.order = np.lexsort((np.arange(len(c)), c[:, 2], c[:, 1], c[:, 0]))
        self._slices: dict[tuple[int, int, int], tuple[int, int]] = {}
        if len(c):
            sc = c[self.order]
            cuts = np.flatnonzero((np.diff(sc, axis=0) != 0).any(axis=1)) + 1
            starts = np.concatenate([[0], cuts])
            ends = np.concatenate([cuts, [len(sc)]])
            for s, e in zip(starts.tolist(), ends.tolist()):
                self._slices[tuple(sc[s].tolist())] = (s, e)

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def cells(self) -> dict[tuple[int, int, int], list[int]]:
        return {k: self.order[s:e].tolist() for k, (s, e) in self._slices.items()}

    def cell_of(self, index: int) -> tuple[int, int, int]:
        return tuple(self.cell_coords[index].tolist())

    def points_in_cell(self, cell) -> np.ndarray:
        s, e = self._slices.get(tuple(cell), (0, 0))
        return self.order[s:e]


def build_spatial_hash(positions, cell_size: float) -> SpatialHashGrid:
    return SpatialHashGrid(positions, cell_size)


def neighbors_within(grid: SpatialHashGrid, query_index: int, radius: float) -> np.ndarray:
    """Indices ``j != query_index`` with ``|p_j - p_i| < radius``, ascending.

    The test is done on squared distances, ``dx*dx + dy*dy + dz*dz < r*r``,
    the same expression every clustering routine in the package uses.
    """
    n = len(grid)
    if not 0 <= query_index < n:
        raise IndexError(f"query index {query_index} out of range for {n} points")
    k = max(1, math.ceil(radius / grid.cell_size))
    cx, cy, cz = grid.cell_of(query_index)
    found = []
    for dx in range(-k, k + 1):
        for dy in range(-k, k + 1):
            for dz in range(-k, k + 1):
                members = grid.points_in_cell((cx + dx, cy + dy, cz + dz))
                if members.size:
                    found.append(members)
    if not found:
        return np.empty(0, dtype=np.int64)
    cand = np.sort(np.concatenate(found))
    d = grid.positions[cand] - grid.positions[query_index]
    d2 = d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1] + d[:, 2] * d[:, 2]
    hit = (d2 < radius * radius) & (cand != query_index)
    return cand[hit]


class UnionFind:
    """Disjoint sets with path halving and union by rank.

    ``component_labels`` canonicalizes each set to its smallest element.
    """

    def __init__(self, n: int):
        self.parent = list(range(n))
        self.rank = [0] * n

    def __len__(self) -> int:
        return len(self.parent)

    def find(self, a: int) -> int:
        parent = self.parent
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    def union(self, a: int, b: int) -> int:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return ra
        if self.rank[ra] < self.rank[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        if self.rank[ra] == self.rank[rb]:
            self.rank[ra] += 1
        return ra

    def component_labels(self) -> list[int]:
        smallest: dict[int, int] = {}
        roots = [self.find(i) for i in range(len(self.parent))]
        for i, r in enumerate(roots):
            smallest.setdefault(r, i)
        return [smallest[r] for r in roots]


def canonical_labels(labels: np.ndarray) -> np.ndarray:
    """Relabel arbitrary component ids so each id is the component's smallest index."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        return labels.copy()
    _, first = np.unique(labels, return_index=True)
    remap = np.empty(labels.max() + 1, dtype=np.int64)
    remap[labels[first]] = first
    return remap[labels]


def connected_components(n: int, edges: Iterable[tuple[int, int]] | np.ndarray) -> np.ndarray:
    """Component id per node; the id of a component is its smallest node index."""
    e = np.asarray(list(edges) if not isinstance(edges, np.ndarray) else edges, dtype=np.int64)
    e = e.reshape(-1, 2)
    if e.size and (e.min() < 0 or e.max() >= n):
        raise IndexError(f"edge endpoint out of range for {n} nodes")
    if n == 0:
        return np.empty(0, dtype=np.int64)
    graph = coo_matrix((np.ones(len(e), dtype=np.int8), (e[:, 0], e[:, 1])), shape=(n, n))
    _, labels = _csgraph_components(graph, directed=False)
    return canonical_labels(labels)
