"""Plain-text point cloud, prediction and result formats.

Cloud file::

    HPC v1 <n_points> <xyz|xyzrgb|xyz+gt|xyzrgb+gt>
    x y z [r g b] [sem_id inst_id]

Prediction file (one line per point, then optional replay instances)::

    sem_id dx dy dz
    ...
    INSTANCE <k> <score>
    <point_index> <mask_prob>

A ``SOFT <n_classes>`` line before the first point switches point lines to
``dx dy dz p_0 ... p_{C-1}``; the label is the arg-max class.

``#`` starts a comment anywhere on a line.  Floats are written in shortest
round-trip form, so write-then-read is lossless.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import Cluster, PointCloud
from .errors import InputError, ParseError
from .point_aggregation import PerPointPrediction
from .refine import ReplayInstance, ScoredInstance

FIELD_LAYOUTS = {"xyz": 3, "xyzrgb": 6, "xyz+gt": 5, "xyzrgb+gt": 8}


def _fmt(v: float) -> str:
    return repr(float(v))


def _content_lines(path):
    """Yield ``(lineno, tokens)`` for non-empty, non-comment lines."""
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if line:
                yield lineno, line.split()


def _floats(path, lineno, tokens):
    try:
        vals = [float(t) for t in tokens]
    except ValueError:
        raise ParseError(path, lineno, f"expected numbers, got {' '.join(tokens)!r}") from None
    if not all(math.isfinite(v) for v in vals):
        raise ParseError(path, lineno, "non-finite value")
    return vals


def _ints(path, lineno, tokens):
    try:
        return [int(t) for t in tokens]
    except ValueError:
        raise ParseError(path, lineno, f"expected integers, got {' '.join(tokens)!r}") from None


def write_cloud(cloud: PointCloud, path) -> None:
    layout = "xyz" + ("rgb" if cloud.colors is not None else "") + ("+gt" if cloud.has_gt else "")
    cols = [cloud.positions]
    if cloud.colors is not None:
        cols.append(cloud.colors)
    rows = []
    floats = np.concatenate(cols, axis=1) if cols else cloud.positions
    for k, row in enumerate(floats):
        line = " ".join(_fmt(v) for v in row)
        if cloud.has_gt:
            line += f" {int(cloud.gt_semantic[k])} {int(cloud.gt_instance[k])}"
        rows.append(line)
    Path(path).write_text(f"HPC v1 {len(cloud)} {layout}\n" + "".join(r + "\n" for r in rows))


def load_cloud(path) -> PointCloud:
    lines = _content_lines(path)
    try:
        lineno, header = next(lines)
    except StopIteration:
        raise ParseError(path, 1, "empty file, expected 'HPC v1 <n> <fields>' header") from None
    if len(header) != 4 or header[0] != "HPC" or header[1] != "v1" or header[3] not in FIELD_LAYOUTS:
        raise ParseError(path, lineno, f"malformed header {' '.join(header)!r}")
    try:
        n = int(header[2])
    except ValueError:
        raise ParseError(path, lineno, f"bad point count {header[2]!r}") from None
    layout = header[3]
    width = FIELD_LAYOUTS[layout]
    has_rgb = "rgb" in layout
    has_gt = layout.endswith("+gt")
    n_float = 6 if has_rgb else 3
    data = np.empty((n, n_float))
    gt = np.empty((n, 2), dtype=np.int64) if has_gt else None
    count = 0
    last = lineno
    for lineno, tokens in lines:
        last = lineno
        if count >= n:
            raise ParseError(path, lineno, f"more than the declared {n} points")
        if len(tokens) != width:
            raise ParseError(path, lineno, f"expected {width} fields for {layout}, got {len(tokens)}")
        data[count] = _floats(path, lineno, tokens[:n_float])
        if has_gt:
            gt[count] = _ints(path, lineno, tokens[n_float:])
        count += 1
    if count != n:
        raise ParseError(path, last + 1, f"expected {n} points, found {count}")
    try:
        return PointCloud(
            data[:, :3],
            data[:, 3:6] if has_rgb else None,
            gt[:, 0] if has_gt else None,
            gt[:, 1] if has_gt else None,
        )
    except InputError as exc:
        raise ParseError(path, 0, str(exc)) from None


@dataclass
class PredictionFile:
    prediction: PerPointPrediction
    instances: dict[int, ReplayInstance] = field(default_factory=dict)


def write_predictions(pred: PerPointPrediction, path, instances: dict[int, ReplayInstance] | None = None) -> None:
    out = [
        f"{int(s)} {_fmt(d[0])} {_fmt(d[1])} {_fmt(d[2])}\n" for s, d in zip(pred.semantic, pred.shift)
    ]
    for k, rec in sorted((instances or {}).items()):
        out.append(f"INSTANCE {k} {_fmt(rec.score)}\n")
        out.extend(f"{i} {_fmt(p)}\n" for i, p in sorted(rec.mask.items()))
    Path(path).write_text("".join(out))


def load_predictions(path, cloud: PointCloud | None = None) -> PredictionFile:
    semantic, shift = [], []
    instances: dict[int, ReplayInstance] = {}
    current: ReplayInstance | None = None
    soft_classes = None
    last = 0
    for lineno, tokens in _content_lines(path):
        last = lineno
        head = tokens[0]
        if head == "SOFT":
            if semantic or current is not None or len(tokens) != 2:
                raise ParseError(path, lineno, "SOFT <n_classes> must precede all point lines")
            soft_classes = _ints(path, lineno, tokens[1:])[0]
            if soft_classes < 1:
                raise ParseError(path, lineno, "SOFT needs at least one class")
            continue
        if head == "INSTANCE":
            if len(tokens) != 3:
                raise ParseError(path, lineno, "expected 'INSTANCE <k> <score>'")
            k = _ints(path, lineno, tokens[1:2])[0]
            score = _floats(path, lineno, tokens[2:])[0]
            if not 0 <= score <= 1:
                raise ParseError(path, lineno, f"score {score} outside [0, 1]")
            if k in instances:
                raise ParseError(path, lineno, f"duplicate INSTANCE {k}")
            current = instances[k] = ReplayInstance(score, {})
            continue
        if current is not None:
            if len(tokens) != 2:
                raise ParseError(path, lineno, "expected '<point_index> <mask_prob>'")
            idx = _ints(path, lineno, tokens[:1])[0]
            prob = _floats(path, lineno, tokens[1:])[0]
            if not 0 <= prob <= 1:
                raise ParseError(path, lineno, f"mask probability {prob} outside [0, 1]")
            current.mask[idx] = prob
            continue
        if soft_classes is None:
            if len(tokens) != 4:
                raise ParseError(path, lineno, f"expected 'sem_id dx dy dz', got {len(tokens)} fields")
            semantic.append(_ints(path, lineno, tokens[:1])[0])
            shift.append(_floats(path, lineno, tokens[1:]))
        else:
            if len(tokens) != 3 + soft_classes:
                raise ParseError(path, lineno, f"expected 'dx dy dz' and {soft_classes} class scores")
            vals = _floats(path, lineno, tokens)
            shift.append(vals[:3])
            semantic.append(int(np.argmax(vals[3:])))
    n = len(semantic)
    if cloud is not None and n != len(cloud):
        raise ParseError(path, last + 1, f"{n} point predictions for a cloud of {len(cloud)} points")
    for k, rec in instances.items():
        bad = [i for i in rec.mask if not 0 <= i < n]
        if bad:
            raise ParseError(path, 0, f"INSTANCE {k} references point {bad[0]} out of range")
    pred = PerPointPrediction(np.array(semantic, dtype=np.int64), np.array(shift).reshape(-1, 3))
    return PredictionFile(pred, instances)


def export_results(ranked: Sequence[ScoredInstance], n_points: int, out_dir, scene: str = "scene") -> Path:
    """Write a benchmark-style submission: ``<scene>.txt`` listing
    ``<relative_mask_path> <class_id> <confidence>`` plus one 0/1 mask file
    per instance, in ranking order."""
    out_dir = Path(out_dir)
    mask_dir = out_dir / "pred_mask"
    try:
        mask_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {mask_dir}: {exc}") from exc
    index_lines = []
    for k, s in enumerate(ranked):
        idx = s.cluster.point_indices
        if idx.size and (idx[-1] >= n_points or idx[0] < 0):
            raise InputError(f"instance {k} references points outside [0, {n_points})")
        mask = np.zeros(n_points, dtype=np.int8)
        mask[idx] = 1
        rel = f"pred_mask/{scene}_{k:03d}.txt"
        (out_dir / rel).write_text("\n".join(map(str, mask.tolist())) + ("\n" if n_points else ""))
        index_lines.append(f"{rel} {s.cluster.semantic} {_fmt(s.score)}\n")
    index = out_dir / f"{scene}.txt"
    index.write_text("".join(index_lines))
    return index


def load_results(out_dir, scene: str = "scene", coords: np.ndarray | None = None) -> list[ScoredInstance]:
    """Parse an exported submission back into ranked scored instances."""
    out_dir = Path(out_dir)
    index = out_dir / f"{scene}.txt"
    ranked = []
    for lineno, tokens in _content_lines(index):
        if len(tokens) != 3:
            raise ParseError(index, lineno, "expected '<mask_path> <class_id> <confidence>'")
        cls = _ints(index, lineno, tokens[1:2])[0]
        score = _floats(index, lineno, tokens[2:])[0]
        mask_path = out_dir / tokens[0]
        bits = [int(t[0]) for _, t in _content_lines(mask_path)]
        idx = np.flatnonzero(np.array(bits, dtype=np.int64))
        if coords is not None:
            cluster = Cluster.from_indices(idx, cls, coords)
        else:
            cluster = Cluster(idx, cls, np.full(3, np.nan))
        ranked.append(ScoredInstance(cluster, score))
    return ranked
