"""Synthetic scenes with ground truth and controllably degraded predictions.

Scenes are a floor patch (background class 0) with primitive objects
scattered on it.  Objects are separated by at least ``gap`` meters between
bounding spheres, so oracle predictions cluster back to the exact ground
truth.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .core import PointCloud
from .errors import ConfigError, GenerationError, InputError, ParseError
from .point_aggregation import PerPointPrediction

SHAPES = ("box", "sphere", "plane")
BACKGROUND_CLASS = 0


@dataclass
class SceneSpec:
    n_instances: tuple[int, int] = (4, 8)
    # class id -> (min points, max points)
    class_sizes: dict[int, tuple[int, int]] = field(
        default_factory=lambda: {1: (300, 1500), 2: (800, 3000), 3: (150, 600)}
    )
    # class id -> shape primitive
    class_shapes: dict[int, str] = field(default_factory=lambda: {1: "box", 2: "sphere", 3: "plane"})
    # class id -> (min, max) object half-size in meters
    class_scales: dict[int, tuple[float, float]] = field(
        default_factory=lambda: {1: (0.3, 0.5), 2: (0.4, 0.7), 3: (0.2, 0.4)}
    )
    extent: tuple[float, float] = (8.0, 8.0)
    background_fraction: float = 0.2
    surface_noise: float = 0.005
    gap: float = 0.2
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.n_instances
        if lo < 1 or hi < lo:
            raise ConfigError(f"bad n_instances range {self.n_instances}")
        if not self.class_sizes:
            raise ConfigError("at least one object class is required")
        for cls, (a, b) in self.class_sizes.items():
            if cls == BACKGROUND_CLASS or a < 1 or b < a:
                raise ConfigError(f"bad size range {(a, b)} for class {cls}")
            if self.class_shapes.get(cls, "box") not in SHAPES:
                raise ConfigError(f"unknown shape for class {cls}")
            s0, s1 = self.class_scales.get(cls, (0.3, 0.5))
            if not 0 < s0 <= s1:
                raise ConfigError(f"bad scale range for class {cls}")
        if min(self.extent) <= 0:
            raise ConfigError("extent must be positive")
        if not 0 <= self.background_fraction < 1:
            raise ConfigError("background_fraction must lie in [0, 1)")
        if self.surface_noise < 0 or self.gap < 0:
            raise ConfigError("surface_noise and gap must be non-negative")


@dataclass
class NoiseSpec:
    shift_noise_sigma: float = 0.0
    shift_dropout_fraction: float = 0.0
    semantic_error_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.shift_noise_sigma >= 0:
            raise ConfigError("shift_noise_sigma must be >= 0")
        for name in ("shift_dropout_fraction", "semantic_error_rate"):
            if not 0 <= getattr(self, name) <= 1:
                raise ConfigError(f"{name} must lie in [0, 1]")


def _sample_shape(rng, shape: str, half: float, n: int, noise: float) -> np.ndarray:
    if shape == "sphere":
        v = rng.normal(size=(n, 3))
        pts = half * v / np.linalg.norm(v, axis=1, keepdims=True)
    elif shape == "box":
        # surface of a cube, faces picked proportionally (equal areas)
        face = rng.integers(0, 6, n)
        uv = rng.uniform(-half, half, (n, 2))
        axis = face // 2
        sign = np.where(face % 2 == 0, -half, half)
        pts = np.empty((n, 3))
        for a in range(3):
            others = [k for k in range(3) if k != a]
            sel = axis == a
            pts[sel, a] = sign[sel]
            pts[sel, others[0]] = uv[sel, 0]
            pts[sel, others[1]] = uv[sel, 1]
    elif shape == "plane":
        # vertical panel
        pts = np.stack(
            [rng.uniform(-half, half, n), np.zeros(n), rng.uniform(-half, half, n)], axis=1
        )
    else:
        raise ConfigError(f"unknown shape {shape!r}")
    return pts + rng.normal(scale=noise, size=pts.shape) if noise > 0 else pts


def generate_scene(spec: SceneSpec, scene_index: int = 0, max_tries: int = 200) -> PointCloud:
    """Sample one scene; randomness derives from ``(spec.seed, scene_index)``."""
    rng = np.random.default_rng([spec.seed, scene_index])
    classes = sorted(spec.class_sizes)
    n_inst = int(rng.integers(spec.n_instances[0], spec.n_instances[1] + 1))
    placed: list[tuple[np.ndarray, float]] = []
    chunks, sem, inst, colors = [], [], [], []
    for k in range(n_inst):
        cls = classes[int(rng.integers(len(classes)))]
        lo, hi = spec.class_sizes[cls]
        n = int(rng.integers(lo, hi + 1))
        s0, s1 = spec.class_scales.get(cls, (0.3, 0.5))
        half = float(rng.uniform(s0, s1))
        bound = half * math.sqrt(3.0)
        for _ in range(max_tries):
            xy = rng.uniform([bound, bound], [spec.extent[0] - bound, spec.extent[1] - bound])
            center = np.array([xy[0], xy[1], half + spec.gap])
            if all(np.linalg.norm(center - c) >= bound + b + spec.gap for c, b in placed):
                break
        else:
            raise GenerationError(f"could not place instance {k} after {max_tries} tries")
        if bound * 2 > min(spec.extent):
            raise GenerationError("object larger than the scene extent")
        placed.append((center, bound))
        pts = _sample_shape(rng, spec.class_shapes.get(cls, "box"), half, n, spec.surface_noise)
        chunks.append(pts + center)
        sem.append(np.full(n, cls))
        inst.append(np.full(n, k))
        colors.append(np.tile(rng.uniform(0.2, 1.0, 3), (n, 1)))
    n_obj = sum(len(c) for c in chunks)
    n_bg = int(round(n_obj * spec.background_fraction / (1 - spec.background_fraction)))
    floor = np.stack(
        [
            rng.uniform(0, spec.extent[0], n_bg),
            rng.uniform(0, spec.extent[1], n_bg),
            rng.normal(scale=spec.surface_noise, size=n_bg) if spec.surface_noise else np.zeros(n_bg),
        ],
        axis=1,
    )
    chunks.append(floor)
    sem.append(np.full(n_bg, BACKGROUND_CLASS))
    inst.append(np.full(n_bg, -1))
    colors.append(np.full((n_bg, 3), 0.5))
    return PointCloud(
        np.concatenate(chunks),
        np.concatenate(colors),
        np.concatenate(sem).astype(np.int64),
        np.concatenate(inst).astype(np.int64),
    )


def oracle_predictions(cloud: PointCloud) -> PerPointPrediction:
    """Ground-truth labels and exact offsets to each instance centroid."""
    if not cloud.has_gt:
        raise InputError("oracle predictions need ground-truth labels")
    shift = np.zeros_like(cloud.positions)
    for inst in cloud.gt_instances():
        idx = inst.point_indices
        shift[idx] = inst.center - cloud.positions[idx]
    return PerPointPrediction(cloud.gt_semantic.copy(), shift)


def degrade_predictions(pred: PerPointPrediction, noise: NoiseSpec, classes=None) -> PerPointPrediction:
    """Add Gaussian shift noise, zero a fraction of shifts and flip labels.

    Flipped labels are drawn uniformly from ``classes`` (default: the labels
    present in ``pred``) excluding the original one.
    """
    rng = np.random.default_rng([noise.seed, 0x5EED])
    n = len(pred)
    shift = pred.shift.copy()
    semantic = pred.semantic.copy()
    if noise.shift_noise_sigma > 0:
        shift += rng.normal(scale=noise.shift_noise_sigma, size=shift.shape)
    if noise.shift_dropout_fraction > 0:
        drop = rng.random(n) < noise.shift_dropout_fraction
        shift[drop] = 0.0
    if noise.semantic_error_rate > 0:
        pool = np.unique(semantic) if classes is None else np.unique(np.asarray(classes))
        if pool.size > 1:
            flip = np.flatnonzero(rng.random(n) < noise.semantic_error_rate)
            draw = rng.integers(0, pool.size - 1, flip.size)
            pos = np.searchsorted(pool, semantic[flip])
            # skip the original class by shifting draws at or past its slot
            semantic[flip] = pool[draw + (draw >= pos)]
    return PerPointPrediction(semantic, shift)


# A corpus where noisy center offsets break large objects into a dense core
# holding under half the points plus many fragments around it.
FRAGMENTATION_SCENE = dict(
    n_instances=(4, 6),
    class_sizes={1: (3000, 5000), 2: (3000, 5000)},
    class_shapes={1: "box", 2: "sphere"},
    class_scales={1: (0.4, 0.6), 2: (0.4, 0.6)},
    extent=(8.0, 8.0),
    background_fraction=0.2,
)
FRAGMENTATION_NOISE = dict(shift_noise_sigma=0.15, shift_dropout_fraction=0.1, semantic_error_rate=0.0)


def fragmentation_case(seed: int) -> tuple[PointCloud, PerPointPrediction]:
    cloud = generate_scene(SceneSpec(seed=seed, **FRAGMENTATION_SCENE))
    pred = degrade_predictions(oracle_predictions(cloud), NoiseSpec(seed=seed, **FRAGMENTATION_NOISE))
    return cloud, pred


def fragmentation_class_radii(n_scenes: int = 5, statistic: str = "mean") -> dict[int, float]:
    """Class radii from ground truth of held-out fragmentation scenes (seeds 10000+)."""
    from .set_aggregation import compute_class_radii

    scenes = (generate_scene(SceneSpec(seed=10_000 + k, **FRAGMENTATION_SCENE)) for k in range(n_scenes))
    return compute_class_radii(scenes, statistic)


# --- key = value spec files -------------------------------------------------

def _parse_range(text: str, cast):
    parts = text.split()
    if len(parts) == 1:
        return cast(parts[0]), cast(parts[0])
    if len(parts) != 2:
        raise ValueError(f"expected 'lo hi', got {text!r}")
    return cast(parts[0]), cast(parts[1])


def _parse_class_map(text: str, cast):
    out = {}
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        key, value = item.split(":", 1)
        out[int(key)] = cast(value.strip())
    return out


def parse_keyvalue(text: str, path="<string>") -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(path, lineno, f"expected 'key = value', got {raw!r}")
        key, value = (t.strip() for t in line.split("=", 1))
        if key in out:
            raise ParseError(path, lineno, f"duplicate key {key!r}")
        out[key] = value
    return out


_RANGE_INT = lambda v: _parse_range(v, int)  # noqa: E731
_RANGE_FLOAT = lambda v: _parse_range(v, float)  # noqa: E731
_SCENE_KEYS = {
    "n_instances": _RANGE_INT,
    "class_sizes": lambda v: _parse_class_map(v, _RANGE_INT),
    "class_shapes": lambda v: _parse_class_map(v, str),
    "class_scales": lambda v: _parse_class_map(v, _RANGE_FLOAT),
    "extent": _RANGE_FLOAT,
    "background_fraction": float,
    "surface_noise": float,
    "gap": float,
    "seed": int,
}
_NOISE_KEYS = {
    "shift_noise_sigma": float,
    "shift_dropout_fraction": float,
    "semantic_error_rate": float,
    "seed": int,
}


def _build(cls, keys, values: dict[str, str], path):
    kwargs = {}
    for key, raw in values.items():
        if key not in keys:
            raise ParseError(path, 0, f"unknown key {key!r} for {cls.__name__}")
        try:
            kwargs[key] = keys[key](raw)
        except ValueError as exc:
            raise ParseError(path, 0, f"bad value for {key}: {exc}") from None
    return cls(**kwargs)


def load_scene_spec(path) -> tuple[SceneSpec, NoiseSpec | None]:
    """Read a scene spec file; keys prefixed ``noise.`` build a NoiseSpec."""
    values = parse_keyvalue(Path(path).read_text(), path)
    scene = {k: v for k, v in values.items() if not k.startswith("noise.")}
    noise = {k[len("noise."):]: v for k, v in values.items() if k.startswith("noise.")}
    spec = _build(SceneSpec, _SCENE_KEYS, scene, path)
    return spec, (_build(NoiseSpec, _NOISE_KEYS, noise, path) if noise else None)


def format_scene_spec(spec: SceneSpec, noise: NoiseSpec | None = None) -> str:
    rng = lambda r: f"{r[0]} {r[1]}"  # noqa: E731
    cmap = lambda m, f: ", ".join(f"{k}:{f(v)}" for k, v in sorted(m.items()))  # noqa: E731
    lines = [
        f"n_instances = {rng(spec.n_instances)}",
        f"class_sizes = {cmap(spec.class_sizes, lambda r: f'{r[0]} {r[1]}')}",
        f"class_shapes = {cmap(spec.class_shapes, str)}",
        f"class_scales = {cmap(spec.class_scales, lambda r: f'{r[0]!r} {r[1]!r}')}",
        f"extent = {rng(spec.extent)}",
        f"background_fraction = {spec.background_fraction!r}",
        f"surface_noise = {spec.surface_noise!r}",
        f"gap = {spec.gap!r}",
        f"seed = {spec.seed}",
    ]
    if noise is not None:
        lines += [f"noise.{f.name} = {getattr(noise, f.name)!r}" for f in fields(noise)]
    return "\n".join(lines) + "\n"
