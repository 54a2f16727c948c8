import numpy as np
import pytest

from hais.errors import ConfigError, GenerationError, InputError, ParseError
from hais.core import PointCloud
from hais.point_aggregation import point_aggregate
from hais.synth import (
    NoiseSpec,
    SceneSpec,
    degrade_predictions,
    format_scene_spec,
    fragmentation_class_radii,
    generate_scene,
    load_scene_spec,
    oracle_predictions,
    parse_keyvalue,
)


def single(shape="sphere", n=100, **kw):
    return SceneSpec(n_instances=(1, 1), class_sizes={1: (n, n)}, class_shapes={1: shape}, **kw)


def test_single_instance():
    cloud = generate_scene(single(background_fraction=0.0))
    assert len(cloud) == 100
    assert set(cloud.gt_instance.tolist()) == {0} and set(cloud.gt_semantic.tolist()) == {1}


def test_background_points():
    cloud = generate_scene(single(background_fraction=0.5))
    assert len(cloud) == 200
    bg = cloud.gt_instance == -1
    assert bg.sum() == 100 and (cloud.gt_semantic[bg] == 0).all()


def test_deterministic():
    a = generate_scene(SceneSpec(seed=5), 3)
    b = generate_scene(SceneSpec(seed=5), 3)
    for f in ("positions", "colors", "gt_semantic", "gt_instance"):
        assert np.array_equal(getattr(a, f), getattr(b, f))
    c = generate_scene(SceneSpec(seed=5), 4)
    assert len(c) != len(a) or not np.array_equal(a.positions, c.positions)


def test_sizes_within_ranges():
    spec = SceneSpec(n_instances=(10, 10), seed=2)
    cloud = generate_scene(spec)
    ids = np.unique(cloud.gt_instance[cloud.gt_instance >= 0])
    assert len(ids) == 10
    for k in ids:
        m = cloud.gt_instance == k
        lo, hi = spec.class_sizes[int(cloud.gt_semantic[m][0])]
        assert lo <= m.sum() <= hi


def test_instances_separated():
    cloud = generate_scene(SceneSpec(n_instances=(8, 8), seed=3))
    pred = oracle_predictions(cloud)
    inst = cloud.gt_instances()
    # object gaps exceed r_point
    for a in inst:
        for b in inst:
            if a.cid < b.cid:
                d = np.linalg.norm(cloud.positions[a.point_indices][:, None] - cloud.positions[b.point_indices][None], axis=2)
                assert d.min() > 0.03
    assert len(pred) == len(cloud)


def test_packing_failure():
    spec = SceneSpec(n_instances=(30, 30), extent=(2.0, 2.0), class_scales={1: (0.4, 0.4), 2: (0.4, 0.4), 3: (0.4, 0.4)})
    with pytest.raises(GenerationError):
        generate_scene(spec, max_tries=20)


def test_spec_validation():
    with pytest.raises(ConfigError):
        SceneSpec(n_instances=(3, 1))
    with pytest.raises(ConfigError):
        SceneSpec(class_shapes={1: "torus"})
    with pytest.raises(ConfigError):
        SceneSpec(class_sizes={0: (1, 2)})
    with pytest.raises(ConfigError):
        NoiseSpec(shift_dropout_fraction=1.5)
    with pytest.raises(ConfigError):
        NoiseSpec(shift_noise_sigma=-1)


def test_oracle_predictions_collapse():
    cloud = generate_scene(SceneSpec(seed=7))
    pred = oracle_predictions(cloud)
    shifted = cloud.positions + pred.shift
    for inst in cloud.gt_instances():
        p = shifted[inst.point_indices]
        assert np.abs(p - p[0]).max() < 1e-9
    bg = cloud.gt_instance < 0
    assert not pred.shift[bg].any() and (pred.semantic[bg] == 0).all()
    with pytest.raises(InputError):
        oracle_predictions(PointCloud(cloud.positions))


def test_oracle_closure():
    for seed in range(5):
        cloud = generate_scene(SceneSpec(seed=seed))
        pred = oracle_predictions(cloud)
        got = point_aggregate(cloud.positions + pred.shift, pred.semantic)
        assert got.partition() == cloud.gt_instances().partition()


def test_degrade_identity_and_dropout():
    cloud = generate_scene(SceneSpec(seed=1))
    pred = oracle_predictions(cloud)
    same = degrade_predictions(pred, NoiseSpec())
    assert np.array_equal(same.shift, pred.shift) and np.array_equal(same.semantic, pred.semantic)
    gone = degrade_predictions(pred, NoiseSpec(shift_dropout_fraction=1.0))
    assert not gone.shift.any()


def test_degrade_label_flips():
    cloud = generate_scene(SceneSpec(seed=1))
    pred = oracle_predictions(cloud)
    out = degrade_predictions(pred, NoiseSpec(semantic_error_rate=1.0, seed=4))
    assert (out.semantic != pred.semantic).all()
    assert set(out.semantic.tolist()) <= set(pred.semantic.tolist())
    again = degrade_predictions(pred, NoiseSpec(semantic_error_rate=1.0, seed=4))
    assert np.array_equal(out.semantic, again.semantic)
    some = degrade_predictions(pred, NoiseSpec(semantic_error_rate=0.1, seed=4))
    assert 0.05 < (some.semantic != pred.semantic).mean() < 0.15


def _clusters_per_instance(sigma, seeds):
    counts = []
    spec = dict(n_instances=(1, 1), class_sizes={1: (5000, 5000)}, class_shapes={1: "box"}, background_fraction=0.0)
    for seed in seeds:
        cloud = generate_scene(SceneSpec(seed=seed, **spec))
        pred = degrade_predictions(oracle_predictions(cloud), NoiseSpec(shift_noise_sigma=sigma, seed=seed))
        counts.append(len(point_aggregate(cloud.positions + pred.shift, pred.semantic)))
    return counts


def test_sigma_fragments_large_instance():
    assert all(c > 1 for c in _clusters_per_instance(0.05, range(20)))


def test_fragmentation_dial_monotone():
    means = [np.mean(_clusters_per_instance(s, range(20))) for s in (0.0, 0.01, 0.03, 0.05)]
    assert means[0] == 1.0
    assert all(a <= b for a, b in zip(means, means[1:]))


def test_fragmentation_radii():
    radii = fragmentation_class_radii()
    assert sorted(radii) == [1, 2] and all(0.2 < v < 1.0 for v in radii.values())


def test_parse_keyvalue():
    text = "# comment\n a = 1 \n\nb=x y  # trailing\n"
    assert parse_keyvalue(text) == {"a": "1", "b": "x y"}
    with pytest.raises(ParseError, match=":2:"):
        parse_keyvalue("a = 1\nno equals here\n", "f.txt")
    with pytest.raises(ParseError):
        parse_keyvalue("a = 1\na = 2\n")


def test_spec_file_roundtrip(tmp_path):
    spec = SceneSpec(n_instances=(2, 3), class_sizes={1: (100, 200), 4: (50, 60)},
                     class_shapes={1: "plane", 4: "sphere"}, class_scales={1: (0.1, 0.2), 4: (1e-05, 0.5)},
                     surface_noise=1e-3, seed=9)
    noise = NoiseSpec(0.02, 0.1, 0.05, seed=3)
    path = tmp_path / "s.spec"
    path.write_text(format_scene_spec(spec, noise))
    got, got_noise = load_scene_spec(path)
    assert got == spec and got_noise == noise
    path.write_text(format_scene_spec(spec))
    assert load_scene_spec(path) == (spec, None)


def test_spec_file_errors(tmp_path):
    path = tmp_path / "bad.spec"
    path.write_text("n_instances = 2 3\nbogus = 1\n")
    with pytest.raises(ParseError):
        load_scene_spec(path)
    path.write_text("class_sizes = 1 10\n")
    with pytest.raises(ParseError):
        load_scene_spec(path)
