import re

import numpy as np
import pytest

from hais.cli import main
from hais.io import load_cloud, load_results, write_cloud, write_predictions
from hais.set_aggregation import write_class_radii
from hais.synth import SceneSpec, format_scene_spec, fragmentation_case, fragmentation_class_radii


@pytest.fixture
def oracle_scene(tmp_path):
    spec = tmp_path / "scene.spec"
    spec.write_text(format_scene_spec(SceneSpec(seed=4, n_instances=(3, 5))))
    assert main(["synth", str(spec), "-o", str(tmp_path / "data"), "--count", "2"]) == 0
    return tmp_path / "data"


def test_synth_writes_files(oracle_scene, capsys):
    names = sorted(p.name for p in oracle_scene.iterdir())
    assert names == ["scene_0000.cloud", "scene_0000.pred", "scene_0001.cloud", "scene_0001.pred"]


def test_cluster_eval_oracle(oracle_scene, tmp_path, capsys):
    out = tmp_path / "results"
    for k in range(2):
        stem = oracle_scene / f"scene_{k:04d}"
        code = main(["cluster", f"{stem}.cloud", f"{stem}.pred", "-o", str(out), "--mask-provider", "oracle"])
        assert code == 0
    report = tmp_path / "report.txt"
    clouds = [str(oracle_scene / f"scene_{k:04d}.cloud") for k in range(2)]
    assert main(["eval", str(out), *clouds, "--out", str(report)]) == 0
    text = report.read_text()
    for key in ("AP_50", "AP_25", "mCov", "mPrec", "mRec"):
        assert f"{key} = 1.0\n" in text
    assert "mean" in capsys.readouterr().out


def test_cluster_report_json(oracle_scene, tmp_path):
    stem = oracle_scene / "scene_0000"
    rep = tmp_path / "diag.json"
    assert main(["cluster", f"{stem}.cloud", f"{stem}.pred", "-o", str(tmp_path / "r"), "--report", str(rep)]) == 0
    assert '"timings_ms"' in rep.read_text()


@pytest.fixture
def fragmenting(tmp_path):
    cloud, pred = fragmentation_case(1)
    write_cloud(cloud, tmp_path / "frag.cloud")
    write_predictions(pred, tmp_path / "frag.pred")
    write_class_radii(fragmentation_class_radii(), tmp_path / "radii.tsv")
    return tmp_path


def _count(out_dir, scene="frag"):
    return len((out_dir / f"{scene}.txt").read_text().splitlines())


def test_no_set_aggregation_gives_more_instances(fragmenting):
    d = fragmenting
    base = [str(d / "frag.cloud"), str(d / "frag.pred"), "--class-radii", str(d / "radii.tsv"), "--min-points", "1"]
    assert main(["cluster", *base, "-o", str(d / "with")]) == 0
    assert main(["cluster", *base, "-o", str(d / "without"), "--no-set-aggregation"]) == 0
    assert _count(d / "without") > _count(d / "with")


def test_threads_identical_exports(fragmenting, monkeypatch):
    d = fragmenting
    base = [str(d / "frag.cloud"), str(d / "frag.pred"), "--class-radii", str(d / "radii.tsv")]
    outs = []
    for t in ("1", "2", "8"):
        out = d / f"t{t}"
        assert main(["cluster", *base, "-o", str(out), "--threads", t]) == 0
        outs.append(out)
    ref = (outs[0] / "frag.txt").read_text()
    for out in outs[1:]:
        assert (out / "frag.txt").read_text() == ref
        for f in (outs[0] / "pred_mask").iterdir():
            assert (out / "pred_mask" / f.name).read_text() == f.read_text()
    monkeypatch.setenv("HAIS_THREADS", "2")
    assert main(["cluster", *base, "-o", str(d / "env"), "--threads", "1"]) == 0
    assert (d / "env" / "frag.txt").read_text() == ref


def test_config_file_and_precedence(fragmenting):
    d = fragmenting
    cfg = d / "run.cfg"
    cfg.write_text(f"class_radii = {d / 'radii.tsv'}\nmin_points = 1\nno_set_aggregation = true\n")
    args = [str(d / "frag.cloud"), str(d / "frag.pred"), "--config", str(cfg)]
    assert main(["cluster", *args, "-o", str(d / "cfg")]) == 0
    assert main(["cluster", *args, "-o", str(d / "flag"), "--min-points", "100"]) == 0
    assert _count(d / "flag") < _count(d / "cfg")
    cfg.write_text("nonsense = 1\n")
    assert main(["cluster", *args, "-o", str(d / "bad")]) == 2


def test_class_radii_command(oracle_scene, tmp_path, capsys):
    out = tmp_path / "radii.tsv"
    assert main(["class-radii", str(oracle_scene / "scene_0000.cloud"), "-o", str(out)]) == 0
    rows = [line.split("\t") for line in out.read_text().splitlines()]
    assert rows and all(len(r) == 2 and float(r[1]) > 0 for r in rows)


def test_loss_check(capsys):
    assert main(["loss-check", "--trials", "5"]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 6 and "FAIL" not in out


def test_bench_stages_sum_to_total(capsys):
    assert main(["bench", "--points", "20000"]) == 0
    out = capsys.readouterr().out
    ms = dict(re.findall(r"^(\w+)\s+([\d.]+) ms$", out, re.M))
    stages = ["point_wise_prediction", "point_aggregation", "set_aggregation", "intra_instance_prediction"]
    assert set(stages) <= set(ms)
    total = float(ms["total"])
    assert abs(sum(float(ms[s]) for s in stages) - total) <= 0.05 * total


def test_usage_errors(tmp_path, capsys):
    with pytest.raises(SystemExit) as info:
        main(["cluster", "--bogus-flag"])
    assert info.value.code != 0
    with pytest.raises(SystemExit):
        main([])
    assert main(["cluster", str(tmp_path / "missing.cloud"), str(tmp_path / "x.pred"), "-o", str(tmp_path)]) == 2
    assert "error" in capsys.readouterr().err


def test_parse_error_exit_code(tmp_path, capsys):
    (tmp_path / "c.cloud").write_text("HPC v1 3 xyz\n0 0 0\n")
    (tmp_path / "p.pred").write_text("1 0 0 0\n")
    assert main(["cluster", str(tmp_path / "c.cloud"), str(tmp_path / "p.pred"), "-o", str(tmp_path / "o")]) == 2
    assert "c.cloud:3:" in capsys.readouterr().err


def test_replay_mask_provider(tmp_path):
    pos = np.zeros((120, 3))
    pos[:, 0] = np.arange(120) * 0.001
    from hais.core import PointCloud
    from hais.point_aggregation import PerPointPrediction
    from hais.refine import ReplayInstance

    cloud = PointCloud(pos)
    write_cloud(cloud, tmp_path / "c.cloud")
    pred = PerPointPrediction(np.ones(120, dtype=int), np.zeros((120, 3)))
    rec = {0: ReplayInstance(0.7, {i: (1.0 if i < 110 else 0.1) for i in range(120)})}
    write_predictions(pred, tmp_path / "p.pred", rec)
    assert main(["cluster", str(tmp_path / "c.cloud"), str(tmp_path / "p.pred"), "-o", str(tmp_path / "o")]) == 0
    back = load_results(tmp_path / "o", "c")
    assert len(back) == 1 and back[0].size == 110 and back[0].score == 0.7
    assert len(load_cloud(tmp_path / "c.cloud")) == 120
