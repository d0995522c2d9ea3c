import json

import numpy as np
import pytest

from tightbox.cli import EXIT_PRESEG, main
from tightbox.fixtures import CATALOG, write_fixture
from tightbox.pipeline import PipelineConfig, PipelineError, load_config, run_batch, run_pipeline

from conftest import fixture


def shape_dir(tmp_path, name, mode="clean"):
    return write_fixture(fixture(name), tmp_path / "shapes" / name, mode)


def cfg_for(d, out, **kw):
    return PipelineConfig(input=str(d / "mesh.json"), presegs=str(d / "presegs.json"),
                          labels=str(d / "labels.json"), out_dir=str(out), grid=32, **kw)


def test_plus_merge_only(tmp_path):
    d = shape_dir(tmp_path, "plus_shape")
    m = run_pipeline(cfg_for(d, tmp_path / "out", stages="merge"))
    assert m["n_box"] == 3 and m["cov"] == 1.0
    for f in ("boxes.json", "boxes.obj", "metrics.json", "trace.jsonl"):
        assert (tmp_path / "out" / f).exists()
    assert json.loads((tmp_path / "out" / "metrics.json").read_text())["n_box"] == 3


def test_mcts_not_worse_than_refine_on_rotated_leg_table(tmp_path):
    d = shape_dir(tmp_path, "rotated_leg_table", "over_merged")
    ref = run_pipeline(cfg_for(d, tmp_path / "ref", stages="refine"))
    mc = run_pipeline(cfg_for(d, tmp_path / "mc", stages="mcts", mcts_iters=40, mcts_horizon=8))
    assert mc["tgt"] <= ref["tgt"] + 1e-9
    assert mc["cov"] == 1.0 and ref["cov"] == 1.0
    log = (tmp_path / "mc" / "mcts_log.csv").read_text().splitlines()
    assert log[0] == "iteration,best_score,elapsed" and len(log) == 42


def test_byte_identical_boxes(tmp_path):
    d = shape_dir(tmp_path, "table", "under_covered")
    for out in ("a", "b"):
        run_pipeline(cfg_for(d, tmp_path / out, stages="mcts", mcts_iters=15, mcts_horizon=6, seed=7))
    assert (tmp_path / "a" / "boxes.json").read_bytes() == (tmp_path / "b" / "boxes.json").read_bytes()


def test_failed_stage_marker(tmp_path):
    d = shape_dir(tmp_path, "l_shape")
    with pytest.raises(PipelineError) as ei:
        run_pipeline(cfg_for(d, tmp_path / "out").with_overrides(presegs=str(d / "nope.json")))
    assert ei.value.stage == "load"
    err = json.loads((tmp_path / "out" / "metrics.json").read_text())
    assert err["failed_stage"] == "load" and err["error"] == "PresegNotFound"


def test_cli_run_and_missing_preseg(tmp_path, capsys):
    d = shape_dir(tmp_path, "l_shape")
    rc = main(["run", "--input", str(d / "mesh.json"), "--presegs", str(d / "presegs.json"),
               "--stages", "refine", "--grid", "24", "--out-dir", str(tmp_path / "o")])
    assert rc == 0
    assert json.loads(capsys.readouterr().out)["cov"] == 1.0
    rc = main(["run", "--input", str(d / "mesh.json"), "--presegs", str(tmp_path / "missing.json"),
               "--out-dir", str(tmp_path / "o2")])
    assert rc == EXIT_PRESEG == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "PresegNotFound" and err["failed_stage"] == "load"


def test_cli_bad_config(tmp_path, capsys):
    assert main(["run", "--input", "x", "--grid", "2"]) == 1
    assert "InvalidConfig" in capsys.readouterr().err


def test_config_file_with_overrides(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text('stages = "merge"\nepsilon_merge = -0.004\nalpha = "inf"\nseed = 3\n')
    cfg = load_config(p).with_overrides(seed=9, grid=None)
    assert cfg.stages == "merge" and cfg.epsilon_merge == -0.004 and cfg.hard and cfg.seed == 9
    q = tmp_path / "c.json"
    q.write_text(json.dumps({"mcts_iters": 12}))
    assert load_config(q).mcts_iters == 12
    with pytest.raises(ValueError):
        PipelineConfig().with_overrides(bogus=1)


@pytest.mark.slow
def test_batch_catalog_with_one_corrupt(tmp_path):
    root = tmp_path / "shapes"
    for name in sorted(CATALOG):
        write_fixture(fixture(name), root / name, "clean")
    cfg = PipelineConfig(out_dir=str(tmp_path / "out"), stages="merge", grid=24, jobs=1)
    agg = run_batch(root, cfg)
    assert agg["n_shapes"] == 6 and agg["n_ok"] == 6 and len(agg["reports"]) == 6
    assert (tmp_path / "out" / "aggregate.json").exists()
    assert set(agg["means"]) >= {"tgt", "cov", "tov", "viou"}
    (root / "h_shape" / "mesh.json").write_text("{ not json")
    agg = run_batch(root, cfg)
    assert agg["n_ok"] == 5 and [f["shape"] for f in agg["failures"]] == ["h_shape"]


def test_batch_empty_dir(tmp_path, capsys):
    (tmp_path / "empty").mkdir()
    rc = main(["batch", "--input", str(tmp_path / "empty"), "--out-dir", str(tmp_path / "out")])
    assert rc == 0
    agg = json.loads((tmp_path / "out" / "aggregate.json").read_text())
    assert agg["n_shapes"] == 0 and agg["failures"] == []


def test_generate_subcommand(tmp_path):
    assert main(["generate", "--out-dir", str(tmp_path), "--names", "unit_cube", "l_shape"]) == 0
    assert (tmp_path / "l_shape" / "mesh.json").exists()
    labels = json.loads((tmp_path / "l_shape" / "labels.json").read_text())["labels"]
    assert np.array_equal(labels, fixture("l_shape").labels.labels)
