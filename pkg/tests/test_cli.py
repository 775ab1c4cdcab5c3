"""Command-line interface: subcommands, file formats, exit codes."""

import json

import numpy as np
import pytest

from gpusched.cli import main
from gpusched.costmodel import load_weights

from conftest import CHAIN2_SRC


@pytest.fixture
def pipeline_file(tmp_path):
    p = tmp_path / "chain2.pipeline"
    p.write_text(CHAIN2_SRC)
    return str(p)


@pytest.fixture
def thresholds_file(tmp_path):
    p = tmp_path / "thresholds.txt"
    p.write_text("recompute_factor = 1e9\nmin_blocks_per_sm_factor = 0\n"
                 "warp_utilization_floor = 0\nthread_alloc_bytes = 1000000000\n")
    return str(p)


def _schedule_args(pipeline_file, thresholds_file, *extra):
    return ["schedule", pipeline_file, "--thresholds", thresholds_file,
            "--beam-size", "4", "--passes", "1", *extra]


def test_schedule_beam_writes_dump(pipeline_file, thresholds_file, tmp_path, capsys):
    out = tmp_path / "best.schedule"
    rc = main(_schedule_args(pipeline_file, thresholds_file, "--out", str(out)))
    assert rc == 0
    text = capsys.readouterr().out
    assert "predicted cost" in text
    assert out.read_text().strip()


def test_schedule_dump_options(pipeline_file, thresholds_file, capsys):
    rc = main(["schedule", pipeline_file, "--dump-options"])
    assert rc == 0
    out = capsys.readouterr().out
    assert "placements=" in out and "serial_tilings=" in out


def test_schedule_one_shot_mode(pipeline_file, thresholds_file, capsys):
    rc = main(_schedule_args(pipeline_file, thresholds_file,
                             "--mode", "one_shot", "--samples", "3"))
    assert rc == 0
    assert "predicted cost" in capsys.readouterr().out


def test_schedule_top_k_mode(pipeline_file, thresholds_file, capsys):
    rc = main(_schedule_args(pipeline_file, thresholds_file,
                             "--mode", "top_k", "--samples", "4", "-k", "2"))
    assert rc == 0


def _make_dump(pipeline_file, thresholds_file, tmp_path):
    out = tmp_path / "s.schedule"
    assert main(_schedule_args(pipeline_file, thresholds_file,
                               "--out", str(out))) == 0
    return str(out)


def test_featurize_output(pipeline_file, thresholds_file, tmp_path, capsys):
    dump = _make_dump(pipeline_file, thresholds_file, tmp_path)
    capsys.readouterr()
    rc = main(["featurize", pipeline_file, "--schedule", dump])
    assert rc == 0
    out = capsys.readouterr().out
    assert "feature_version" in out
    assert "num_threads_per_block" in out


def test_predict_output(pipeline_file, thresholds_file, tmp_path, capsys):
    dump = _make_dump(pipeline_file, thresholds_file, tmp_path)
    capsys.readouterr()
    rc = main(["predict", pipeline_file, "--schedule", dump])
    assert rc == 0
    out = capsys.readouterr().out
    assert "total:" in out and "compute=" in out


def test_train_then_predict_with_weights(pipeline_file, thresholds_file,
                                         tmp_path, capsys):
    dump = _make_dump(pipeline_file, thresholds_file, tmp_path)
    dataset = tmp_path / "dataset"
    dataset.mkdir()
    for i, rt in enumerate([1e-5, 4e-5]):
        (dataset / f"s{i}.json").write_text(json.dumps({
            "pipeline": pipeline_file,
            "schedule": open(dump).read(),
            "runtime": rt,
        }))
    weights_path = tmp_path / "model.weights"
    rc = main(["train", "--dataset", str(dataset), "--out", str(weights_path),
               "--epochs", "3"])
    assert rc == 0
    w = load_weights(weights_path)
    assert all(np.isfinite(t).all() for t in w.tensors.values())
    capsys.readouterr()
    rc = main(["predict", pipeline_file, "--schedule", dump,
               "--weights", str(weights_path)])
    assert rc == 0


def test_autotune_smoke(pipeline_file, thresholds_file, tmp_path, capsys):
    weights_path = tmp_path / "tuned.weights"
    rc = main(["autotune", pipeline_file, "--iterations", "2",
               "--batch-size", "2", "--beam-size", "2", "--passes", "1",
               "--thresholds", thresholds_file,
               "--weights-out", str(weights_path)])
    assert rc == 0
    out = capsys.readouterr().out
    assert "iteration 0" in out and "best overall" in out
    assert weights_path.exists()


def test_missing_pipeline_is_reported(capsys):
    rc = main(["schedule", "/nonexistent.pipeline"])
    assert rc == 1
    assert "error" in capsys.readouterr().err


def test_bad_schedule_dump_is_reported(pipeline_file, tmp_path, capsys):
    bad = tmp_path / "bad.schedule"
    bad.write_text("not a schedule")
    rc = main(["featurize", pipeline_file, "--schedule", str(bad)])
    assert rc == 1
    assert "error" in capsys.readouterr().err


def test_unknown_subcommand_exits_nonzero():
    with pytest.raises(SystemExit):
        main(["frobnicate"])
