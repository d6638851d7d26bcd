import os

import numpy as np
import pytest

from aogdet.cli import main


def run(args):
    return main(args)


@pytest.fixture(scope="module")
def tiny_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    rc = run([
        "synth", "--out", str(out), "--count", "6", "--test-count", "2",
        "--backgrounds", "3", "--views", "2", "--seed", "5",
    ])
    assert rc == 0
    return out


def test_synth_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        rc = run(["synth", "--out", str(d), "--count", "3", "--test-count", "1",
                  "--backgrounds", "2", "--views", "2", "--seed", "7"])
        assert rc == 0
    fa = (a / "train" / "annotations.txt").read_bytes()
    fb = (b / "train" / "annotations.txt").read_bytes()
    assert fa == fb
    ia = (a / "train" / "images" / "scene_0000.png").read_bytes()
    ib = (b / "train" / "images" / "scene_0000.png").read_bytes()
    assert ia == ib


def test_mine_and_inspect(tiny_dataset, tmp_path, capsys):
    model = tmp_path / "skeleton.txt"
    rc = run([
        "mine", "--annotations", str(tiny_dataset / "train" / "annotations.txt"),
        "--out", str(model), "--views", "2", "--contexts", "2",
        "--sim-count", "80", "--configs", "2", "--seed", "3",
    ])
    assert rc == 0
    assert model.exists()
    rc = run(["inspect", "--model", str(model)])
    assert rc == 0
    out = capsys.readouterr().out
    assert "validate: ok" in out
    assert "car view" in out


def test_eval_empty_detections(tiny_dataset, tmp_path):
    dets = tmp_path / "dets.txt"
    dets.write_text("# image x y w h score view config pattern\n")
    result = tmp_path / "eval.txt"
    rc = run([
        "eval", "--detections", str(dets),
        "--annotations", str(tiny_dataset / "test" / "annotations.txt"),
        "--out", str(result),
    ])
    assert rc == 0
    text = result.read_text()
    assert "ap 0.000000" in text


def test_unknown_config_key(tiny_dataset, tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("bogus_key=3\n")
    rc = run(["synth", "--out", str(tmp_path / "x"), "--count", "1",
              "--test-count", "1", "--config", str(cfg)])
    assert rc == 1


def test_config_file_applies(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("count=2\ntest-count=1\nbackgrounds=1\nviews=2\nseed=9\n")
    out = tmp_path / "d"
    rc = run(["synth", "--out", str(out), "--config", str(cfg)])
    assert rc == 0
    lines = (out / "train" / "annotations.txt").read_text().splitlines()
    images = {l.split()[0] for l in lines if l and not l.startswith("#")}
    assert len(images) == 2


def test_missing_model_errors(tmp_path):
    rc = run(["inspect", "--model", str(tmp_path / "nope.txt")])
    assert rc == 1
