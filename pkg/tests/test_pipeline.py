import os

import numpy as np
import pytest

from aogdet.assemble import AssembleConfig
from aogdet.pipeline import (
    MineConfig,
    SampleConfig,
    SynthConfig,
    add_greedy_parts,
    build_training_samples,
    detect_dataset,
    mine_structure,
    read_visibility,
    synth_dataset,
    train_variant,
)
from aogdet.positives import read_annotations
from aogdet.training import TrainConfig


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("ds")
    synth_dataset(
        str(out),
        SynthConfig(count=8, test_count=2, background_count=3, num_views=2, seed=21),
    )
    return str(out)


@pytest.fixture(scope="module")
def mined(dataset):
    annos = read_annotations(os.path.join(dataset, "train", "annotations.txt"))
    cfg = MineConfig(
        num_views=2, contexts=2, sim_count=120, max_branches=2, seed=4,
        assemble=AssembleConfig(car_slot_deform=(0.05, 0, 0.05, 0)),
    )
    return mine_structure(annos, cfg)


def test_synth_outputs_complete(dataset):
    for split in ("train", "test"):
        assert os.path.exists(os.path.join(dataset, split, "annotations.txt"))
        assert os.path.exists(os.path.join(dataset, split, "visibility.txt"))
        assert os.path.exists(os.path.join(dataset, split, "scenes.txt"))
        images = os.listdir(os.path.join(dataset, split, "images"))
        assert all(i.endswith(".png") for i in images)
    assert len(os.listdir(os.path.join(dataset, "backgrounds"))) == 3
    annos = read_annotations(os.path.join(dataset, "train", "annotations.txt"))
    assert len(annos) == 8
    vis = read_visibility(os.path.join(dataset, "train", "visibility.txt"))
    for anno in annos:
        for idx, view in enumerate(anno.views):
            assert view is not None and 0 <= view < 2
            assert (anno.path, idx) in vis
            assert vis[(anno.path, idx)].shape == (17,)


def test_mined_skeleton_valid(mined):
    g, structure, patterns = mined
    assert g.validate() == []
    assert g.num_views == 2
    assert patterns  # layout clusters found on overlapping scenes


def test_training_samples_supervision(dataset, mined):
    g, structure, patterns = mined
    cfg = SampleConfig(max_one_car=6, max_two_car=4, max_backgrounds=2, seed=1)
    positives, backgrounds = build_training_samples(
        os.path.join(dataset, "train"), g, structure, patterns, cfg, supervised=True
    )
    assert positives and backgrounds
    supervised = [s for s in positives if s.supervision is not None]
    assert supervised
    for s in supervised:
        slots = g.nodes[g.edges[s.supervision.pattern_edge].child].child_edges
        assert len(slots) == len(s.boxes) == len(s.supervision.slot_branches)
    # boxes lie inside their crops
    for s in positives:
        h, w = s.pyramid.image_shape
        for (x, y, bw, bh) in s.boxes:
            assert -1 <= x and x + bw <= w + 1
            assert -1 <= y and y + bh <= h + 1


def test_unsupervised_mode_drops_supervision(dataset, mined):
    g, structure, patterns = mined
    cfg = SampleConfig(max_one_car=3, max_two_car=2, max_backgrounds=1, seed=1)
    positives, _ = build_training_samples(
        os.path.join(dataset, "train"), g, structure, patterns, cfg, supervised=False
    )
    assert all(s.supervision is None for s in positives)


def test_greedy_parts_variant_structure(mined):
    g, structure, patterns = mined
    rng = np.random.default_rng(3)
    # give roots some energy so windows are meaningful
    theta = rng.normal(0, 0.2, len(g.theta))
    g.set_theta(theta)
    ng = add_greedy_parts(g, n_parts=3, part_size=(2, 2))
    assert ng.validate() == []
    from aogdet.grammar import AND

    cars = [n for n in ng.nodes if n.kind == AND and n.tag and n.tag[0] == "car"]
    assert cars
    for car in cars:
        deformable = [e for e in car.child_edges if ng.edges[e].deform_offset is not None]
        assert len(deformable) == 3
    # trained root filters carried over
    old_cars = [n for n in g.nodes if n.kind == AND and n.tag and n.tag[0] == "car"]
    for oc, nc in zip(old_cars, cars):
        ofid = g.nodes[g.edges[oc.child_edges[0]].child].filter_id
        nfid = ng.nodes[ng.edges[nc.child_edges[0]].child].filter_id
        assert np.array_equal(g.filter_weights(ofid), ng.filter_weights(nfid))


def test_detect_dataset_smoke(dataset, mined):
    g, structure, patterns = mined
    rng = np.random.default_rng(5)
    g.set_theta(rng.normal(0, 0.05, len(g.theta)))
    final, annos = detect_dataset(g, os.path.join(dataset, "test"), tau=5.0)
    assert isinstance(final, list)
    assert len(annos) == 2
