"""End-to-end experiment plumbing: synthetic dataset generation, sample
preparation, model-variant training, detection over datasets.

Model variants: `aog-cad` (full context + simulation-mined occlusion
branches, supervised step 0 then weak step 1), `and-or-structure` (the
same single-car occlusion model without multi-car context) and
`aog-greedy` (parts placed greedily on trained root filters, step 1
only).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace

import numpy as np

from .assemble import AssembleConfig, PatternSpec, assemble_model, pattern_specs_from_clusters
from .compression import compress, nearest_branch, write_structure_dump
from .geometry import clip_box, union_box
from .grammar import AND, AndOrGraph
from .hog import build_pyramid
from .inference import detect, multi_car_nms
from .parts import PART_NAMES
from .positives import (
    ImageAnnotation,
    canonical_order,
    car_relative_offsets,
    gen_positive_sets,
    mine_contexts,
    read_annotations,
    write_annotations,
)
from .render import load_image, render_background, render_scene, save_png
from .scenes import build_data_matrix, simulate_scenes, write_scene_dump
from .training import (
    Supervision,
    TrainConfig,
    TrainingSample,
    greedy_part_windows,
    init_step0,
    wlssvm_train,
)

VARIANTS = ("aog-cad", "aog-greedy", "and-or-structure")


@dataclass
class SynthConfig:
    count: int = 200
    test_count: int = 100
    background_count: int = 30
    num_views: int = 4
    seed: int = 0
    type_count: int = 8
    pixels_per_unit: float = 170.0
    background_shape: tuple = (144, 192)
    azimuth_spread: float = 0.5  # fraction of a view bin the camera covers


def synth_dataset(out_dir, cfg: SynthConfig):
    """Render train/test scene images, annotations, per-car visibility,
    and car-free background images. Deterministic per seed."""
    os.makedirs(out_dir, exist_ok=True)
    for split, count, seed_off in (("train", cfg.count, 1), ("test", cfg.test_count, 2)):
        split_dir = os.path.join(out_dir, split, "images")
        os.makedirs(split_dir, exist_ok=True)
        scenes = simulate_scenes(count, cfg.num_views, seed=cfg.seed * 9973 + seed_off,
                                 type_count=cfg.type_count,
                                 azimuth_spread=cfg.azimuth_spread)
        rng = np.random.default_rng(cfg.seed * 7919 + seed_off)
        annos, sup_lines = [], []
        for i, scene in enumerate(scenes):
            rendered = render_scene(scene, rng, pixels_per_unit=cfg.pixels_per_unit)
            name = f"{split}/images/scene_{i:04d}.png"
            save_png(os.path.join(out_dir, name), rendered.image)
            h, w = rendered.image.shape
            boxes, views = [], []
            for c, box in enumerate(rendered.boxes):
                clipped = clip_box(box, w, h)
                if clipped[2] <= 4 or clipped[3] <= 4:
                    continue
                boxes.append(clipped)
                views.append(rendered.views[c])
                bits = "".join(str(int(v)) for v in rendered.visibility[c])
                sup_lines.append(f"{name} {len(boxes) - 1} {bits}")
            annos.append(ImageAnnotation(path=name, boxes=boxes, views=views))
        write_annotations(os.path.join(out_dir, split, "annotations.txt"), annos)
        with open(os.path.join(out_dir, split, "visibility.txt"), "w") as f:
            f.write("# image box_index part_visibility_bits\n")
            f.write("\n".join(sup_lines) + "\n")
        write_scene_dump(os.path.join(out_dir, split, "scenes.txt"), scenes)

    bg_dir = os.path.join(out_dir, "backgrounds")
    os.makedirs(bg_dir, exist_ok=True)
    rng = np.random.default_rng(cfg.seed * 7919 + 5)
    for i in range(cfg.background_count):
        save_png(os.path.join(bg_dir, f"bg_{i:04d}.png"),
                 render_background(rng, cfg.background_shape))
    return out_dir


def read_visibility(path) -> dict:
    """{(image, box_index): 17-entry int array} from a visibility file."""
    out = {}
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            name, idx, bits = line.split()
            out[(name, int(idx))] = np.array([int(b) for b in bits], dtype=np.int8)
    return out


@dataclass
class MineConfig:
    num_views: int = 4
    contexts: int = 3
    max_cars: int = 2
    sim_count: int = 600
    lambda_c: float = 0.5
    max_branches: int = 2
    seed: int = 0
    azimuth_spread: float = 0.5
    assemble: AssembleConfig = field(default_factory=AssembleConfig)
    with_context: bool = True


def mine_structure(annotations, cfg: MineConfig, dump_dir=None):
    """Mine layout clusters and occlusion branches; assemble the skeleton."""
    scenes = simulate_scenes(cfg.sim_count, cfg.num_views, seed=cfg.seed * 31 + 11,
                             azimuth_spread=cfg.azimuth_spread)
    matrix = build_data_matrix(scenes)
    structure = compress(matrix, lambda_c=cfg.lambda_c, max_branches=cfg.max_branches)

    patterns = []
    if cfg.with_context and cfg.max_cars >= 2:
        sets = gen_positive_sets(annotations, cfg.max_cars)
        for n in range(2, cfg.max_cars + 1):
            if len(sets[n]) >= cfg.contexts:
                centroids, labels, _, kept = mine_contexts(sets[n], cfg.contexts, seed=cfg.seed)
                base = len(patterns)
                for spec in pattern_specs_from_clusters(centroids, labels, kept):
                    patterns.append(replace(spec, pattern_id=base + spec.pattern_id))
    g = assemble_model(structure, patterns or None, num_views=cfg.num_views, config=cfg.assemble)
    if dump_dir:
        os.makedirs(dump_dir, exist_ok=True)
        write_structure_dump(os.path.join(dump_dir, "structure.txt"), structure, PART_NAMES)
    return g, structure, patterns


def _branch_edges(g: AndOrGraph):
    """car-or child edge id per ("car", view, config) tag, plus the
    pattern edge ids under the root keyed by pattern id."""
    branch = {}
    pattern = {}
    for eid in g.nodes[g.root].child_edges:
        node = g.nodes[g.edges[eid].child]
        if node.tag and node.tag[0] == "pattern":
            pattern[node.tag[1]] = eid
    for nid, node in enumerate(g.nodes):
        if node.kind != "or" or nid == g.root:
            continue
        for eid in node.child_edges:
            child = g.nodes[g.edges[eid].child]
            if child.tag and child.tag[0] == "car":
                branch[(child.tag[1], child.tag[2])] = eid
    return branch, pattern


@dataclass
class SampleConfig:
    pad_frac: float = 0.55
    max_one_car: int = 120
    max_two_car: int = 80
    max_backgrounds: int = 30
    max_levels_extra: int = 4
    min_cells: int = 2
    seed: int = 0


def _crop_pyramid(image, box, g, cfg: SampleConfig):
    x, y, w, h = box
    pad_w, pad_h = cfg.pad_frac * w, cfg.pad_frac * h
    ih, iw = image.shape[:2]
    x0 = int(max(0, np.floor(x - pad_w)))
    y0 = int(max(0, np.floor(y - pad_h)))
    x1 = int(min(iw, np.ceil(x + w + pad_w)))
    y1 = int(min(ih, np.ceil(y + h + pad_h)))
    crop = image[y0:y1, x0:x1]
    pyr = build_pyramid(
        crop,
        levels_per_octave=g.levels_per_octave,
        cell_size=g.cell_size,
        padding=1,
        max_levels=g.levels_per_octave + cfg.max_levels_extra,
        min_cells=cfg.min_cells,
    )
    return pyr, (x0, y0)


def build_training_samples(data_dir, g, structure=None, patterns=None,
                           cfg: SampleConfig | None = None, supervised=True):
    """Positive crops (1- and 2-car) and background images for training.

    With `supervised` and a structure given, each sample carries the
    known pattern/view/config choices (configs from the per-car
    visibility rows mapped to their nearest branch).
    """
    cfg = cfg or SampleConfig()
    annotations = read_annotations(os.path.join(data_dir, "annotations.txt"))
    vis_path = os.path.join(data_dir, "visibility.txt")
    visibility = read_visibility(vis_path) if os.path.exists(vis_path) else {}
    branch_edges, pattern_edges = _branch_edges(g)
    root_dir = os.path.dirname(os.path.join(data_dir, ""))
    base_dir = os.path.dirname(root_dir)

    def branch_for(anno, idx):
        view = anno.views[idx]
        key = (anno.path, idx)
        if structure is None or view is None or view not in structure.views:
            return None
        vis = visibility.get(key)
        if vis is None:
            return None
        cfg_id = nearest_branch(structure, view, vis)
        return branch_edges.get((view, cfg_id))

    sets = gen_positive_sets(
        annotations, 2 if any(pid != -1 for pid in pattern_edges) else 1
    )
    rng = np.random.default_rng(cfg.seed)
    positives = []

    def neighbors_in_crop(anno, offset, shape):
        ox, oy = offset
        h, w = shape
        out = []
        for b in anno.boxes:
            shifted = (b[0] - ox, b[1] - oy, b[2], b[3])
            if (shifted[0] + shifted[2] > 0 and shifted[0] < w
                    and shifted[1] + shifted[3] > 0 and shifted[1] < h):
                out.append(shifted)
        return out

    ones = sets.get(1, [])
    if len(ones) > cfg.max_one_car:
        ones = [ones[i] for i in rng.choice(len(ones), cfg.max_one_car, replace=False)]
    for s in ones:
        anno = annotations[s.image]
        image = load_image(os.path.join(base_dir, anno.path))
        pyr, (ox, oy) = _crop_pyramid(image, s.boxes[0], g, cfg)
        box = (s.boxes[0][0] - ox, s.boxes[0][1] - oy, s.boxes[0][2], s.boxes[0][3])
        sup = None
        if supervised and -1 in pattern_edges:
            be = branch_for(anno, s.indices[0])
            if be is not None:
                sup = Supervision(pattern_edge=pattern_edges[-1], slot_branches=[be])
        positives.append(
            TrainingSample(pyramid=pyr, boxes=[box], image_id=anno.path, supervision=sup,
                           exclude_boxes=neighbors_in_crop(anno, (ox, oy), pyr.image_shape))
        )

    twos = sets.get(2, [])
    if len(twos) > cfg.max_two_car:
        twos = [twos[i] for i in rng.choice(len(twos), cfg.max_two_car, replace=False)]
    multi_patterns = [p for p in pattern_edges if p != -1]
    for s in twos:
        anno = annotations[s.image]
        image = load_image(os.path.join(base_dir, anno.path))
        ub = union_box(s.boxes)
        pyr, (ox, oy) = _crop_pyramid(image, ub, g, cfg)
        order = canonical_order(s.boxes)
        boxes = [
            (s.boxes[i][0] - ox, s.boxes[i][1] - oy, s.boxes[i][2], s.boxes[i][3])
            for i in order
        ]
        sup = None
        if supervised and multi_patterns and patterns:
            # nearest layout cluster in car-dim-relative offset space
            rel = np.array([o for off in car_relative_offsets(s.boxes) for o in off])
            cents = np.array([[o for off in p.offsets for o in off] for p in patterns])
            usable = [k for k, p in enumerate(patterns)
                      if cents.shape[1] == len(rel) and p.pattern_id in pattern_edges]
            if usable:
                pid = usable[int(np.argmin(((cents[usable] - rel) ** 2).sum(axis=1)))]
                slot_edges = [branch_for(anno, s.indices[order[k]]) for k in range(len(order))]
                if all(e is not None for e in slot_edges):
                    sup = Supervision(
                        pattern_edge=pattern_edges[patterns[pid].pattern_id],
                        slot_branches=slot_edges,
                    )
        positives.append(
            TrainingSample(pyramid=pyr, boxes=boxes, image_id=anno.path, supervision=sup,
                           exclude_boxes=neighbors_in_crop(anno, (ox, oy), pyr.image_shape))
        )

    backgrounds = []
    bg_dir = os.path.join(base_dir, "backgrounds")
    if os.path.isdir(bg_dir):
        names = sorted(os.listdir(bg_dir))[: cfg.max_backgrounds]
        for name in names:
            image = load_image(os.path.join(bg_dir, name))
            pyr = build_pyramid(
                image,
                levels_per_octave=g.levels_per_octave,
                cell_size=g.cell_size,
                padding=2,
                max_levels=g.levels_per_octave + cfg.max_levels_extra,
                min_cells=cfg.min_cells,
            )
            backgrounds.append(TrainingSample(pyramid=pyr, boxes=None, image_id=name))
    return positives, backgrounds


def add_greedy_parts(g: AndOrGraph, n_parts=6, part_size=(2, 2), deform=(0.05, 0, 0.05, 0)):
    """New graph with parts placed on the energy peaks of each trained
    root filter (per single-car And); trained roots are carried over."""
    ng = AndOrGraph(g.levels_per_octave, g.cell_size, g.num_views, g.channels)
    car_or = ng.add_or()
    for nid, node in enumerate(g.nodes):
        if node.kind != AND or not node.tag or node.tag[0] != "car":
            continue
        root_eid = node.child_edges[0]
        old_fid = g.nodes[g.edges[root_eid].child].filter_id
        weights = g.filter_weights(old_fid)
        car = ng.add_and(tag=node.tag, model_box=node.model_box, bias=g.bias(nid))
        fid = ng.add_filter(*weights.shape[:2], weights)
        ng.add_edge(car, ng.add_terminal(fid), 0, (0, 0))
        for (ax, ay), (pw, ph) in greedy_part_windows(weights, n_parts, part_size[::-1]):
            pfid = ng.add_filter(ph, pw)
            ng.add_edge(car, ng.add_terminal(pfid), 1, (ax, ay), deform=list(deform))
        ng.add_edge(car_or, car)
    root = ng.add_or()
    for eid in g.nodes[g.root].child_edges:
        pat = g.nodes[g.edges[eid].child]
        npat = ng.add_and(tag=pat.tag, bias=g.bias(g.edges[eid].child))
        for slot_eid in pat.child_edges:
            e = g.edges[slot_eid]
            ng.add_edge(npat, car_or, 0, e.anchor,
                        deform=list(g.deform_params(slot_eid)) if e.deform_offset is not None else None)
        ng.add_edge(root, npat)
    ng.root = root
    diags = ng.validate()
    if diags:
        raise ValueError(f"greedy-part graph invalid: {diags}")
    return ng


def train_variant(g, data_dir, variant="aog-cad", structure=None, patterns=None,
                  sample_cfg: SampleConfig | None = None,
                  step0_cfg: TrainConfig | None = None,
                  step1_cfg: TrainConfig | None = None):
    """Train a model variant; returns (graph, logs)."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant}; choose from {VARIANTS}")
    logs = {}
    supervised = variant in ("aog-cad", "and-or-structure")
    positives, backgrounds = build_training_samples(
        data_dir, g, structure=structure, patterns=patterns,
        cfg=sample_cfg, supervised=supervised,
    )
    if variant == "aog-greedy":
        cfg1 = step1_cfg or TrainConfig()
        logs["step1-root"] = wlssvm_train(g, positives, backgrounds, cfg1)
        g = add_greedy_parts(g)
        positives, backgrounds = build_training_samples(
            data_dir, g, structure=None, patterns=patterns,
            cfg=sample_cfg, supervised=False,
        )
        logs["step1"] = wlssvm_train(g, positives, backgrounds, cfg1)
        return g, logs

    sup_samples = [s for s in positives if s.supervision is not None]
    if sup_samples:
        cfg0 = step0_cfg or TrainConfig(outer_iters=2)
        logs["step0"] = init_step0(g, sup_samples, backgrounds, cfg0)
    weak = [
        TrainingSample(pyramid=s.pyramid, boxes=s.boxes, image_id=s.image_id)
        for s in positives
    ]
    logs["step1"] = wlssvm_train(g, weak, backgrounds, step1_cfg or TrainConfig())
    return g, logs


def detect_dataset(g, data_dir, tau=-1.0, iou_nms=0.5, dup_iou=0.7, max_images=None,
                   max_levels=None):
    """Run detection + guided NMS over a dataset split; returns final boxes."""
    annotations = read_annotations(os.path.join(data_dir, "annotations.txt"))
    base_dir = os.path.dirname(os.path.dirname(os.path.join(data_dir, "")))
    if max_images:
        annotations = annotations[:max_images]
    if max_levels is None:
        max_levels = g.levels_per_octave * 3 + 1
    final = []
    for anno in annotations:
        image = load_image(os.path.join(base_dir, anno.path))
        dets = detect(g, image=image, tau=tau, image_id=anno.path, max_levels=max_levels)
        final.extend(multi_car_nms(dets, iou_nms=iou_nms, dup_iou=dup_iou))
    return final, annotations
