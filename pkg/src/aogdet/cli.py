"""Command-line interface: synth, mine, train, detect, eval, inspect.

Flags may also come from a flat key=value config file via --config;
explicit flags win. All randomized stages take a 64-bit --seed.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np


def _load_config(path):
    out = {}
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"config line without '=': {line!r}")
            k, v = line.split("=", 1)
            out[k.strip().replace("-", "_")] = v.strip()
    return out


def _apply_config(args, parser):
    if getattr(args, "config", None):
        overrides = _load_config(args.config)
        defaults = {a.dest: a.default for a in parser._actions}
        for k, v in overrides.items():
            if k not in defaults:
                raise ValueError(f"unknown config key: {k}")
            cur = getattr(args, k)
            if cur == defaults[k]:  # explicit flags win over the file
                typ = type(defaults[k]) if defaults[k] is not None else str
                setattr(args, k, typ(v) if typ is not bool else v.lower() in ("1", "true", "yes"))
    return args


def cmd_synth(args):
    from .pipeline import SynthConfig, synth_dataset

    cfg = SynthConfig(
        count=args.count,
        test_count=args.test_count,
        background_count=args.backgrounds,
        num_views=args.views,
        seed=args.seed,
        type_count=args.types,
        pixels_per_unit=args.scale,
        azimuth_spread=args.azimuth_spread,
    )
    synth_dataset(args.out, cfg)
    print(f"wrote dataset to {args.out}")
    return 0


def _assemble_config(args):
    from .assemble import AssembleConfig

    return AssembleConfig(
        levels_per_octave=args.levels_per_octave,
        cell_size=args.cell_size,
        root_area_cells=args.root_area,
        max_parts_per_config=args.max_parts,
        car_slot_deform=(0.05, 0.0, 0.05, 0.0) if args.context_deform else None,
    )


def cmd_mine(args):
    from .model_io import save_model
    from .pipeline import MineConfig, mine_structure
    from .positives import read_annotations

    annos = read_annotations(args.annotations)
    cfg = MineConfig(
        num_views=args.views,
        contexts=args.contexts,
        max_cars=args.max_cars,
        sim_count=args.sim_count,
        lambda_c=args.lambda_c,
        max_branches=args.configs,
        seed=args.seed,
        azimuth_spread=args.azimuth_spread,
        assemble=_assemble_config(args),
        with_context=not args.no_context,
    )
    g, structure, patterns = mine_structure(annos, cfg, dump_dir=os.path.dirname(args.out) or ".")
    save_model(g, args.out)
    print(f"skeleton: {len(g.nodes)} nodes, {len(g.edges)} edges, "
          f"{len(g.filter_shapes)} filters, {len(g.theta)} parameters -> {args.out}")
    return 0


def cmd_train(args):
    from .model_io import load_model, save_model
    from .pipeline import MineConfig, SampleConfig, mine_structure, train_variant
    from .positives import read_annotations
    from .training import TrainConfig

    annos = read_annotations(os.path.join(args.data, "annotations.txt"))
    mine_cfg = MineConfig(
        num_views=args.views,
        contexts=args.contexts,
        sim_count=args.sim_count,
        lambda_c=args.lambda_c,
        max_branches=args.configs,
        seed=args.seed,
        azimuth_spread=args.azimuth_spread,
        assemble=_assemble_config(args),
        with_context=(args.variant != "and-or-structure") and not args.no_context,
    )
    g, structure, patterns = mine_structure(annos, mine_cfg)
    sample_cfg = SampleConfig(
        max_one_car=args.max_one_car,
        max_two_car=args.max_two_car,
        max_backgrounds=args.max_backgrounds,
        seed=args.seed,
    )
    tcfg = dict(
        C=args.C,
        inner_epochs=args.inner,
        cache_capacity=args.cache,
        max_neg_per_image=args.neg_per_image,
        eval_true_objective=not args.fast_objective,
    )
    step0 = TrainConfig(outer_iters=args.outer_step0, seed=args.seed, **tcfg)
    step1 = TrainConfig(outer_iters=args.outer, seed=args.seed + 1, **tcfg)
    g, logs = train_variant(
        g, args.data, args.variant, structure, patterns,
        sample_cfg=sample_cfg, step0_cfg=step0, step1_cfg=step1,
    )
    save_model(g, args.out)
    for name, lg in logs.items():
        print(f"{name}: objective {['%.4f' % o for o in lg.objective]} "
              f"completed {lg.completed} skipped {lg.skipped}")
        if args.log:
            lg.write(f"{args.log}.{name}.txt")
    print(f"model -> {args.out}")
    return 0


def cmd_detect(args):
    from .inference import write_detections
    from .model_io import load_model
    from .pipeline import detect_dataset

    g = load_model(args.model)
    final, _ = detect_dataset(
        g, args.data, tau=args.tau, iou_nms=args.nms_iou, dup_iou=args.dup_iou,
        max_images=args.max_images,
    )
    write_detections(args.out, final)
    print(f"{len(final)} detections -> {args.out}")
    return 0


def cmd_eval(args):
    from .evaluation import evaluate, read_ground_truth, write_pr_curve
    from .inference import read_detections
    from .positives import read_annotations

    dets = read_detections(args.detections)
    gts = read_ground_truth(read_annotations(args.annotations))
    res = evaluate(
        dets, gts, num_views=args.views or None, iou_thresh=args.iou,
        min_height=args.min_height, eleven_point=args.eleven_point,
    )
    res.write(args.out)
    if args.pr:
        write_pr_curve(args.pr, res)
    line = f"ap {res.ap:.4f}"
    if res.mppe is not None:
        line += f" mppe {res.mppe:.4f} avp {res.avp:.4f}"
    print(line + f" tp {res.tp} fp {res.fp} missed {res.missed}")
    return 0


def cmd_inspect(args):
    from .model_io import load_model

    g = load_model(args.model)
    kinds = {}
    for n in g.nodes:
        kinds[n.kind] = kinds.get(n.kind, 0) + 1
    print(f"model {args.model}")
    print(f"  levels/octave {g.levels_per_octave}, cell {g.cell_size}, views {g.num_views}")
    print(f"  nodes {len(g.nodes)} ({kinds}), edges {len(g.edges)}, "
          f"filters {len(g.filter_shapes)}, parameters {len(g.theta)}")
    diags = g.validate()
    print(f"  validate: {'ok' if not diags else diags}")
    for nid, n in enumerate(g.nodes):
        if n.tag and n.tag[0] == "pattern":
            slots = len(n.child_edges)
            print(f"  pattern {n.tag[1]}: And {nid}, {slots} car slot(s)")
    cars = [(nid, n) for nid, n in enumerate(g.nodes) if n.tag and n.tag[0] == "car"]
    for nid, n in cars:
        parts = sum(1 for e in n.child_edges if g.edges[e].deform_offset is not None)
        print(f"  car view {n.tag[1]} config {n.tag[2]}: And {nid}, "
              f"box {n.model_box[0]:.1f}x{n.model_box[1]:.1f} cells, {parts} parts")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="aogdet",
                                description="hierarchical and-or grammar car detector")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate a synthetic scene dataset")
    sp.add_argument("--out", required=True)
    sp.add_argument("--count", type=int, default=200)
    sp.add_argument("--test-count", type=int, default=100)
    sp.add_argument("--backgrounds", type=int, default=30)
    sp.add_argument("--views", type=int, default=4)
    sp.add_argument("--types", type=int, default=8)
    sp.add_argument("--scale", type=float, default=170.0)
    sp.add_argument("--azimuth-spread", type=float, default=0.5)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--config")
    sp.set_defaults(func=cmd_synth, _parser=sp)

    def add_structure_flags(q):
        q.add_argument("--views", type=int, default=4)
        q.add_argument("--contexts", type=int, default=3)
        q.add_argument("--configs", type=int, default=2, help="occlusion branches per view")
        q.add_argument("--sim-count", type=int, default=600)
        q.add_argument("--lambda-c", type=float, default=0.5)
        q.add_argument("--azimuth-spread", type=float, default=0.5)
        q.add_argument("--levels-per-octave", type=int, default=4)
        q.add_argument("--cell-size", type=int, default=8)
        q.add_argument("--root-area", type=float, default=45.0)
        q.add_argument("--max-parts", type=int, default=6)
        q.add_argument("--context-deform", action="store_true", default=True)
        q.add_argument("--no-context", action="store_true")
        q.add_argument("--seed", type=int, default=0)
        q.add_argument("--config")

    sp = sub.add_parser("mine", help="mine structure and write a skeleton model")
    sp.add_argument("--annotations", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--max-cars", type=int, default=2)
    add_structure_flags(sp)
    sp.set_defaults(func=cmd_mine, _parser=sp)

    sp = sub.add_parser("train", help="mine structure and train a model variant")
    sp.add_argument("--data", required=True, help="dataset split directory")
    sp.add_argument("--out", required=True)
    sp.add_argument("--variant", choices=("aog-cad", "aog-greedy", "and-or-structure"),
                    default="aog-cad")
    sp.add_argument("--C", type=float, default=0.05)
    sp.add_argument("--outer", type=int, default=2)
    sp.add_argument("--outer-step0", type=int, default=2)
    sp.add_argument("--inner", type=int, default=1)
    sp.add_argument("--cache", type=int, default=600)
    sp.add_argument("--neg-per-image", type=int, default=15)
    sp.add_argument("--max-one-car", type=int, default=60)
    sp.add_argument("--max-two-car", type=int, default=30)
    sp.add_argument("--max-backgrounds", type=int, default=20)
    sp.add_argument("--fast-objective", action="store_true")
    sp.add_argument("--log")
    add_structure_flags(sp)
    sp.set_defaults(func=cmd_train, _parser=sp)

    sp = sub.add_parser("detect", help="detect cars over a dataset split")
    sp.add_argument("--model", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--tau", type=float, default=-1.0, help="score harvest threshold")
    sp.add_argument("--nms-iou", type=float, default=0.5)
    sp.add_argument("--dup-iou", type=float, default=0.7)
    sp.add_argument("--max-images", type=int)
    sp.add_argument("--config")
    sp.set_defaults(func=cmd_detect, _parser=sp)

    sp = sub.add_parser("eval", help="score detections against annotations")
    sp.add_argument("--detections", required=True)
    sp.add_argument("--annotations", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--pr", help="write the recall/precision curve here")
    sp.add_argument("--iou", type=float, default=0.5)
    sp.add_argument("--min-height", type=float, default=0.0)
    sp.add_argument("--views", type=int, default=0)
    sp.add_argument("--eleven-point", action="store_true")
    sp.add_argument("--config")
    sp.set_defaults(func=cmd_eval, _parser=sp)

    sp = sub.add_parser("inspect", help="summarize a model file")
    sp.add_argument("--model", required=True)
    sp.set_defaults(func=cmd_inspect, _parser=sp)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if getattr(args, "config", None):
            args = _apply_config(args, args._parser)
        return args.func(args)
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
