"""Assemble the and-or graph skeleton from mined structure.

Layers: root Or -> multi-car pattern Ands (one per layout cluster) plus
a 1-car branch -> a shared car-slot Or -> single-car Ands, one per
(view, occlusion branch) -> a per-config root filter, the view's
consistently-visible part filters, and the branch's optional cluster
parts. Part filters are shared across the configs of a view; car-slot
edges carry the layout anchors. Filters start at zero, biases at zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .compression import OcclusionStructure
from .grammar import AndOrGraph

DEFAULT_PART_DEFORM = (0.05, 0.0, 0.05, 0.0)
ONE_CAR_PATTERN = -1


@dataclass
class PatternSpec:
    """One multi-car layout: center offsets of cars 2..N from car 1,
    in units of car-1 width/height."""

    pattern_id: int
    offsets: list  # [(ox, oy)] length N-1
    count: int = 0


@dataclass
class AssembleConfig:
    levels_per_octave: int = 4
    cell_size: int = 8
    root_area_cells: float = 45.0
    min_part_cells: int = 2
    part_deform: tuple = DEFAULT_PART_DEFORM
    car_slot_deform: tuple | None = None  # optional i-th-car Or deformation
    parts_enabled: bool = True
    max_parts_per_config: int = 6  # capacity cap, largest parts kept
    min_part_area: float = 0.015  # skip parts projecting to slivers


def pattern_specs_from_clusters(centroids, labels, samples) -> list:
    """Convert layout clusters into car-dim-relative anchor offsets."""
    from .positives import car_relative_offsets

    specs = []
    n_off = centroids.shape[1] // 2
    for t in range(len(centroids)):
        members = [s for s, l in zip(samples, labels) if l == t]
        if members:
            offs = np.array([np.array(car_relative_offsets(s.boxes)).ravel() for s in members])
            mean = offs.mean(axis=0)
        else:
            mean = np.zeros(2 * n_off)
        specs.append(
            PatternSpec(
                pattern_id=t,
                offsets=[(float(mean[2 * i]), float(mean[2 * i + 1])) for i in range(n_off)],
                count=len(members),
            )
        )
    return specs


def _root_filter_dims(root_box, area_cells):
    w, h = max(root_box[0], 1e-6), max(root_box[1], 1e-6)
    aspect = w / h
    wc = max(2, int(round(np.sqrt(area_cells * aspect))))
    hc = max(2, int(round(np.sqrt(area_cells / aspect))))
    return wc, hc


def assemble_model(
    structure: OcclusionStructure,
    patterns: list | None = None,
    num_views: int | None = None,
    config: AssembleConfig | None = None,
) -> AndOrGraph:
    cfg = config or AssembleConfig()
    if num_views is None:
        num_views = structure.num_views
    if num_views != structure.num_views:
        raise ValueError(
            f"view count mismatch: structure has {structure.num_views}, requested {num_views}"
        )
    g = AndOrGraph(
        levels_per_octave=cfg.levels_per_octave,
        cell_size=cfg.cell_size,
        num_views=num_views,
    )

    car_or = g.add_or()
    model_dims = []
    for beta, vs in sorted(structure.views.items()):
        # shared part terminals of this view: one filter per used part
        used_parts = sorted(set(vs.always_visible) | {p for c in vs.clusters for p in c})
        mean_box = {}
        for p in used_parts:
            boxes = [pb[p] for pb in vs.part_boxes if p in pb]
            mean_box[p] = np.mean(boxes, axis=0) if boxes else np.array([0.4, 0.4, 0.2, 0.2])
        part_term = {}
        wc_mean = int(np.mean([_root_filter_dims(rb, cfg.root_area_cells)[0] for rb in vs.root_boxes]))
        hc_mean = int(np.mean([_root_filter_dims(rb, cfg.root_area_cells)[1] for rb in vs.root_boxes]))

        def get_part_term(p):
            if p not in part_term:
                _, _, nw, nh = mean_box[p]
                pw = max(cfg.min_part_cells, int(round(nw * 2 * wc_mean)))
                ph = max(cfg.min_part_cells, int(round(nh * 2 * hc_mean)))
                part_term[p] = g.add_terminal(g.add_filter(ph, pw))
            return part_term[p]

        for j, vec in enumerate(vs.branch_vectors):
            wc, hc = _root_filter_dims(vs.root_boxes[j], cfg.root_area_cells)
            car = g.add_and(tag=("car", beta, j), model_box=(float(wc), float(hc)))
            root_term = g.add_terminal(g.add_filter(hc, wc))
            g.add_edge(car, root_term, 0, (0, 0))
            if cfg.parts_enabled:
                chosen = sorted(vs.always_visible) + sorted(vs.clusters[j])
                chosen = [
                    p for p in chosen
                    if mean_box[p][2] * mean_box[p][3] >= cfg.min_part_area
                ]
                if len(chosen) > cfg.max_parts_per_config:
                    chosen = sorted(
                        chosen, key=lambda p: -mean_box[p][2] * mean_box[p][3]
                    )[: cfg.max_parts_per_config]
                    chosen = sorted(chosen)
                for p in chosen:
                    nx, ny, _, _ = vs.part_boxes[j].get(p, mean_box[p])
                    ax = int(round(nx * 2 * wc))
                    ay = int(round(ny * 2 * hc))
                    g.add_edge(car, get_part_term(p), 1, (ax, ay), deform=list(cfg.part_deform))
            g.add_edge(car_or, car)
            model_dims.append((wc, hc))

    if not model_dims:
        raise ValueError("occlusion structure produced no single-car branches")
    wbar = float(np.mean([d[0] for d in model_dims]))
    hbar = float(np.mean([d[1] for d in model_dims]))

    root = g.add_or()
    for spec in patterns or []:
        pat = g.add_and(tag=("pattern", spec.pattern_id))
        deform = list(cfg.car_slot_deform) if cfg.car_slot_deform else None
        g.add_edge(pat, car_or, 0, (0, 0), deform=deform)
        for ox, oy in spec.offsets:
            anchor = (int(round(ox * wbar)), int(round(oy * hbar)))
            g.add_edge(pat, car_or, 0, anchor, deform=deform)
        g.add_edge(root, pat)
    one = g.add_and(tag=("pattern", ONE_CAR_PATTERN))
    g.add_edge(one, car_or, 0, (0, 0))
    g.add_edge(root, one)
    g.root = root

    diags = g.validate()
    if diags:
        raise ValueError(f"assembled graph invalid: {diags}")
    return g
