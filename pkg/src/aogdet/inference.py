"""Exact dynamic-programming inference over the and-or graph.

Bottom-up computes, for every node and pyramid level, the best score of
the subtree rooted there at every lattice position (filter correlation
at terminals, deformation transforms on deformable edges, sums at
And-nodes, pointwise maxima at Or-nodes). Top-down retrieves the
optimal parse tree at a root position from the stored argmaxes.
Positions a node cannot occupy carry -inf.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import geometry
from .distance_transform import distance_transform
from .grammar import AND, OR, TERMINAL, AndOrGraph, ParseNode, ParseTree, car_tags, parse_tree_boxes
from .hog import build_pyramid


class InferenceError(ValueError):
    pass


def correlate_filter(grid: np.ndarray, filt: np.ndarray) -> np.ndarray:
    """Cross-correlation scores at every placement where `filt` fits."""
    fh, fw, c = filt.shape
    h, w, _ = grid.shape
    out = np.full((h, w), -np.inf)
    if h >= fh and w >= fw:
        win = sliding_window_view(grid, (fh, fw, c))
        out[: h - fh + 1, : w - fw + 1] = np.einsum("yxuabc,abc->yx", win, filt)
    return out


@dataclass
class ScoreMaps:
    """Per-(node, level) score grids plus argmax bookkeeping."""

    node_maps: dict = field(default_factory=dict)  # nid -> [level -> (H, W)]
    or_choice: dict = field(default_factory=dict)  # nid -> [level -> child index grid]
    edge_or_maps: dict = field(default_factory=dict)  # slot eid -> [level -> map]
    edge_or_choice: dict = field(default_factory=dict)  # slot eid -> [level -> grid]
    edge_dt: dict = field(default_factory=dict)  # (eid, child level) -> (map, dx*, dy*)
    level_dims: list = field(default_factory=list)

    def root_map(self, g, level):
        return self.node_maps[g.root][level]


def placement_mask(model_box, pyramid, level, gt, tau, kind):
    """Boolean grid over a level: placements whose model box covers gt at
    IoU >= tau (`cover`) or stays below it (`avoid`)."""
    h, w = pyramid.levels[level].shape[:2]
    s = pyramid.scale_of_level(level)
    step = pyramid.cell_size / s
    bw, bh = model_box[0] * step, model_box[1] * step
    x0 = (np.arange(w) - pyramid.padding) * step
    y0 = (np.arange(h) - pyramid.padding) * step
    gx, gy, gw, gh = gt
    iw = np.minimum(x0 + bw, gx + gw) - np.maximum(x0, gx)
    ih = np.minimum(y0 + bh, gy + gh) - np.maximum(y0, gy)
    inter = np.maximum(iw, 0.0)[None, :] * np.maximum(ih, 0.0)[:, None]
    union = bw * bh + gw * gh - inter
    iou_grid = np.where(union > 0, inter / union, 0.0)
    return iou_grid >= tau if kind == "cover" else iou_grid < tau


def _affected_nodes(g, seeds):
    """Seed nodes plus every ancestor reachable through parent edges."""
    parents = {}
    for e in g.edges:
        parents.setdefault(e.child, []).append(e.parent)
    out = set()
    stack = list(seeds)
    while stack:
        nid = stack.pop()
        if nid in out:
            continue
        out.add(nid)
        stack.extend(parents.get(nid, []))
    return out


def _needed_levels(g, n_levels):
    """{nid: level set} of maps that can contribute to a finite root
    score: a node level is needed only if it is level-feasible (all And
    children recursively placeable) and reachable from a feasible root
    placement through the scale shifts."""
    lam = g.levels_per_octave
    feasible = {}

    def feas(nid, lv):
        if lv < 0 or lv >= n_levels:
            return False
        key = (nid, lv)
        if key in feasible:
            return feasible[key]
        feasible[key] = False  # cycles are invalid anyway; break them
        node = g.nodes[nid]
        if node.kind == TERMINAL:
            ok = True
        elif node.kind == AND:
            ok = all(
                feas(g.edges[eid].child, lv - g.edges[eid].scale_shift * lam)
                for eid in node.child_edges
            )
        else:
            ok = any(
                feas(g.edges[eid].child, lv - g.edges[eid].scale_shift * lam)
                for eid in node.child_edges
            )
        feasible[key] = ok
        return ok

    needed = {}
    seen = set()

    def mark(nid, lv):
        if (nid, lv) in seen or not feas(nid, lv):
            return
        seen.add((nid, lv))
        needed.setdefault(nid, set()).add(lv)
        for eid in g.nodes[nid].child_edges:
            mark(g.edges[eid].child, lv - g.edges[eid].scale_shift * lam)

    for l in range(n_levels):
        mark(g.root, l)
    return needed


def bottom_up(g: AndOrGraph, pyramid, and_masks=None, slot_gt=None,
              response_cache=None, base: "ScoreMaps" = None) -> ScoreMaps:
    """Score every node at every position (requires a valid graph).

    `and_masks` maps an And node id to ("cover"|"avoid", gt_box, tau):
    placements failing the condition become -inf. `slot_gt` maps a
    (parent -> Or) edge id to ("cover", gt_box, tau) applied per child
    branch of that Or for this edge only, giving that parent slot its
    own constrained choice. `response_cache` (dict) shares terminal
    responses across calls with identical parameters and pyramid.
    `base` is an unmasked ScoreMaps of the same graph/pyramid/theta;
    nodes unaffected by the masks are reused from it.
    """
    lam = g.levels_per_octave
    n_levels = pyramid.num_levels
    and_masks = and_masks or {}
    slot_gt = slot_gt or {}
    maps = ScoreMaps(level_dims=[lvl.shape[:2] for lvl in pyramid.levels])

    affected = set()
    if base is not None:
        seeds = set(and_masks)
        seeds.update(g.edges[eid].parent for eid in slot_gt)
        affected = _affected_nodes(g, seeds)
        maps.or_choice.update(base.or_choice)
        for key, val in base.edge_dt.items():
            eid = key[0]
            if eid not in slot_gt and g.edges[eid].child not in affected:
                maps.edge_dt[key] = val

    def masked(arr, nid, level):
        if nid in and_masks:
            kind, gt, tau = and_masks[nid]
            box = g.nodes[nid].model_box
            if box is not None:
                arr = np.where(placement_mask(box, pyramid, level, gt, tau, kind), arr, -np.inf)
        return arr

    def slot_or_maps(eid):
        """Or maps recomputed for one slot edge with per-branch masks."""
        if eid in maps.edge_or_maps:
            return maps.edge_or_maps[eid]
        kind, gt, tau = slot_gt[eid]
        or_nid = g.edges[eid].child
        levels, choices = [], []
        child_maps = [node_map(g.edges[ce].child) for ce in g.nodes[or_nid].child_edges]
        child_ids = [g.edges[ce].child for ce in g.nodes[or_nid].child_edges]
        for l in range(n_levels):
            stacked = []
            for cm, cid in zip(child_maps, child_ids):
                box = g.nodes[cid].model_box
                if box is None:
                    stacked.append(cm[l])
                else:
                    mask = placement_mask(box, pyramid, l, gt, tau, kind)
                    stacked.append(np.where(mask, cm[l], -np.inf))
            stack = np.stack(stacked)
            levels.append(stack.max(axis=0))
            choices.append(stack.argmax(axis=0))
        maps.edge_or_maps[eid] = levels
        maps.edge_or_choice[eid] = choices
        return levels

    def edge_contribution(eid, parent_level, parent_dims):
        e = g.edges[eid]
        out = np.full(parent_dims, -np.inf)
        lc = parent_level - e.scale_shift * lam
        if lc < 0 or lc >= n_levels:
            return out
        if eid in slot_gt:
            base = slot_or_maps(eid)[lc]
        else:
            base = node_map(e.child)[lc]
        if e.deform_offset is not None:
            key = (eid, lc)
            if key not in maps.edge_dt:
                maps.edge_dt[key] = distance_transform(base, g.deform_params(eid))
            base = maps.edge_dt[key][0]
        hc, wc = base.shape
        mul = 2 if e.scale_shift else 1
        ax, ay = e.anchor
        ys = np.arange(parent_dims[0]) * mul + ay
        xs = np.arange(parent_dims[1]) * mul + ax
        vy = (ys >= 0) & (ys < hc)
        vx = (xs >= 0) & (xs < wc)
        out[np.ix_(vy, vx)] = base[np.ix_(ys[vy], xs[vx])]
        return out

    done = {}
    needed = _needed_levels(g, n_levels)

    def blank(l):
        return np.full(maps.level_dims[l], -np.inf)

    def response(fid, l):
        key = (fid, l)
        if response_cache is not None and key in response_cache:
            return response_cache[key]
        out = correlate_filter(pyramid.levels[l], g.filter_weights(fid))
        if response_cache is not None:
            response_cache[key] = out
        return out

    def node_map(nid):
        if nid in done:
            return done[nid]
        if base is not None and nid not in affected:
            done[nid] = base.node_maps[nid]
            maps.node_maps[nid] = done[nid]
            return done[nid]
        node = g.nodes[nid]
        active = needed.get(nid, set())
        levels = []
        if node.kind == AND:
            for l in range(n_levels):
                if l not in active:
                    levels.append(blank(l))
                    continue
                dims = maps.level_dims[l]
                acc = np.full(dims, g.bias(nid))
                for eid in node.child_edges:
                    acc = acc + edge_contribution(eid, l, dims)
                levels.append(masked(acc, nid, l))
        elif node.kind == OR:
            child_maps = [node_map(g.edges[eid].child) for eid in node.child_edges]
            choices = []
            for l in range(n_levels):
                if l not in active:
                    levels.append(blank(l))
                    choices.append(np.zeros(maps.level_dims[l], dtype=np.int64))
                    continue
                stack = np.stack([cm[l] for cm in child_maps])
                levels.append(stack.max(axis=0))
                choices.append(stack.argmax(axis=0))
            maps.or_choice[nid] = choices
        else:  # terminal
            fid = node.filter_id
            levels = [response(fid, l) if l in active else blank(l) for l in range(n_levels)]
        maps.node_maps[nid] = levels
        done[nid] = levels
        return levels

    node_map(g.root)
    return maps


def top_down(g: AndOrGraph, maps: ScoreMaps, level: int, x: int, y: int) -> ParseTree:
    """Retrieve the optimal parse tree for the root placed at (level, x, y)."""
    lam = g.levels_per_octave
    root_levels = maps.node_maps[g.root]
    if not (0 <= level < len(root_levels)):
        raise InferenceError(f"level {level} outside pyramid")
    h, w = root_levels[level].shape
    if not (0 <= y < h and 0 <= x < w):
        raise InferenceError(f"position ({x}, {y}) outside level {level} lattice")
    score = root_levels[level][y, x]
    if not np.isfinite(score):
        raise InferenceError(f"root cannot be placed at level {level}, ({x}, {y})")

    def build(nid, l, px, py, via_edge, delta, slot_edge=None):
        pn = ParseNode(node=nid, level=l, x=px, y=py, edge=via_edge, delta=delta)
        node = g.nodes[nid]
        if node.kind == OR:
            if slot_edge is not None:
                choice = int(maps.edge_or_choice[slot_edge][l][py, px])
            else:
                choice = int(maps.or_choice[nid][l][py, px])
            eid = node.child_edges[choice]
            pn.children.append(build(g.edges[eid].child, l, px, py, eid, (0, 0)))
        elif node.kind == AND:
            for eid in node.child_edges:
                e = g.edges[eid]
                lc = l - e.scale_shift * lam
                mul = 2 if e.scale_shift else 1
                bx, by = px * mul + e.anchor[0], py * mul + e.anchor[1]
                if e.deform_offset is not None:
                    _, dxg, dyg = maps.edge_dt[(eid, lc)]
                    dx, dy = int(dxg[by, bx]), int(dyg[by, bx])
                else:
                    dx, dy = 0, 0
                pn.children.append(
                    build(e.child, lc, bx + dx, by + dy, eid, (dx, dy),
                          slot_edge=eid if eid in maps.edge_or_choice else None)
                )
        return pn

    return ParseTree(root=build(g.root, level, x, y, None, (0, 0)), score=float(score))


@dataclass
class Detection:
    """One thresholded root placement and its parsed interpretation."""

    image_id: str
    score: float
    car_boxes: list  # grammar.Box per single-car And, in car order
    views: list
    configs: list
    pattern: object
    level: int
    x: int
    y: int
    union_box: object = None


def detections_at_threshold(g, maps, pyramid, tau, image_id="image", image_shape=None):
    """All root placements scoring >= tau, parsed into detections."""
    from .grammar import pattern_of

    dets = []
    for l, m in enumerate(maps.node_maps[g.root]):
        ys, xs = np.nonzero((m >= tau) & np.isfinite(m))
        for y, x in zip(ys.tolist(), xs.tolist()):
            pt = top_down(g, maps, l, x, y)
            boxes = parse_tree_boxes(g, pyramid, pt)
            cars = [b for b in boxes if b.role == "single-car"]
            union = next((b for b in boxes if b.role == "union"), None)
            if image_shape is not None:
                ih, iw = image_shape
                clipped = []
                for b in cars:
                    cx, cy, cw, ch = geometry.clip_box(b.xywh(), iw, ih)
                    if cw <= 0 or ch <= 0:
                        clipped = None
                        break
                    b.x, b.y, b.w, b.h = cx, cy, cw, ch
                    clipped.append(b)
                if clipped is None:
                    continue
                cars = clipped
            tags = car_tags(pt, g)
            dets.append(
                Detection(
                    image_id=image_id,
                    score=float(m[y, x]),
                    car_boxes=cars,
                    views=[t[0] for t in tags],
                    configs=[t[1] for t in tags],
                    pattern=pattern_of(pt, g),
                    level=l,
                    x=x,
                    y=y,
                    union_box=union,
                )
            )
    return dets


def detect(
    g: AndOrGraph,
    image=None,
    pyramid=None,
    tau: float = 0.0,
    image_id: str = "image",
    padding: int | None = None,
    max_levels: int | None = None,
):
    """Build the pyramid, run the DP, and return thresholded detections."""
    if pyramid is None:
        if padding is None:
            mh, mw = g.max_filter_dims()
            padding = max(mh, mw) // 2 + 1
        pyramid = build_pyramid(
            image,
            levels_per_octave=g.levels_per_octave,
            cell_size=g.cell_size,
            padding=padding,
            max_levels=max_levels,
        )
    if pyramid.num_levels == 0:
        import warnings

        warnings.warn("image smaller than the smallest usable pyramid level")
        return []
    maps = bottom_up(g, pyramid)
    return detections_at_threshold(
        g, maps, pyramid, tau, image_id=image_id, image_shape=pyramid.image_shape
    )


@dataclass
class FinalBox:
    """One single-car box surviving multi-car guided NMS."""

    image_id: str
    box: tuple  # (x, y, w, h) pixels
    score: float  # per-box score (subtree + context share)
    view: int
    config: int
    pattern: object
    source: int  # index of the originating detection
    car: int  # car slot within that detection
    candidate_score: float = 0.0  # the originating candidate's total score


def multi_car_nms(dets: list, iou_nms: float = 0.5, dup_iou: float = 0.7) -> list:
    """Guided NMS over the single-car boxes of multi-car detections.

    Boxes belonging to one detection never suppress each other; a car
    reported by several overlapping candidates (IoU >= dup_iou) is kept
    once, from the higher-scoring candidate; survivors then pass greedy
    box-score-ordered NMS at iou_nms, again exempting same-candidate
    pairs.
    """
    entries = []
    for di, det in enumerate(dets):
        for ci, b in enumerate(det.car_boxes):
            entries.append(
                FinalBox(
                    image_id=det.image_id,
                    box=b.xywh(),
                    score=b.score,
                    view=det.views[ci],
                    config=det.configs[ci],
                    pattern=det.pattern,
                    source=di,
                    car=ci,
                    candidate_score=det.score,
                )
            )

    def pass_once(items, thresh):
        kept = []
        for e in items:
            dup = any(
                k.source != e.source and geometry.iou(k.box, e.box) >= thresh for k in kept
            )
            if not dup:
                kept.append(e)
        return kept

    entries.sort(key=lambda e: (-e.candidate_score, e.source, e.car))
    deduped = pass_once(entries, dup_iou)
    deduped.sort(key=lambda e: (-e.score, e.source, e.car))
    return pass_once(deduped, iou_nms)


DETECTION_HEADER = "# image x y w h score view config pattern"


def write_detections(path, final_boxes):
    """Line-delimited detection records (one final box per line)."""
    with open(path, "w") as f:
        f.write(DETECTION_HEADER + "\n")
        for e in final_boxes:
            x, y, w, h = e.box
            f.write(
                f"{e.image_id} {x:.3f} {y:.3f} {w:.3f} {h:.3f} "
                f"{e.score:.6f} {e.view} {e.config} {e.pattern}\n"
            )


def read_detections(path):
    out = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            t = line.split()
            out.append(
                FinalBox(
                    image_id=t[0],
                    box=(float(t[1]), float(t[2]), float(t[3]), float(t[4])),
                    score=float(t[5]),
                    view=int(t[6]),
                    config=int(t[7]),
                    pattern=t[8],
                    source=-1,
                    car=-1,
                )
            )
    return out
