"""Parameter learning: loss-adjusted inference, CCCP outer loop with a
stochastic-subgradient convex step, and hard negative mining.

The objective is 0.5*||theta||^2 + C * sum_i L'(theta, x_i, y_i) with
L' the difference of a margin-augmented max and an output-restricted
max over parse trees. Background is bookkept as an output of score 0.
The concave part is linearized by fixing the output-mode parse of each
positive; the convex step runs per-sample subgradient updates with a
full-batch safeguard so the linearized objective never increases
across accepted epochs.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import numpy as np

from .grammar import OR, AndOrGraph, parse_tree_boxes, parse_tree_features
from .inference import bottom_up, top_down
from .losses import MARGIN_LOSS, OUTPUT_LOSS, structured_loss


@dataclass
class Supervision:
    """Known parse choices of a positive: the root pattern edge and the
    single-car branch edge per car slot (part placements stay latent)."""

    pattern_edge: int
    slot_branches: list  # car-or child edge ids, one per slot, in edge order


@dataclass
class TrainingSample:
    """A positive (boxes) or background (boxes=None) training image."""

    pyramid: object
    boxes: list | None
    image_id: str = ""
    supervision: Supervision | None = None
    exclude_boxes: list | None = None  # every annotated box in the crop


class SupervisionError(ValueError):
    pass


def restricted_graph(g: AndOrGraph, sup: Supervision) -> AndOrGraph:
    """Clone of g with Or choices fixed by the supervision.

    Node and edge tables are copied (original ids preserved); each
    supervised car slot gets a private copy of its Or node so different
    slots can be pinned to different branches. Parameters are shared by
    offset, so feature vectors from the clone address g's theta.
    """
    rg = AndOrGraph(g.levels_per_octave, g.cell_size, g.num_views, g.channels)
    rg.nodes = [copy.copy(n) for n in g.nodes]
    for n in rg.nodes:
        n.child_edges = list(n.child_edges)
    rg.edges = [copy.copy(e) for e in g.edges]
    rg.filter_shapes = g.filter_shapes
    rg.filter_offsets = g.filter_offsets
    rg.theta = g.theta
    rg.root = g.root

    if sup.pattern_edge not in rg.nodes[rg.root].child_edges:
        raise SupervisionError(f"pattern edge {sup.pattern_edge} not under the root")
    rg.nodes[rg.root].child_edges = [sup.pattern_edge]
    pattern = rg.edges[sup.pattern_edge].child
    slot_edges = rg.nodes[pattern].child_edges
    if len(slot_edges) != len(sup.slot_branches):
        raise SupervisionError(
            f"supervision has {len(sup.slot_branches)} slots, pattern has {len(slot_edges)}"
        )
    for slot_edge, branch_edge in zip(slot_edges, sup.slot_branches):
        car_or = rg.edges[slot_edge].child
        if rg.nodes[car_or].kind != OR:
            raise SupervisionError(f"slot edge {slot_edge} does not lead to an Or-node")
        if branch_edge not in rg.nodes[car_or].child_edges:
            raise SupervisionError(f"branch edge {branch_edge} not under Or {car_or}")
        pinned = copy.copy(rg.nodes[car_or])
        pinned.child_edges = [branch_edge]
        rg.nodes.append(pinned)
        rg.edges[slot_edge].child = len(rg.nodes) - 1
    return rg


def _candidates_by_score(maps, g):
    """(score, level, x, y) for all finite root placements, best first."""
    out = []
    for l, m in enumerate(maps.node_maps[g.root]):
        ys, xs = np.nonzero(np.isfinite(m))
        if len(ys):
            out.append(np.column_stack([m[ys, xs], np.full(len(ys), l), xs, ys]))
    if not out:
        return np.zeros((0, 4))
    cand = np.concatenate(out)
    return cand[np.argsort(-cand[:, 0], kind="stable")]


def _best_placement(maps, g):
    best = (-math.inf, None)
    for l, m in enumerate(maps.node_maps[g.root]):
        finite = np.isfinite(m)
        if finite.any():
            masked_m = np.where(finite, m, -np.inf)
            y, x = np.unravel_index(np.argmax(masked_m), m.shape)
            if masked_m[y, x] > best[0]:
                best = (float(masked_m[y, x]), (l, int(x), int(y)))
    return best


def _car_and_nodes(g):
    return [nid for nid, n in enumerate(g.nodes)
            if n.kind == "and" and n.tag and n.tag[0] == "car"]


def _pattern_slots(g):
    """{pattern edge id: [slot edge ids]} under the root."""
    out = {}
    for eid in g.nodes[g.root].child_edges:
        child = g.edges[eid].child
        if g.nodes[child].tag and g.nodes[child].tag[0] == "pattern":
            out[eid] = list(g.nodes[child].child_edges)
    return out


def _covered_max(g, pyramid, y_boxes, tau, cache, pattern_edge=None, slot_assign=None,
                 base=None):
    """Max score over parses whose boxes cover every gt at IoU >= tau.

    Enumerates (pattern, gt -> slot injection) unless pinned; masks each
    assigned slot's branch choice to covering placements. Returns
    (score, parse tree or None).
    """
    import itertools

    best = (-math.inf, None)
    slots_by_pattern = _pattern_slots(g)
    if pattern_edge is not None:
        slots_by_pattern = {pattern_edge: slots_by_pattern[pattern_edge]}
    for pedge, slots in slots_by_pattern.items():
        if len(slots) < len(y_boxes):
            continue
        if slot_assign is not None:
            assignments = [slot_assign]
        else:
            assignments = [
                dict(zip(perm, y_boxes))
                for perm in itertools.permutations(slots, len(y_boxes))
            ]
        for assign in assignments:
            slot_masks = {se: ("cover", gt, tau) for se, gt in assign.items()}
            saved = g.nodes[g.root].child_edges
            g.nodes[g.root].child_edges = [pedge]
            try:
                maps = bottom_up(g, pyramid, slot_gt=slot_masks,
                                 response_cache=cache, base=base)
                score, loc = _best_placement(maps, g)
                if score > best[0]:
                    best = (score, top_down(g, maps, *loc))
            finally:
                g.nodes[g.root].child_edges = saved
    return best


def _violating_max(g, pyramid, y_boxes, tau, cache, base=None):
    """Max score over parses leaving at least one gt uncovered at tau."""
    best = (-math.inf, None)
    car_nodes = _car_and_nodes(g)
    for gt in y_boxes:
        masks = {nid: ("avoid", gt, tau) for nid in car_nodes}
        maps = bottom_up(g, pyramid, and_masks=masks, response_cache=cache, base=base)
        score, loc = _best_placement(maps, g)
        if score > best[0]:
            best = (score, top_down(g, maps, *loc))
    return best


def loss_adjusted_inference(g, pyramid, y_boxes, mode, maps=None, cache=None,
                            pattern_edge=None, slot_assign=None):
    """Best parse under the loss-adjusted score (exact for 0/penalty
    two-valued losses, with the loss folded into the DP via masks).

    margin: argmax of score + L_{1,0.5}(y, box(pt)); since the loss is
    two-valued this is the better of (best gt-avoiding parse + penalty)
    and (best fully-covering parse).
    output: argmax of score over parses covering every y box at 0.7;
    (None, -inf) when no parse is feasible.
    """
    cache = cache if cache is not None else {}
    spec = MARGIN_LOSS if mode == "margin" else OUTPUT_LOSS
    y_bg = y_boxes is None or len(y_boxes) == 0

    if y_bg:
        if maps is None:
            maps = bottom_up(g, pyramid, response_cache=cache)
        score, loc = _best_placement(maps, g)
        if loc is None:
            return None, -math.inf
        if mode == "margin":
            # every parse pays the same penalty: plain detection argmax
            return top_down(g, maps, *loc), score + spec.penalty
        return None, -math.inf  # no foreground parse has finite output loss

    base = maps if maps is not None else bottom_up(g, pyramid, response_cache=cache)
    cov_score, cov_pt = _covered_max(
        g, pyramid, y_boxes, spec.overlap, cache, pattern_edge, slot_assign, base=base
    )
    if mode == "output":
        return (cov_pt, cov_score) if cov_pt is not None else (None, -math.inf)
    vio_score, vio_pt = _violating_max(g, pyramid, y_boxes, spec.overlap, cache, base=base)
    if vio_pt is not None and vio_score + spec.penalty >= cov_score:
        return vio_pt, vio_score + spec.penalty
    if cov_pt is not None:
        return cov_pt, cov_score
    return None, -math.inf


def output_completion(g, sample, cache=None):
    """Output-mode completion honoring supervision; returns (phi, score)."""
    if sample.supervision is not None:
        rg = restricted_graph(g, sample.supervision)
        sup = sample.supervision
        slots = rg.nodes[rg.edges[sup.pattern_edge].child].child_edges
        if len(slots) != len(sample.boxes):
            raise SupervisionError(
                f"sample {sample.image_id}: {len(sample.boxes)} boxes vs {len(slots)} slots"
            )
        assign = dict(zip(slots, sample.boxes))
        pt, adj = loss_adjusted_inference(
            rg, sample.pyramid, sample.boxes, "output", cache=cache,
            pattern_edge=sup.pattern_edge, slot_assign=assign,
        )
        graph = rg
    else:
        graph = g
        pt, adj = loss_adjusted_inference(g, sample.pyramid, sample.boxes, "output", cache=cache)
    if pt is None:
        return None, adj
    return parse_tree_features(graph, sample.pyramid, pt), adj


@dataclass
class NegativeCache:
    """Bounded store of hard-negative feature vectors."""

    capacity: int = 2000
    entries: list = field(default_factory=list)  # (phi, score_at_insert, loc)

    def add(self, phi, score, loc=None):
        if len(self.entries) >= self.capacity:
            worst = min(range(len(self.entries)), key=lambda i: self.entries[i][1])
            if self.entries[worst][1] >= score:
                return False
            self.entries.pop(worst)
        self.entries.append((phi, score, loc))
        return True

    def min_score(self):
        return min((e[1] for e in self.entries), default=-math.inf)

    def __len__(self):
        return len(self.entries)


def mine_hard_negatives(g, backgrounds, cache: NegativeCache, margin: float = 1.0,
                        max_per_image: int = 50):
    """Add background placements scoring above -margin to the cache."""
    added = 0
    for sample in backgrounds:
        maps = bottom_up(g, sample.pyramid)
        cand = _candidates_by_score(maps, g)
        taken = 0
        for s, l, x, y in cand:
            if float(s) <= -margin or taken >= max_per_image:
                break
            pt = top_down(g, maps, int(l), int(x), int(y))
            phi = parse_tree_features(g, sample.pyramid, pt)
            if cache.add(phi, float(s), (sample.image_id, int(l), int(x), int(y))):
                added += 1
            taken += 1
    return added


def _touches_annotation(g, pyramid, pt, avoid, max_overlap, max_cover):
    """True when any predicted box OR any placed filter of the parse
    overlaps an annotated box (deformable parts can wander onto a real
    car even when the window box itself stays clear)."""
    from .geometry import intersect_area, iou

    regions = [b.xywh() for b in parse_tree_boxes(g, pyramid, pt) if b.role == "single-car"]
    for pn in pt.walk():
        node = g.nodes[pn.node]
        if node.kind == "terminal":
            fh, fw = g.filter_shapes[node.filter_id]
            s = pyramid.scale_of_level(pn.level)
            px, py = pyramid.cell_to_pixel(pn.level, pn.x, pn.y)
            regions.append((px, py, fw * pyramid.cell_size / s, fh * pyramid.cell_size / s))
    for b in regions:
        area = max(1e-9, b[2] * b[3])
        for gt in avoid:
            if iou(b, gt) >= max_overlap or intersect_area(b, gt) / area >= max_cover:
                return True
    return False


def mine_negatives_from_positives(g, positives, cache: NegativeCache, margin: float = 1.0,
                                  max_per_image: int = 20, max_overlap: float = 0.2,
                                  max_cover: float = 0.3):
    """Add high-scoring placements from positive images that keep both
    their boxes and their placed filters clear of every annotated box in
    the crop (neighboring cars included)."""
    added = 0
    for sample in positives:
        if not sample.boxes:
            continue
        avoid = sample.exclude_boxes if sample.exclude_boxes else sample.boxes
        maps = bottom_up(g, sample.pyramid)
        cand = _candidates_by_score(maps, g)
        taken = 0
        for s, l, x, y in cand:
            if float(s) <= -margin or taken >= max_per_image:
                break
            pt = top_down(g, maps, int(l), int(x), int(y))
            if _touches_annotation(g, sample.pyramid, pt, avoid, max_overlap, max_cover):
                continue
            phi = parse_tree_features(g, sample.pyramid, pt)
            if cache.add(phi, float(s), (sample.image_id, int(l), int(x), int(y))):
                added += 1
            taken += 1
    return added


def _background_hinge(g, sample, margin):
    maps = bottom_up(g, sample.pyramid)
    best = -math.inf
    for m in maps.node_maps[g.root]:
        finite = np.isfinite(m)
        if finite.any():
            best = max(best, float(m[finite].max()))
    return max(0.0, margin + best) if best > -math.inf else 0.0


@dataclass
class TrainLog:
    objective: list = field(default_factory=list)  # Eq-8 value per outer iter
    inner_objective: list = field(default_factory=list)
    cache_size: list = field(default_factory=list)
    completed: list = field(default_factory=list)
    skipped: list = field(default_factory=list)

    def write(self, path):
        with open(path, "w") as f:
            f.write("# outer objective cache completed skipped\n")
            for i, obj in enumerate(self.objective):
                cache = self.cache_size[i] if i < len(self.cache_size) else -1
                comp = self.completed[i] if i < len(self.completed) else -1
                skip = self.skipped[i] if i < len(self.skipped) else -1
                f.write(f"{i} {obj:.6f} {cache} {comp} {skip}\n")


@dataclass
class TrainConfig:
    C: float = 0.002
    outer_iters: int = 5
    inner_epochs: int = 5
    eta0: float = 0.01
    t0: float = 100.0
    margin: float = 1.0
    cache_capacity: int = 2000
    remine_every: int = 1  # 0 disables re-mining after the initial pass
    seed: int = 0
    rel_tol: float = 1e-4
    strict_monotone: bool = False  # evaluate negatives on full images
    eval_true_objective: bool = True  # per-outer Eq-8 logging (costly)
    max_neg_per_image: int = 50
    mine_from_positives: bool = False  # also mine low-overlap windows of positives
    divergence_factor: float = 100.0


def linearized_objective(g, positives, completions, backgrounds, cache, cfg):
    """Convexified full-batch objective with the completions fixed."""
    theta = g.theta
    total = 0.5 * float(theta @ theta)
    for sample, phi_bar in zip(positives, completions):
        if phi_bar is None:
            continue
        _, adj = loss_adjusted_inference(g, sample.pyramid, sample.boxes, "margin")
        first = max(adj, MARGIN_LOSS.penalty)  # background output scores 0
        total += cfg.C * (first - float(theta @ phi_bar))
    if cfg.strict_monotone:
        for b in backgrounds:
            total += cfg.C * _background_hinge(g, b, cfg.margin)
    else:
        for phi, _, _ in cache.entries:
            total += cfg.C * max(0.0, cfg.margin + float(theta @ phi))
    return total


def true_objective(g, positives, backgrounds, C, margin=1.0):
    """Eq-8 objective: regularizer plus the margin/output surrogate."""
    theta = g.theta
    total = 0.5 * float(theta @ theta)
    for sample in positives:
        _, first = loss_adjusted_inference(g, sample.pyramid, sample.boxes, "margin")
        first = max(first, MARGIN_LOSS.penalty)
        _, second = output_completion(g, sample)
        if second == -math.inf:
            continue  # infeasible this round; counted by the caller
        total += C * (first - second)
    for b in backgrounds:
        total += C * _background_hinge(g, b, margin)
    return total


def surrogate_loss_sum(g, positives, backgrounds, margin=1.0):
    """Sum of L' over the training set (0 once fully separated)."""
    total = 0.0
    for sample in positives:
        _, first = loss_adjusted_inference(g, sample.pyramid, sample.boxes, "margin")
        first = max(first, MARGIN_LOSS.penalty)
        _, second = output_completion(g, sample)
        if second == -math.inf:
            continue
        total += first - second
    for b in backgrounds:
        total += _background_hinge(g, b, margin)
    return total


def convex_subgradient(g, positives, completions, cache, cfg):
    """Full-batch subgradient of the linearized objective (cache negatives)."""
    grad = g.theta.copy()
    for sample, phi_bar in zip(positives, completions):
        if phi_bar is None:
            continue
        pt, adj = loss_adjusted_inference(g, sample.pyramid, sample.boxes, "margin")
        if adj >= MARGIN_LOSS.penalty and pt is not None:
            grad += cfg.C * parse_tree_features(g, sample.pyramid, pt)
        grad -= cfg.C * phi_bar
    for phi, _, _ in cache.entries:
        if cfg.margin + float(g.theta @ phi) > 0:
            grad += cfg.C * phi
    return grad


def wlssvm_train(g, positives, backgrounds, cfg: TrainConfig | None = None,
                 log: TrainLog | None = None):
    """CCCP training loop; mutates g.theta in place and returns the log."""
    cfg = cfg or TrainConfig()
    log = log or TrainLog()
    if cfg.C < 0:
        raise ValueError("C must be >= 0")
    if cfg.C == 0:
        g.set_theta(np.zeros_like(g.theta))
        log.objective.append(0.0)
        return log

    rng = np.random.default_rng(cfg.seed)
    cache = NegativeCache(capacity=cfg.cache_capacity)

    def mine(round_no):
        mine_hard_negatives(g, backgrounds, cache, cfg.margin, cfg.max_neg_per_image)
        if cfg.mine_from_positives:
            mine_negatives_from_positives(g, positives, cache, cfg.margin,
                                          max(4, cfg.max_neg_per_image // 2))

    mine(0)

    step = 0
    initial_obj = None
    for outer in range(cfg.outer_iters):
        # (a) latent completion per positive under the current parameters
        completions, skipped = [], 0
        for sample in positives:
            phi_bar, _ = output_completion(g, sample)
            completions.append(phi_bar)
            skipped += phi_bar is None
        log.completed.append(len(positives) - skipped)
        log.skipped.append(skipped)

        n_samples = max(1, sum(c is not None for c in completions) + len(cache))

        # (b) convex step with a non-increase safeguard
        best_obj = linearized_objective(g, positives, completions, backgrounds, cache, cfg)
        if initial_obj is None:
            initial_obj = best_obj
        best_theta = g.get_theta()
        log.inner_objective.append(best_obj)
        for epoch in range(cfg.inner_epochs):
            order = rng.permutation(len(positives) + len(cache))
            for idx in order:
                eta = cfg.eta0 / (1.0 + step / cfg.t0)
                step += 1
                if idx < len(positives):
                    phi_bar = completions[idx]
                    if phi_bar is None:
                        continue
                    sample = positives[idx]
                    pt, adj = loss_adjusted_inference(g, sample.pyramid, sample.boxes, "margin")
                    grad = g.theta / n_samples - cfg.C * phi_bar
                    if adj >= MARGIN_LOSS.penalty and pt is not None:
                        grad = grad + cfg.C * parse_tree_features(g, sample.pyramid, pt)
                else:
                    phi, _, _ = cache.entries[idx - len(positives)]
                    grad = g.theta / n_samples
                    if cfg.margin + float(g.theta @ phi) > 0:
                        grad = grad + cfg.C * phi
                g.set_theta(g.theta - eta * grad, clamp=True)
            obj = linearized_objective(g, positives, completions, backgrounds, cache, cfg)
            log.inner_objective.append(obj)
            if obj <= best_obj:
                best_obj = obj
                best_theta = g.get_theta()
            if obj > cfg.divergence_factor * max(1.0, abs(initial_obj)):
                g.set_theta(best_theta)
                raise RuntimeError(
                    f"training diverged at outer {outer} epoch {epoch}: "
                    f"objective {obj:.3g} vs initial {initial_obj:.3g}"
                )
        g.set_theta(best_theta)  # never accept an epoch that increased it

        if cfg.eval_true_objective:
            log.objective.append(true_objective(g, positives, backgrounds, cfg.C, cfg.margin))
        else:
            log.objective.append(best_obj)
        log.cache_size.append(len(cache))

        # (c) refresh hard negatives
        if cfg.remine_every and (outer + 1) % cfg.remine_every == 0:
            mine(outer + 1)

        if len(log.objective) >= 2:
            prev, cur = log.objective[-2], log.objective[-1]
            if abs(prev - cur) < cfg.rel_tol * max(1.0, abs(prev)):
                break
    return log


def init_step0(g, supervised_positives, backgrounds, cfg: TrainConfig | None = None):
    """Supervised initialization on synthetic data: Or choices fixed by
    supervision, only part placements stay latent."""
    for s in supervised_positives:
        if s.supervision is None:
            raise SupervisionError(f"sample {s.image_id} lacks supervision")
        restricted_graph(g, s.supervision)  # raises on inconsistent tags
    return wlssvm_train(g, supervised_positives, backgrounds, cfg)


def greedy_part_windows(root_filter, n_parts=6, part_size=(3, 3)):
    """Part subwindows on the highest-energy regions of a root filter at
    twice its resolution, greedily, non-overlapping."""
    energy = (root_filter**2).sum(axis=2)
    up = np.kron(energy, np.ones((2, 2))).copy()
    ph, pw = part_size
    out = []
    for _ in range(n_parts):
        h, w = up.shape
        if h < ph or w < pw:
            break
        best, by, bx = -1.0, 0, 0
        for y in range(h - ph + 1):
            for x in range(w - pw + 1):
                s = float(up[y : y + ph, x : x + pw].sum())
                if s > best:
                    best, by, bx = s, y, x
        if best <= 0:
            break
        up[by : by + ph, bx : bx + pw] = -1.0
        out.append(((bx, by), (pw, ph)))
    return out
