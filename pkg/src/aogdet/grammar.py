"""And-Or graph data model, parse trees, and their readouts.

The graph is a DAG of Or-nodes (choice), And-nodes (composition, with a
bias) and Terminal-nodes (appearance filters). All parameters live in
one flat vector `theta`; filters, per-edge deformations and per-And
biases are views into disjoint slots of it. Geometry (scale shift,
anchor, deformability) lives on edges so that a node shared by several
parents can carry distinct placements per parent.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .distance_transform import MIN_QUADRATIC

OR = "or"
AND = "and"
TERMINAL = "terminal"

CHANNELS = 31


class GrammarError(ValueError):
    pass


@dataclass
class Edge:
    parent: int
    child: int
    scale_shift: int = 0  # child level = parent level - scale_shift * lambda
    anchor: tuple = (0, 0)  # (ax, ay) in cells at the child's level
    deform_offset: int | None = None  # 4 theta slots [dx^2, dx, dy^2, dy], None = rigid


@dataclass
class Node:
    kind: str
    filter_id: int | None = None  # terminals
    bias_offset: int | None = None  # ands
    tag: tuple | None = None  # ("pattern", p) | ("car", view, config) | ("parts", c)
    model_box: tuple | None = None  # (w_cells, h_cells) for single-car ands
    child_edges: list = field(default_factory=list)  # edge ids, ordered


@dataclass
class ParseNode:
    """One instantiated node of a parse tree (graph nodes can recur)."""

    node: int
    level: int
    x: int
    y: int
    edge: int | None = None  # edge taken from the parent, None at the root
    delta: tuple = (0, 0)  # displacement applied on that edge
    children: list = field(default_factory=list)


@dataclass
class ParseTree:
    root: ParseNode
    score: float

    def walk(self):
        stack = [self.root]
        while stack:
            pn = stack.pop()
            yield pn
            stack.extend(reversed(pn.children))


class AndOrGraph:
    """Reconfigurable hierarchy scored over a feature pyramid."""

    def __init__(self, levels_per_octave=5, cell_size=8, num_views=1, channels=CHANNELS):
        self.levels_per_octave = levels_per_octave
        self.cell_size = cell_size
        self.num_views = num_views
        self.channels = channels
        self.nodes: list[Node] = []
        self.edges: list[Edge] = []
        self.filter_shapes: list[tuple] = []
        self.filter_offsets: list[int] = []
        self.theta = np.zeros(0)
        self.root: int | None = None

    # -- construction ----------------------------------------------------

    def _alloc(self, n, init=None):
        off = len(self.theta)
        block = np.zeros(n) if init is None else np.asarray(init, dtype=np.float64)
        self.theta = np.concatenate([self.theta, block])
        return off

    def add_filter(self, h: int, w: int, weights=None) -> int:
        if h < 1 or w < 1:
            raise GrammarError(f"filter dims {h}x{w} must be >= 1")
        fid = len(self.filter_shapes)
        off = self._alloc(h * w * self.channels)
        self.filter_shapes.append((h, w))
        self.filter_offsets.append(off)
        if weights is not None:
            self.set_filter(fid, weights)
        return fid

    def add_terminal(self, filter_id: int) -> int:
        self.nodes.append(Node(TERMINAL, filter_id=filter_id))
        return len(self.nodes) - 1

    def add_and(self, tag=None, model_box=None, bias=0.0) -> int:
        off = self._alloc(1, [bias])
        self.nodes.append(Node(AND, bias_offset=off, tag=tag, model_box=model_box))
        return len(self.nodes) - 1

    def add_or(self, tag=None) -> int:
        self.nodes.append(Node(OR, tag=tag))
        return len(self.nodes) - 1

    def add_edge(self, parent, child, scale_shift=0, anchor=(0, 0), deform=None) -> int:
        """Connect parent to child; `deform` of 4 reals makes the edge deformable."""
        off = None
        if deform is not None:
            d = np.asarray(deform, dtype=np.float64)
            off = self._alloc(4, d)
        eid = len(self.edges)
        self.edges.append(
            Edge(parent, child, scale_shift=scale_shift, anchor=tuple(anchor), deform_offset=off)
        )
        self.nodes[parent].child_edges.append(eid)
        return eid

    # -- parameter access -------------------------------------------------

    def filter_weights(self, fid: int) -> np.ndarray:
        h, w = self.filter_shapes[fid]
        off = self.filter_offsets[fid]
        return self.theta[off : off + h * w * self.channels].reshape(h, w, self.channels)

    def set_filter(self, fid: int, weights):
        h, w = self.filter_shapes[fid]
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != (h, w, self.channels):
            raise GrammarError(f"filter {fid} expects shape {(h, w, self.channels)}")
        off = self.filter_offsets[fid]
        self.theta[off : off + weights.size] = weights.reshape(-1)

    def deform_params(self, eid: int) -> np.ndarray:
        off = self.edges[eid].deform_offset
        return self.theta[off : off + 4]

    def bias(self, nid: int) -> float:
        return float(self.theta[self.nodes[nid].bias_offset])

    def get_theta(self) -> np.ndarray:
        return self.theta.copy()

    def set_theta(self, vec, clamp=True):
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != self.theta.shape:
            raise GrammarError(f"theta length {vec.shape} != {self.theta.shape}")
        self.theta = vec.copy()
        if clamp:
            self.clamp_deformations()

    def quad_slot_mask(self) -> np.ndarray:
        """Boolean mask of the quadratic deformation slots in theta."""
        mask = np.zeros(len(self.theta), dtype=bool)
        for e in self.edges:
            if e.deform_offset is not None:
                mask[e.deform_offset] = True
                mask[e.deform_offset + 2] = True
        return mask

    def clamp_deformations(self):
        mask = self.quad_slot_mask()
        self.theta[mask] = np.maximum(self.theta[mask], MIN_QUADRATIC)

    # -- structure queries ------------------------------------------------

    def children(self, nid: int):
        return [(eid, self.edges[eid].child) for eid in self.nodes[nid].child_edges]

    def max_filter_dims(self):
        if not self.filter_shapes:
            return (0, 0)
        return (
            max(h for h, _ in self.filter_shapes),
            max(w for _, w in self.filter_shapes),
        )

    def validate(self) -> list:
        """Structural diagnostics; an empty list means the graph is valid."""
        diags = []
        n = len(self.nodes)
        if self.root is None:
            diags.append("no root set")
        elif not (0 <= self.root < n) or self.nodes[self.root].kind != OR:
            diags.append(f"root {self.root} is not an Or-node")
        for eid, e in enumerate(self.edges):
            if not (0 <= e.parent < n and 0 <= e.child < n):
                diags.append(f"edge {eid} references missing node")
                continue
            pk, ck = self.nodes[e.parent].kind, self.nodes[e.child].kind
            if pk == TERMINAL:
                diags.append(f"edge {eid}: terminal {e.parent} cannot have children")
            elif pk == OR and ck != AND:
                diags.append(f"edge {eid}: wrong child type ({ck}) under Or {e.parent}")
            elif pk == AND and ck == AND:
                diags.append(f"edge {eid}: wrong child type (and) under And {e.parent}")
            ptag = self.nodes[e.parent].tag
            if pk == AND and ptag and ptag[0] == "pattern" and ck == TERMINAL:
                diags.append(f"edge {eid}: wrong child type (terminal) under multi-car And {e.parent}")
            if e.scale_shift not in (0, 1):
                diags.append(f"edge {eid}: scale shift {e.scale_shift} not in {{0,1}}")
        for nid, node in enumerate(self.nodes):
            if node.kind in (AND, OR) and not node.child_edges:
                diags.append(f"{node.kind} node {nid} has no children")
            if node.kind == AND and node.bias_offset is None:
                diags.append(f"orphan parameter: And {nid} lacks a bias slot")
            if node.kind == TERMINAL:
                if node.filter_id is None or not (0 <= node.filter_id < len(self.filter_shapes)):
                    diags.append(f"terminal {nid} has invalid filter id {node.filter_id}")
        # cycle check over the edge relation
        color = [0] * n
        def dfs(u, trail):
            color[u] = 1
            for eid in self.nodes[u].child_edges:
                v = self.edges[eid].child
                if v >= n:
                    continue
                if color[v] == 1:
                    diags.append(f"cycle through nodes {trail + [u, v]}")
                elif color[v] == 0:
                    dfs(v, trail + [u])
            color[u] = 2
        for nid in range(n):
            if color[nid] == 0:
                dfs(nid, [])
        # parameter housing: every slot covered exactly once
        cover = np.zeros(len(self.theta), dtype=np.int64)
        for fid, (h, w) in enumerate(self.filter_shapes):
            off = self.filter_offsets[fid]
            cover[off : off + h * w * self.channels] += 1
        for node in self.nodes:
            if node.bias_offset is not None:
                cover[node.bias_offset] += 1
        for e in self.edges:
            if e.deform_offset is not None:
                cover[e.deform_offset : e.deform_offset + 4] += 1
        if (cover != 1).any():
            bad = np.flatnonzero(cover != 1)
            diags.append(f"orphan parameter slots at offsets {bad[:8].tolist()}")
        for eid, e in enumerate(self.edges):
            if e.deform_offset is not None:
                d = self.deform_params(eid)
                if d[0] < MIN_QUADRATIC or d[2] < MIN_QUADRATIC:
                    diags.append(f"edge {eid}: quadratic deformation below clamp")
        if not np.all(np.isfinite(self.theta)):
            diags.append("non-finite parameter values")
        return diags


# -- parse-tree readouts ---------------------------------------------------


def deformation_feature(delta) -> np.ndarray:
    dx, dy = delta
    return np.array([dx * dx, dx, dy * dy, dy], dtype=np.float64)


def score_parse_tree(g: AndOrGraph, pyramid, pt: ParseTree) -> float:
    """Recompute a parse tree's score from node positions and parameters."""
    total = 0.0
    for pn in pt.walk():
        node = g.nodes[pn.node]
        if node.kind == AND:
            total += g.bias(pn.node)
        elif node.kind == TERMINAL:
            f = g.filter_weights(node.filter_id)
            fh, fw, _ = f.shape
            patch = pyramid.levels[pn.level][pn.y : pn.y + fh, pn.x : pn.x + fw]
            if patch.shape != f.shape:
                raise GrammarError(f"terminal {pn.node} placed outside level {pn.level}")
            total += float(np.vdot(f, patch))
        if pn.edge is not None:
            off = g.edges[pn.edge].deform_offset
            if off is not None:
                total -= float(np.dot(g.theta[off : off + 4], deformation_feature(pn.delta)))
    return total


def parse_tree_features(g: AndOrGraph, pyramid, pt: ParseTree) -> np.ndarray:
    """Joint feature vector phi with <theta, phi> == score(pt)."""
    phi = np.zeros(len(g.theta))
    for pn in pt.walk():
        node = g.nodes[pn.node]
        if node.kind == AND:
            phi[node.bias_offset] += 1.0
        elif node.kind == TERMINAL:
            h, w = g.filter_shapes[node.filter_id]
            off = g.filter_offsets[node.filter_id]
            patch = pyramid.levels[pn.level][pn.y : pn.y + h, pn.x : pn.x + w]
            if patch.shape != (h, w, g.channels):
                raise GrammarError(f"terminal {pn.node} placed outside level {pn.level}")
            phi[off : off + h * w * g.channels] += patch.reshape(-1)
        if pn.edge is not None:
            doff = g.edges[pn.edge].deform_offset
            if doff is not None:
                phi[doff : doff + 4] -= deformation_feature(pn.delta)
    return phi


@dataclass
class Box:
    x: float
    y: float
    w: float
    h: float
    role: str  # "single-car" | "union"
    score: float

    def xywh(self):
        return (self.x, self.y, self.w, self.h)


def subtree_score(g: AndOrGraph, pyramid, pn: ParseNode) -> float:
    """Score of the parse subtree rooted at one instantiated node
    (excluding the deformation paid on the edge into it)."""
    total = 0.0
    stack = [pn]
    first = True
    while stack:
        cur = stack.pop()
        node = g.nodes[cur.node]
        if node.kind == AND:
            total += g.bias(cur.node)
        elif node.kind == TERMINAL:
            f = g.filter_weights(node.filter_id)
            fh, fw, _ = f.shape
            patch = pyramid.levels[cur.level][cur.y : cur.y + fh, cur.x : cur.x + fw]
            total += float(np.vdot(f, patch))
        if not first and cur.edge is not None:
            off = g.edges[cur.edge].deform_offset
            if off is not None:
                total -= float(np.dot(g.theta[off : off + 4], deformation_feature(cur.delta)))
        first = False
        stack.extend(cur.children)
    return total


def parse_tree_boxes(g: AndOrGraph, pyramid, pt: ParseTree) -> list:
    """Predicted boxes in image pixels: one per single-car And, plus the
    union box when the parse covers more than one car.

    A car box is scored by its own subtree plus an equal share of the
    parse's pattern-level terms (bias, slot deformations), so boxes from
    a multi-car parse rank comparably with single-car detections.
    """
    boxes = []
    for pn in pt.walk():
        node = g.nodes[pn.node]
        if node.kind == AND and node.tag and node.tag[0] == "car":
            if node.model_box is None:
                raise GrammarError(f"single-car And {pn.node} lacks a model box")
            wc, hc = node.model_box
            s = pyramid.scale_of_level(pn.level)
            px, py = pyramid.cell_to_pixel(pn.level, pn.x, pn.y)
            boxes.append(
                Box(px, py, wc * pyramid.cell_size / s, hc * pyramid.cell_size / s,
                    "single-car", subtree_score(g, pyramid, pn))
            )
    if boxes:
        context_share = (pt.score - sum(b.score for b in boxes)) / len(boxes)
        for b in boxes:
            b.score += context_share
    if len(boxes) > 1:
        x0 = min(b.x for b in boxes)
        y0 = min(b.y for b in boxes)
        x1 = max(b.x + b.w for b in boxes)
        y1 = max(b.y + b.h for b in boxes)
        boxes.append(Box(x0, y0, x1 - x0, y1 - y0, "union", pt.score))
    return boxes


def car_tags(pt: ParseTree, g: AndOrGraph) -> list:
    """(view, config) of each chosen single-car And, in car order."""
    tags = []
    def visit(pn):
        node = g.nodes[pn.node]
        if node.kind == AND and node.tag and node.tag[0] == "car":
            tags.append((node.tag[1], node.tag[2]))
        for c in pn.children:
            visit(c)
    visit(pt.root)
    if not tags:
        raise GrammarError("parse tree contains no single-car And")
    return tags


def viewpoint_of(pt: ParseTree, g: AndOrGraph):
    views = [v for v, _ in car_tags(pt, g)]
    return views[0] if len(views) == 1 else views


def occlusion_config_of(pt: ParseTree, g: AndOrGraph):
    cfgs = [c for _, c in car_tags(pt, g)]
    return cfgs[0] if len(cfgs) == 1 else cfgs


def pattern_of(pt: ParseTree, g: AndOrGraph):
    """Tag payload of the chosen top-level And (pattern id or 1-car)."""
    top = g.nodes[pt.root.children[0].node] if pt.root.children else None
    if top is not None and top.tag:
        return top.tag[1] if top.tag[0] == "pattern" else top.tag
    return None
