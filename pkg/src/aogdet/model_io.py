"""Textual model format with explicit parameter offsets.

Layout: header (format version, pyramid and view settings), filter
table, node table, edge table, then the flat parameter vector. Floats
are serialized at 17 significant digits so save/load round-trips are
exact, and identical models serialize to identical bytes.
"""

from __future__ import annotations

import numpy as np

from .grammar import AND, OR, TERMINAL, AndOrGraph, Edge, Node

FORMAT_NAME = "aogmodel"
FORMAT_VERSION = 1
VALUES_PER_LINE = 6


class ModelFormatError(ValueError):
    pass


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _fmt_tag(tag) -> str:
    if tag is None:
        return "-"
    return ":".join(str(t) for t in tag)


def _parse_tag(s: str):
    if s == "-":
        return None
    parts = s.split(":")
    out = [parts[0]]
    for p in parts[1:]:
        out.append(int(p))
    return tuple(out)


def save_model(g: AndOrGraph, path):
    lines = [
        f"{FORMAT_NAME} {FORMAT_VERSION}",
        f"lambda {g.levels_per_octave}",
        f"cellsize {g.cell_size}",
        f"views {g.num_views}",
        f"channels {g.channels}",
        f"root {g.root}",
        f"filters {len(g.filter_shapes)}",
    ]
    for fid, (h, w) in enumerate(g.filter_shapes):
        lines.append(f"filter {fid} {g.filter_offsets[fid]} {h} {w}")
    lines.append(f"nodes {len(g.nodes)}")
    for nid, node in enumerate(g.nodes):
        if node.kind == TERMINAL:
            lines.append(f"node {nid} terminal {node.filter_id}")
        elif node.kind == AND:
            box = "-" if node.model_box is None else f"{_fmt(node.model_box[0])},{_fmt(node.model_box[1])}"
            lines.append(f"node {nid} and {node.bias_offset} {_fmt_tag(node.tag)} {box}")
        else:
            lines.append(f"node {nid} or {_fmt_tag(node.tag)}")
    lines.append(f"edges {len(g.edges)}")
    for e in g.edges:
        d = "-" if e.deform_offset is None else str(e.deform_offset)
        lines.append(
            f"edge {e.parent} {e.child} {e.scale_shift} {e.anchor[0]} {e.anchor[1]} {d}"
        )
    lines.append(f"params {len(g.theta)}")
    for i in range(0, len(g.theta), VALUES_PER_LINE):
        lines.append(" ".join(_fmt(v) for v in g.theta[i : i + VALUES_PER_LINE]))
    lines.append("end")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


class _Reader:
    def __init__(self, path):
        with open(path) as f:
            self.lines = f.read().splitlines()
        self.pos = 0

    def next(self, expect=None):
        if self.pos >= len(self.lines):
            raise ModelFormatError(f"line {self.pos + 1}: unexpected end of file")
        line = self.lines[self.pos]
        self.pos += 1
        toks = line.split()
        if expect is not None and (not toks or toks[0] != expect):
            raise ModelFormatError(f"line {self.pos}: expected '{expect}', got '{line}'")
        return toks


def load_model(path) -> AndOrGraph:
    r = _Reader(path)
    try:
        head = r.next(FORMAT_NAME)
        if int(head[1]) != FORMAT_VERSION:
            raise ModelFormatError(
                f"line 1: unsupported model format version {head[1]} (want {FORMAT_VERSION})"
            )
        lam = int(r.next("lambda")[1])
        cell = int(r.next("cellsize")[1])
        views = int(r.next("views")[1])
        channels = int(r.next("channels")[1])
        root = int(r.next("root")[1])
        g = AndOrGraph(levels_per_octave=lam, cell_size=cell, num_views=views, channels=channels)
        nf = int(r.next("filters")[1])
        for _ in range(nf):
            t = r.next("filter")
            g.filter_offsets.append(int(t[2]))
            g.filter_shapes.append((int(t[3]), int(t[4])))
        nn = int(r.next("nodes")[1])
        for _ in range(nn):
            t = r.next("node")
            kind = t[2]
            if kind == "terminal":
                g.nodes.append(Node(TERMINAL, filter_id=int(t[3])))
            elif kind == "and":
                box = None
                if t[5] != "-":
                    a, b = t[5].split(",")
                    box = (float(a), float(b))
                g.nodes.append(
                    Node(AND, bias_offset=int(t[3]), tag=_parse_tag(t[4]), model_box=box)
                )
            elif kind == "or":
                g.nodes.append(Node(OR, tag=_parse_tag(t[3])))
            else:
                raise ModelFormatError(f"line {r.pos}: unknown node kind '{kind}'")
        ne = int(r.next("edges")[1])
        for _ in range(ne):
            t = r.next("edge")
            e = Edge(
                parent=int(t[1]),
                child=int(t[2]),
                scale_shift=int(t[3]),
                anchor=(int(t[4]), int(t[5])),
                deform_offset=None if t[6] == "-" else int(t[6]),
            )
            g.edges.append(e)
            g.nodes[e.parent].child_edges.append(len(g.edges) - 1)
        np_ = int(r.next("params")[1])
        vals = []
        while len(vals) < np_:
            vals.extend(float(v) for v in r.next())
        if len(vals) != np_:
            raise ModelFormatError(f"line {r.pos}: parameter count mismatch")
        r.next("end")
        g.theta = np.array(vals, dtype=np.float64)
        g.root = root
        return g
    except (IndexError, ValueError) as exc:
        if isinstance(exc, ModelFormatError):
            raise
        raise ModelFormatError(f"line {r.pos}: malformed entry ({exc})") from exc
