"""Compress the occlusion data matrix into per-view branch structure.

Per view, the initial structure has one branch per matrix row. Branches
are merged greedily: at each step the pair whose merge most decreases

    sum_i ||v_i - v_i(G)||^2 + lambda_c * |G|

is combined (v_i(G) is the nearest branch vector, |G| counts nodes and
edges of the view subgraph). Merging continues while it improves the
objective, and is forced while the branch count exceeds K. Surviving
branches are factored into consistently visible parts and per-branch
optional part clusters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .parts import NUM_PARTS
from .scenes import OcclusionDataMatrix


@dataclass
class ViewStructure:
    view: int
    always_visible: list  # part ids visible in every branch
    clusters: list  # per-branch optional part id lists
    branch_vectors: np.ndarray  # (n_branches, 17) binary
    branch_counts: list  # member rows per branch
    root_boxes: list  # per-branch (w, h) geometric means
    part_boxes: list  # per-branch dict part -> (x, y, w, h) normalized


@dataclass
class OcclusionStructure:
    num_views: int
    views: dict = field(default_factory=dict)  # view -> ViewStructure
    merge_log: dict = field(default_factory=dict)  # view -> objective per merge


def _structure_size(vectors):
    """|G| of one view: view Or + branch Ands + distinct part terminals
    as nodes, Or->And and And->part links as edges."""
    n_branches = len(vectors)
    used = np.zeros(vectors.shape[1], dtype=bool)
    for v in vectors:
        used |= v > 0
    n_edges = n_branches + int(sum(int(v.sum()) for v in vectors))
    return 1 + n_branches + int(used.sum()) + n_edges


def _objective(patterns, counts, vectors, lam):
    d = ((patterns[:, None, :] - vectors[None, :, :]) ** 2).sum(axis=2)
    return float((counts * d.min(axis=1)).sum()) + lam * _structure_size(vectors)


def _majority(sum_vec, total):
    return (sum_vec / total >= 0.5).astype(np.float64)


def geometric_mean(values, axis=0):
    """Geometric mean; exact zeros propagate to zero."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return np.zeros(values.shape[1:] if values.ndim > 1 else ())
    any_zero = (values <= 0).any(axis=axis)
    safe = np.where(values > 0, values, 1.0)
    out = np.exp(np.log(safe).mean(axis=axis))
    return np.where(any_zero, 0.0, out)


def compress(matrix: OcclusionDataMatrix, lambda_c: float = 0.5, max_branches: int = 4) -> OcclusionStructure:
    if lambda_c <= 0:
        raise ValueError("lambda_c must be > 0")
    if max_branches < 1:
        raise ValueError("max_branches must be >= 1")
    npart = NUM_PARTS
    out = OcclusionStructure(num_views=matrix.num_views)

    for beta in range(matrix.num_views):
        rows_idx = np.flatnonzero(matrix.view_of_row == beta)
        seg = matrix.v[rows_idx, beta * npart : (beta + 1) * npart].astype(np.float64)
        keep = seg.sum(axis=1) > 0  # fully occluded examples carry no structure
        rows_idx = rows_idx[keep]
        seg = seg[keep]
        if len(seg) == 0:
            continue

        # group identical rows into weighted patterns
        patterns, inverse, counts = np.unique(
            seg, axis=0, return_inverse=True, return_counts=True
        )
        counts = counts.astype(np.float64)

        # one branch per row initially; merging duplicates first is the
        # greedy's own best move (zero error delta, complexity strictly down)
        vectors = [patterns[k].copy() for k in range(len(patterns))]
        members_sum = [patterns[k] * counts[k] for k in range(len(patterns))]
        members_n = [counts[k] for k in range(len(patterns))]
        n_rows_total = counts.sum()
        # log the dedup merges at their exact objective values
        start_vecs = np.repeat(patterns, counts.astype(int), axis=0)
        obj = _objective(patterns, counts, start_vecs, lambda_c)
        log = [obj]
        for k in range(len(patterns)):
            for _ in range(int(counts[k]) - 1):
                obj -= lambda_c * (2 + patterns[k].sum())  # drop one And + its edges
                log.append(obj)
        out.merge_log[beta] = log

        def full_objective(vecs):
            return _objective(patterns, counts, np.array(vecs), lambda_c)

        cur = full_objective(vectors)
        while len(vectors) > 1:
            best = None
            for a in range(len(vectors)):
                for b in range(a + 1, len(vectors)):
                    m_sum = members_sum[a] + members_sum[b]
                    m_n = members_n[a] + members_n[b]
                    merged = _majority(m_sum, m_n)
                    cand = [v for i, v in enumerate(vectors) if i not in (a, b)]
                    cand.append(merged)
                    val = full_objective(cand)
                    if best is None or val < best[0]:
                        best = (val, a, b, merged, m_sum, m_n)
            val, a, b, merged, m_sum, m_n = best
            if len(vectors) <= max_branches and val >= cur:
                break
            vectors = [v for i, v in enumerate(vectors) if i not in (a, b)] + [merged]
            members_sum = [s for i, s in enumerate(members_sum) if i not in (a, b)] + [m_sum]
            members_n = [n for i, n in enumerate(members_n) if i not in (a, b)] + [m_n]
            cur = val
            log.append(cur)

        branch_vectors = np.array(vectors)
        assign = np.argmin(
            ((patterns[:, None, :] - branch_vectors[None, :, :]) ** 2).sum(axis=2), axis=1
        )
        always = np.all(branch_vectors > 0, axis=0)
        x_parts = [p for p in range(npart) if always[p]]
        clusters, root_boxes, part_boxes, branch_counts = [], [], [], []
        bseg = beta * (1 + npart) * 4
        brows = matrix.b[rows_idx]
        for j, vec in enumerate(branch_vectors):
            clusters.append([p for p in range(npart) if vec[p] > 0 and not always[p]])
            member_rows = brows[np.isin(inverse, np.flatnonzero(assign == j))]
            branch_counts.append(len(member_rows))
            roots = member_rows[:, bseg + 2 : bseg + 4]
            root_boxes.append(tuple(geometric_mean(roots, axis=0)) if len(roots) else (1.0, 1.0))
            boxes = {}
            for p in range(npart):
                if vec[p] <= 0:
                    continue
                col = bseg + 4 * (1 + p)
                vals = member_rows[:, col : col + 4]
                vals = vals[vals[:, 2] > 0]  # rows where the part was visible
                if len(vals):
                    boxes[p] = tuple(geometric_mean(vals, axis=0))
            part_boxes.append(boxes)
        out.views[beta] = ViewStructure(
            view=beta,
            always_visible=x_parts,
            clusters=clusters,
            branch_vectors=branch_vectors,
            branch_counts=branch_counts,
            root_boxes=root_boxes,
            part_boxes=part_boxes,
        )
    return out


def nearest_branch(structure: OcclusionStructure, view: int, visibility) -> int:
    """Branch index of a view whose vector best matches a visibility row."""
    vs = structure.views[view]
    d = ((vs.branch_vectors - np.asarray(visibility, dtype=np.float64)) ** 2).sum(axis=1)
    return int(np.argmin(d))


def write_structure_dump(path, structure: OcclusionStructure, part_names):
    with open(path, "w") as f:
        f.write(f"# occlusion structure, {structure.num_views} views\n")
        for beta, vs in sorted(structure.views.items()):
            f.write(f"view {beta}\n")
            f.write(
                "  always: " + " ".join(part_names[p] for p in vs.always_visible) + "\n"
            )
            for j, cluster in enumerate(vs.clusters):
                names = " ".join(part_names[p] for p in cluster)
                f.write(
                    f"  branch {j} rows {vs.branch_counts[j]} optional: {names}\n"
                )
