"""Independent reference implementations used as test oracles.

These deliberately avoid the production code paths: the deformation
transform is a quadratic-time max, cell descriptors use scalar loops,
and grammar scoring enumerates every parse structure explicitly.
"""

import itertools

import numpy as np

from aogdet.grammar import AND, OR, TERMINAL
from aogdet.hog import CHANNELS, N_INS, N_SENS, TEXTURE_WEIGHT, TRUNCATION, to_intensity


def naive_distance_transform(scores, theta):
    """O(n^2) deformation max with ties broken by smallest dx, then dy."""
    cx2, cx1, cy2, cy1 = [float(t) for t in theta]
    scores = np.asarray(scores, dtype=np.float64)
    h, w = scores.shape
    dxs = np.arange(w)[None, :] - np.arange(w)[:, None]  # [x, x']
    dys = np.arange(h)[None, :] - np.arange(h)[:, None]  # [y, y']
    pen_x = cx2 * dxs**2 + cx1 * dxs
    pen_y = cy2 * dys**2 + cy1 * dys
    # vals[y, x, x', y'] so that flattening the last two axes scans
    # sources in (x' asc, y' asc) order: first argmax = smallest dx, then dy
    vals = (
        scores.T[None, None, :, :]
        - pen_x[None, :, :, None]
        - pen_y[:, None, None, :]
    )
    flat = vals.reshape(h, w, w * h)
    idx = np.argmax(flat, axis=2)
    out = np.take_along_axis(flat, idx[:, :, None], axis=2)[:, :, 0]
    sx = idx // h
    sy = idx % h
    dx = sx - np.arange(w)[None, :]
    dy = sy - np.arange(h)[:, None]
    dead = ~np.isfinite(out)
    dx[dead] = 0
    dy[dead] = 0
    return out, dx, dy


def reference_cells(image, cell_size=8):
    """Scalar-loop 31-channel cell descriptors (same contract, no numpy vectorization)."""
    intensity = to_intensity(image)
    h, w = intensity.shape
    cy_n, cx_n = h // cell_size, w // cell_size
    hist = np.zeros((cy_n, cx_n, N_SENS))

    def px(y, x):
        return intensity[min(max(y, 0), h - 1), min(max(x, 0), w - 1)]

    for y in range(h):
        for x in range(w):
            dx = px(y, x + 1) - px(y, x - 1)
            dy = px(y + 1, x) - px(y - 1, x)
            mag = (dx * dx + dy * dy) ** 0.5
            ang = np.arctan2(dy, dx) % (2 * np.pi)
            o = ang * N_SENS / (2 * np.pi)
            o0 = int(np.floor(o)) % N_SENS
            of = o - np.floor(o)
            cy = (y + 0.5) / cell_size - 0.5
            cx = (x + 0.5) / cell_size - 0.5
            iy, ix = int(np.floor(cy)), int(np.floor(cx))
            fy, fx = cy - iy, cx - ix
            for ddy, wy in ((0, 1 - fy), (1, fy)):
                for ddx, wx in ((0, 1 - fx), (1, fx)):
                    yy, xx = iy + ddy, ix + ddx
                    if 0 <= yy < cy_n and 0 <= xx < cx_n:
                        hist[yy, xx, o0] += wy * wx * mag * (1 - of)
                        hist[yy, xx, (o0 + 1) % N_SENS] += wy * wx * mag * of

    energy = np.zeros((cy_n, cx_n))
    for yy in range(cy_n):
        for xx in range(cx_n):
            for o in range(N_INS):
                s = hist[yy, xx, o] + hist[yy, xx, o + N_INS]
                energy[yy, xx] += s * s

    def block(yy, xx):
        yy = min(max(yy, 0), cy_n - 1)
        xx = min(max(xx, 0), cx_n - 1)
        return energy[yy, xx]

    out = np.zeros((cy_n, cx_n, CHANNELS))
    for yy in range(cy_n):
        for xx in range(cx_n):
            norms = []
            for oy, ox in ((-1, -1), (-1, 0), (0, -1), (0, 0)):
                e = (
                    block(yy + oy, xx + ox)
                    + block(yy + oy, xx + ox + 1)
                    + block(yy + oy + 1, xx + ox)
                    + block(yy + oy + 1, xx + ox + 1)
                )
                norms.append(1.0 / np.sqrt(e) if e > 0 else 0.0)
            # order: up-left, up-right, down-left, down-right
            norms = [norms[0], norms[1], norms[2], norms[3]]
            texture = [0.0] * 4
            for o in range(N_SENS):
                acc = 0.0
                for i, nv in enumerate(norms):
                    c = min(hist[yy, xx, o] * nv, TRUNCATION)
                    acc += c
                    texture[i] += c
                out[yy, xx, o] = 0.5 * acc
            for o in range(N_INS):
                val = hist[yy, xx, o] + hist[yy, xx, o + N_INS]
                out[yy, xx, N_SENS + o] = 0.5 * sum(
                    min(val * nv, TRUNCATION) for nv in norms
                )
            for i in range(4):
                out[yy, xx, N_SENS + N_INS + i] = TEXTURE_WEIGHT * texture[i]
    return out


# -- exhaustive grammar scoring ---------------------------------------------


def enumerate_structures(g, nid):
    """Every Or-resolved subtree shape below a node, as nested tuples."""
    node = g.nodes[nid]
    if node.kind == TERMINAL:
        return [("t", nid)]
    if node.kind == OR:
        out = []
        for eid in node.child_edges:
            for sub in enumerate_structures(g, g.edges[eid].child):
                out.append(("or", nid, eid, sub))
        return out
    combos = []
    for eid in node.child_edges:
        combos.append([(eid, s) for s in enumerate_structures(g, g.edges[eid].child)])
    return [("and", nid, tuple(c)) for c in itertools.product(*combos)]


def _loop_correlate(grid, filt):
    fh, fw, _ = filt.shape
    h, w, _ = grid.shape
    out = np.full((h, w), -np.inf)
    for y in range(h - fh + 1):
        for x in range(w - fw + 1):
            out[y, x] = float(np.sum(filt * grid[y : y + fh, x : x + fw]))
    return out


def _edge_gather(child_map, parent_dims, scale_shift, anchor):
    mul = 2 if scale_shift else 1
    ax, ay = anchor
    out = np.full(parent_dims, -np.inf)
    hc, wc = child_map.shape
    for y in range(parent_dims[0]):
        for x in range(parent_dims[1]):
            cy, cx = y * mul + ay, x * mul + ax
            if 0 <= cy < hc and 0 <= cx < wc:
                out[y, x] = child_map[cy, cx]
    return out


def structure_map(g, pyramid, struct, level):
    """Best-score map of one fixed parse structure at a pyramid level."""
    kind = struct[0]
    if kind == "t":
        return _loop_correlate(pyramid.levels[level], g.filter_weights(g.nodes[struct[1]].filter_id))
    if kind == "or":
        return structure_map(g, pyramid, struct[3], level)
    _, nid, combo = struct
    dims = pyramid.levels[level].shape[:2]
    acc = np.full(dims, g.bias(nid))
    for eid, sub in combo:
        e = g.edges[eid]
        lc = level - e.scale_shift * g.levels_per_octave
        if lc < 0 or lc >= pyramid.num_levels:
            acc = acc + np.full(dims, -np.inf)
            continue
        cm = structure_map(g, pyramid, sub, lc)
        if e.deform_offset is not None:
            cm = naive_distance_transform(cm, g.deform_params(eid))[0]
        acc = acc + _edge_gather(cm, dims, e.scale_shift, e.anchor)
    return acc


def enumerated_root_maps(g, pyramid):
    """Pointwise max over all parse structures, per level."""
    structs = enumerate_structures(g, g.root)
    out = []
    for level in range(pyramid.num_levels):
        best = np.full(pyramid.levels[level].shape[:2], -np.inf)
        for s in structs:
            best = np.maximum(best, structure_map(g, pyramid, s, level))
        out.append(best)
    return out
