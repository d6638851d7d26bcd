"""Generalized distance transform for separable quadratic deformation costs.

Computes, over a 2-D score grid,

    out[y, x] = max_{dx, dy} scores[y + dy, x + dx]
                - (c_x2*dx^2 + c_x1*dx + c_y2*dy^2 + c_y1*dy)

together with the maximizing displacements, in O(n) per row/column via
the lower-envelope (convex hull of lines) construction. The deformation
space is the full grid, and -inf entries mark positions a child cannot
occupy. Ties are broken toward the smallest dx, then the smallest dy.
"""

from __future__ import annotations

import numpy as np

MIN_QUADRATIC = 0.001


class DeformationContractError(ValueError):
    """Quadratic deformation coefficient below the positivity clamp."""


def _check_theta(theta):
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (4,):
        raise ValueError("deformation parameters must be [dx^2, dx, dy^2, dy]")
    if theta[0] < MIN_QUADRATIC or theta[2] < MIN_QUADRATIC:
        raise DeformationContractError(
            f"quadratic coefficients {theta[0]}, {theta[2]} below {MIN_QUADRATIC}"
        )
    return theta


def _transform_row(fl: list, c2: float, c1: float):
    """List-based core of the 1-D transform (hot path)."""
    n = len(fl)
    neg = float("-inf")
    finite = [i for i in range(n) if fl[i] != neg]
    if not finite:
        return [neg] * n, list(range(n))

    # each source s contributes the line (2*c2*s)*x + (f[s] - c2*s^2 - c1*s)
    # plus a source-independent term; slopes increase with s.
    u = [fl[s] - c2 * s * s - c1 * s for s in finite]
    two_c2 = 2.0 * c2
    hull = []  # indices into `finite`
    zs = []  # zs[i]: boundary where hull[i+1] starts dominating hull[i]
    for k in range(len(finite)):
        uk = u[k]
        sk = finite[k]
        while hull:
            p = hull[-1]
            cross = (u[p] - uk) / (two_c2 * (sk - finite[p]))
            if zs and cross <= zs[-1]:
                hull.pop()
                zs.pop()
                continue
            hull.append(k)
            zs.append(cross)
            break
        if not hull:
            hull.append(k)

    out = [neg] * n
    src = list(range(n))
    j = 0
    nz = len(zs)
    for x in range(n):
        while j < nz and zs[j] < x:
            j += 1
        s = finite[hull[j]]
        d = s - x
        out[x] = fl[s] - c2 * d * d - c1 * d
        src[x] = s
    return out, src


def transform_1d(f: np.ndarray, c2: float, c1: float):
    """1-D max transform: out[x] = max_s f[s] - c2*(s-x)^2 - c1*(s-x).

    Returns (out, src) where src[x] is the maximizing source index,
    smallest index on ties. -inf entries in f are skipped as sources.
    """
    out, src = _transform_row(np.asarray(f, dtype=np.float64).tolist(), c2, c1)
    return np.array(out), np.array(src, dtype=np.int64)


def distance_transform(scores: np.ndarray, theta_def):
    """2-D deformation transform of a score grid.

    `theta_def` is [c_x2, c_x1, c_y2, c_y1] matching the deformation
    feature [dx^2, dx, dy^2, dy]. Returns (deformed, dx_star, dy_star).
    """
    theta = _check_theta(theta_def)
    cx2, cx1, cy2, cy1 = theta
    scores = np.asarray(scores, dtype=np.float64)
    h, w = scores.shape

    # pass 1: columns (dy); pass 2: rows (dx). Row pass last makes dx the
    # primary tie-break key, column pass makes dy secondary.
    cols = np.ascontiguousarray(scores.T).tolist()
    g1_rows = []
    sy_rows = []
    for x in range(w):
        o, s = _transform_row(cols[x], cy2, cy1)
        g1_rows.append(o)
        sy_rows.append(s)
    g1 = np.array(g1_rows).T  # (h, w)
    sy = np.array(sy_rows, dtype=np.int64).T
    out = np.empty_like(scores)
    sx = np.empty((h, w), dtype=np.int64)
    g1_list = g1.tolist()
    for y in range(h):
        o, s = _transform_row(g1_list[y], cx2, cx1)
        out[y] = o
        sx[y] = s

    xs = np.arange(w)[None, :]
    ys = np.arange(h)[:, None]
    dx_star = sx - xs
    dy_star = sy[ys, sx] - ys
    dead = ~np.isfinite(out)
    dx_star[dead] = 0
    dy_star[dead] = 0
    return out, dx_star, dy_star
