"""Axis-aligned box arithmetic shared across the package.

Boxes are (x, y, w, h) with (x, y) the left-top corner, in float or int
coordinates. Widths/heights are extents, not inclusive pixel counts.
"""

from __future__ import annotations

import numpy as np


def box_area(box):
    return max(0.0, box[2]) * max(0.0, box[3])


def intersect_area(a, b) -> float:
    """Intersection area of two (x, y, w, h) boxes."""
    ix = min(a[0] + a[2], b[0] + b[2]) - max(a[0], b[0])
    iy = min(a[1] + a[3], b[1] + b[3]) - max(a[1], b[1])
    if ix <= 0 or iy <= 0:
        return 0.0
    return ix * iy


def iou(a, b) -> float:
    """Intersection-over-union of two (x, y, w, h) boxes."""
    inter = intersect_area(a, b)
    if inter <= 0:
        return 0.0
    union = box_area(a) + box_area(b) - inter
    return inter / union if union > 0 else 0.0


def union_box(boxes):
    """Smallest box enclosing all given boxes."""
    if not len(boxes):
        raise ValueError("union_box of empty set")
    x0 = min(b[0] for b in boxes)
    y0 = min(b[1] for b in boxes)
    x1 = max(b[0] + b[2] for b in boxes)
    y1 = max(b[1] + b[3] for b in boxes)
    return (x0, y0, x1 - x0, y1 - y0)


def covered_area(target, covers) -> float:
    """Area of `target` covered by the union of the boxes in `covers`.

    Exact, via coordinate compression over the clipped cover rectangles.
    """
    tx0, ty0 = target[0], target[1]
    tx1, ty1 = tx0 + target[2], ty0 + target[3]
    if tx1 <= tx0 or ty1 <= ty0:
        return 0.0
    clipped = []
    for c in covers:
        x0 = max(tx0, c[0])
        y0 = max(ty0, c[1])
        x1 = min(tx1, c[0] + c[2])
        y1 = min(ty1, c[1] + c[3])
        if x1 > x0 and y1 > y0:
            clipped.append((x0, y0, x1, y1))
    if not clipped:
        return 0.0
    xs = np.unique(np.array([v for r in clipped for v in (r[0], r[2])]))
    ys = np.unique(np.array([v for r in clipped for v in (r[1], r[3])]))
    # mark covered grid cells of the compressed lattice
    mask = np.zeros((len(ys) - 1, len(xs) - 1), dtype=bool)
    for (x0, y0, x1, y1) in clipped:
        ix0, ix1 = np.searchsorted(xs, x0), np.searchsorted(xs, x1)
        iy0, iy1 = np.searchsorted(ys, y0), np.searchsorted(ys, y1)
        mask[iy0:iy1, ix0:ix1] = True
    wx = np.diff(xs)
    wy = np.diff(ys)
    return float((wy[:, None] * wx[None, :])[mask].sum())


def visible_fraction(target, occluders) -> float:
    """Fraction of `target`'s area not covered by the union of `occluders`."""
    area = box_area(target)
    if area <= 0:
        return 0.0
    return 1.0 - covered_area(target, occluders) / area


def clip_box(box, width, height):
    """Clip (x, y, w, h) to the image rectangle [0, width) x [0, height)."""
    x0 = max(0.0, box[0])
    y0 = max(0.0, box[1])
    x1 = min(float(width), box[0] + box[2])
    y1 = min(float(height), box[1] + box[3])
    return (x0, y0, max(0.0, x1 - x0), max(0.0, y1 - y0))
