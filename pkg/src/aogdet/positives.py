"""Multi-car positive sample generation and layout features.

Overlap between boxes means positive intersection area. N-car samples
grow greedily: each (N-1)-car sample is extended by the unused box with
the largest intersection against the union region of the sample's
boxes, deduplicated per image by index set.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import covered_area, intersect_area, union_box


@dataclass
class ImageAnnotation:
    path: str
    boxes: list = field(default_factory=list)  # (x, y, w, h)
    views: list = field(default_factory=list)  # int view bin or None per box


@dataclass
class NCarSample:
    image: int  # index into the annotation list
    indices: tuple  # ordered box indices, |indices| = N
    boxes: list


class DegenerateSampleError(ValueError):
    pass


def read_annotations(path) -> list:
    """One line per box: image-path x y w h [view]. Groups by path."""
    images = {}
    order = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            t = line.split()
            key = t[0]
            if key not in images:
                images[key] = ImageAnnotation(path=key)
                order.append(key)
            if len(t) > 1:
                images[key].boxes.append((float(t[1]), float(t[2]), float(t[3]), float(t[4])))
                images[key].views.append(int(t[5]) if len(t) > 5 else None)
    return [images[k] for k in order]


def write_annotations(path, annotations):
    with open(path, "w") as f:
        f.write("# image x y w h [view]\n")
        for anno in annotations:
            if not anno.boxes:
                f.write(f"{anno.path}\n")
            for box, view in zip(anno.boxes, anno.views):
                tail = "" if view is None else f" {view}"
                f.write(f"{anno.path} {box[0]:.3f} {box[1]:.3f} {box[2]:.3f} {box[3]:.3f}{tail}\n")


def mirror_view(view: int, num_views: int) -> int:
    """View bin after a left-right flip (azimuth -> pi - azimuth)."""
    return int(np.floor(((np.pi - (view + 0.5) * 2 * np.pi / num_views) % (2 * np.pi)) / (2 * np.pi / num_views)))


def mirror_annotation(anno: ImageAnnotation, image_width: float, num_views: int, suffix="#flip"):
    boxes = [(image_width - x - w, y, w, h) for (x, y, w, h) in anno.boxes]
    views = [None if v is None else mirror_view(v, num_views) for v in anno.views]
    return ImageAnnotation(path=anno.path + suffix, boxes=boxes, views=views)


def gen_positive_sets(annotations, n_max: int) -> dict:
    """{N: [NCarSample, ...]} for N = 1..n_max."""
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    sets = {n: [] for n in range(1, n_max + 1)}
    for img, anno in enumerate(annotations):
        boxes = anno.boxes
        k = len(boxes)
        # singles: boxes that overlap no other box of the image
        for j in range(k):
            if all(intersect_area(boxes[j], boxes[o]) <= 0 for o in range(k) if o != j):
                sets[1].append(NCarSample(img, (j,), [boxes[j]]))
        if n_max < 2 or k < 2:
            continue
        seen = set()
        pairs = []
        for j in range(k):
            overlaps = [
                (intersect_area(boxes[j], boxes[o]), o)
                for o in range(k)
                if o != j and intersect_area(boxes[j], boxes[o]) > 0
            ]
            if not overlaps:
                continue
            best = max(overlaps, key=lambda t: (t[0], -t[1]))
            key = frozenset((j, best[1]))
            if key not in seen:
                seen.add(key)
                pairs.append((j, best[1]))
        sets[2].extend(NCarSample(img, p, [boxes[i] for i in p]) for p in pairs)
        prev = pairs
        for n in range(3, n_max + 1):
            if k < n:
                break
            seen_n = set()
            cur = []
            for sample in prev:
                members = set(sample)
                cands = []
                for o in range(k):
                    if o in members:
                        continue
                    if all(intersect_area(boxes[o], boxes[m]) <= 0 for m in sample):
                        continue
                    ov = covered_area(boxes[o], [boxes[m] for m in sample])
                    cands.append((ov, o))
                if not cands:
                    continue
                best = max(cands, key=lambda t: (t[0], -t[1]))
                grown = sample + (best[1],)
                key = frozenset(grown)
                if key not in seen_n:
                    seen_n.add(key)
                    cur.append(grown)
            sets[n].extend(NCarSample(img, s, [boxes[i] for i in s]) for s in cur)
            prev = cur
    return sets


def canonical_order(boxes):
    """Left-to-right by center x (ties by center y, then index)."""
    centers = [(b[0] + b[2] / 2, b[1] + b[3] / 2) for b in boxes]
    order = sorted(range(len(boxes)), key=lambda i: (centers[i][0], centers[i][1], i))
    return order


def layout_features(boxes) -> np.ndarray:
    """2(N-1) normalized center offsets relative to the first car.

    Boxes are taken in canonical left-to-right order; offsets are
    normalized by the union-box width/height.
    """
    if len(boxes) < 2:
        raise ValueError("layout features need N >= 2 boxes")
    order = canonical_order(boxes)
    ordered = [boxes[i] for i in order]
    _, _, wj, hj = union_box(ordered)
    if wj <= 0 or hj <= 0:
        raise DegenerateSampleError("degenerate union box")
    cx1 = ordered[0][0] + ordered[0][2] / 2
    cy1 = ordered[0][1] + ordered[0][3] / 2
    out = []
    for b in ordered[1:]:
        out.append((b[0] + b[2] / 2 - cx1) / wj)
        out.append((b[1] + b[3] / 2 - cy1) / hj)
    return np.array(out)


def car_relative_offsets(boxes) -> list:
    """Center offsets of cars 2..N from car 1 in units of car-1 dims
    (canonical order); used to turn layout clusters into cell anchors."""
    order = canonical_order(boxes)
    ordered = [boxes[i] for i in order]
    x1, y1, w1, h1 = ordered[0]
    cx1, cy1 = x1 + w1 / 2, y1 + h1 / 2
    return [
        ((b[0] + b[2] / 2 - cx1) / w1, (b[1] + b[3] / 2 - cy1) / h1)
        for b in ordered[1:]
    ]


def mine_contexts(samples, n_clusters: int, seed: int = 0):
    """Cluster N-car layout features; returns (centroids, labels, features,
    kept sample list). Degenerate samples are dropped first."""
    from .clustering import kmeans

    feats, kept = [], []
    for s in samples:
        try:
            feats.append(layout_features(s.boxes))
        except DegenerateSampleError:
            continue
        kept.append(s)
    if len(feats) < n_clusters:
        raise ValueError(
            f"need at least {n_clusters} usable samples, got {len(feats)}"
        )
    feats = np.array(feats)
    centroids, labels = kmeans(feats, n_clusters, seed=seed)
    return centroids, labels, feats, kept
