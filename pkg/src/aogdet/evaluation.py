"""Detection and viewpoint metrics: average precision over greedy
box matching, the view confusion matrix and its diagonal mean, and
view-aware average precision.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import iou


@dataclass
class EvalResult:
    ap: float = 0.0
    precision: np.ndarray = None
    recall: np.ndarray = None
    tp: int = 0
    fp: int = 0
    missed: int = 0
    confusion: np.ndarray = None  # row-normalized, rows = true view
    mppe: float = None
    empty_views: list = field(default_factory=list)
    avp: float = None

    def write(self, path):
        with open(path, "w") as f:
            f.write(f"ap {self.ap:.6f}\n")
            f.write(f"tp {self.tp}\nfp {self.fp}\nmissed {self.missed}\n")
            if self.mppe is not None:
                f.write(f"mppe {self.mppe:.6f}\n")
            if self.avp is not None:
                f.write(f"avp {self.avp:.6f}\n")
            if self.confusion is not None:
                for row in self.confusion:
                    f.write("confusion " + " ".join(f"{v:.4f}" for v in row) + "\n")


def write_pr_curve(path, result: EvalResult):
    """Two-column recall/precision text file."""
    with open(path, "w") as f:
        f.write("# recall precision\n")
        if result.recall is not None:
            for r, p in zip(result.recall, result.precision):
                f.write(f"{r:.6f} {p:.6f}\n")


def _match(dets, gts, iou_thresh, min_height, require_view):
    """Greedy matching by descending score.

    Returns (flags, view_pairs, n_gt): flags[i] in {1 TP, 0 FP, -1
    ignored}; view_pairs are (gt_view, det_view) for matched TPs.
    """
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, dets[i].image_id, i))
    matched = {}
    n_gt = sum(len(v) for v in gts.values())
    flags = np.zeros(len(dets), dtype=np.int64)
    pairs = []
    for i in order:
        det = dets[i]
        cands = gts.get(det.image_id, [])
        best_j, best_iou = -1, 0.0
        for j, (gbox, _) in enumerate(cands):
            ov = iou(det.box, gbox)
            if ov > best_iou:
                best_j, best_iou = j, ov
        if best_j >= 0 and best_iou >= iou_thresh:
            key = (det.image_id, best_j)
            if key in matched:
                flags[i] = 0  # duplicate detection of a matched object
            elif require_view and det.view != cands[best_j][1]:
                matched[key] = i
                flags[i] = 0  # box correct, view wrong
            else:
                matched[key] = i
                flags[i] = 1
                pairs.append((cands[best_j][1], det.view))
        else:
            flags[i] = -1 if det.box[3] < min_height else 0
    return flags, order, pairs, n_gt


def _pr_curve(flags, order, n_gt):
    seq = [flags[i] for i in order if flags[i] >= 0]
    tp = np.cumsum([f == 1 for f in seq])
    fp = np.cumsum([f == 0 for f in seq])
    recall = tp / max(1, n_gt)
    precision = tp / np.maximum(1, tp + fp)
    return recall, precision


def ap_from_curve(recall, precision, eleven_point=False):
    """All-points interpolated average precision (optionally 11-point)."""
    if len(recall) == 0:
        return 0.0
    if eleven_point:
        vals = []
        for t in np.linspace(0, 1, 11):
            mask = recall >= t - 1e-12
            vals.append(float(precision[mask].max()) if mask.any() else 0.0)
        return float(np.mean(vals))
    r = np.concatenate([[0.0], recall, [recall[-1]]])
    p = np.concatenate([[0.0], precision, [0.0]])
    for i in range(len(p) - 2, -1, -1):
        p[i] = max(p[i], p[i + 1])
    idx = np.nonzero(r[1:] != r[:-1])[0] + 1
    return float(np.sum((r[idx] - r[idx - 1]) * p[idx]))


def evaluate_ap(dets, gts, iou_thresh=0.5, min_height=0.0, eleven_point=False) -> EvalResult:
    """PASCAL-style AP; detections shorter than min_height that match
    nothing are ignored (neither TP nor FP)."""
    flags, order, pairs, n_gt = _match(dets, gts, iou_thresh, min_height, False)
    recall, precision = _pr_curve(flags, order, n_gt)
    tp = int(np.sum(flags == 1))
    fp = int(np.sum(flags == 0))
    return EvalResult(
        ap=ap_from_curve(recall, precision, eleven_point),
        precision=precision,
        recall=recall,
        tp=tp,
        fp=fp,
        missed=n_gt - tp,
    )


def evaluate_mppe(view_pairs, num_views: int):
    """Row-normalized confusion matrix over matched detections and the
    mean of its diagonal; empty true-view rows are excluded and listed."""
    counts = np.zeros((num_views, num_views))
    for gt_view, det_view in view_pairs:
        counts[gt_view, det_view] += 1
    row_sums = counts.sum(axis=1)
    confusion = np.zeros_like(counts)
    diag, empty = [], []
    for v in range(num_views):
        if row_sums[v] > 0:
            confusion[v] = counts[v] / row_sums[v]
            diag.append(confusion[v, v])
        else:
            empty.append(v)
    mppe = float(np.mean(diag)) if diag else 0.0
    return confusion, mppe, empty


def evaluate_avp(dets, gts, num_views: int, iou_thresh=0.5) -> float:
    """AP where a true positive also requires the correct view bin."""
    flags, order, _, n_gt = _match(dets, gts, iou_thresh, 0.0, True)
    recall, precision = _pr_curve(flags, order, n_gt)
    return ap_from_curve(recall, precision)


def evaluate(dets, gts, num_views=None, iou_thresh=0.5, min_height=0.0,
             eleven_point=False) -> EvalResult:
    """AP plus, when num_views is given, the confusion matrix, MPPE, AVP."""
    result = evaluate_ap(dets, gts, iou_thresh, min_height, eleven_point)
    if num_views:
        flags, order, pairs, _ = _match(dets, gts, iou_thresh, min_height, False)
        confusion, mppe, empty = evaluate_mppe(pairs, num_views)
        result.confusion = confusion
        result.mppe = mppe
        result.empty_views = empty
        result.avp = evaluate_avp(dets, gts, num_views, iou_thresh)
    return result


def read_ground_truth(annotations) -> dict:
    """{image id: [((x, y, w, h), view), ...]} from annotation records."""
    out = {}
    for anno in annotations:
        out[anno.path] = [(box, view) for box, view in zip(anno.boxes, anno.views)]
    return out
