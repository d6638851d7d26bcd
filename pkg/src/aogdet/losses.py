"""Weak-label structured loss over predicted box sets.

L(y, pred) is penalty-valued: `penalty` when background is predicted as
foreground (or vice versa under the coverage rule), 0 when every ground
truth box is covered at the overlap threshold by some predicted box.
The margin loss uses (1, 0.5); the output loss uses (inf, 0.7).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .geometry import iou


@dataclass(frozen=True)
class LossSpec:
    penalty: float  # positive, may be inf
    overlap: float  # in (0, 1)

    def __post_init__(self):
        if not (self.penalty > 0):
            raise ValueError("penalty must be > 0 (inf allowed)")
        if not (0 < self.overlap < 1):
            raise ValueError("overlap threshold must lie in (0, 1)")


MARGIN_LOSS = LossSpec(1.0, 0.5)
OUTPUT_LOSS = LossSpec(math.inf, 0.7)


def structured_loss(y_boxes, pred_boxes, spec: LossSpec) -> float:
    """Four-case weak-label loss.

    `y_boxes` is a list of (x, y, w, h) or None for background;
    `pred_boxes` likewise (empty list counts as background).
    """
    y_bg = y_boxes is None or len(y_boxes) == 0
    p_bg = pred_boxes is None or len(pred_boxes) == 0
    if y_bg:
        return 0.0 if p_bg else spec.penalty
    for gt in y_boxes:
        if p_bg or all(iou(gt, pb) < spec.overlap for pb in pred_boxes):
            return spec.penalty
    return 0.0
