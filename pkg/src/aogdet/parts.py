"""Versioned semantic part dictionary and its 2.5-D projection.

A car is a unit box (length x width x height = 1.0 x 0.45 x 0.42 before
type scaling) carrying 17 named parts, each an axis-aligned 3-D sub-box
with outward face directions. An orthographic camera at a given azimuth
and elevation projects part boxes to axis-aligned image rectangles
inside the car's image footprint; a part is self-visible when one of
its faces points toward the camera.
"""

from __future__ import annotations

import numpy as np

PARTS_VERSION = 1

CAR_LENGTH = 1.0
CAR_WIDTH = 0.45
CAR_HEIGHT = 0.42

# faces: f front (-u), b rear (+u), l left (-v), r right (+v), t top (+z)
# boxes: (u0, u1, v0, v1, z0, z1) fractions of the car box
PART_TABLE = [
    ("front_bumper", (0.00, 0.08, 0.05, 0.95, 0.10, 0.45), "f"),
    ("hood", (0.05, 0.30, 0.10, 0.90, 0.52, 0.62), "t"),
    ("windshield", (0.28, 0.42, 0.12, 0.88, 0.62, 0.95), "ft"),
    ("roof", (0.40, 0.62, 0.12, 0.88, 0.90, 1.00), "t"),
    ("rear_window", (0.60, 0.74, 0.12, 0.88, 0.62, 0.95), "bt"),
    ("trunk", (0.72, 0.95, 0.10, 0.90, 0.52, 0.64), "bt"),
    ("rear_bumper", (0.92, 1.00, 0.05, 0.95, 0.10, 0.45), "b"),
    ("left_front_wheel", (0.10, 0.28, 0.00, 0.10, 0.00, 0.30), "l"),
    ("right_front_wheel", (0.10, 0.28, 0.90, 1.00, 0.00, 0.30), "r"),
    ("left_rear_wheel", (0.72, 0.90, 0.00, 0.10, 0.00, 0.30), "l"),
    ("right_rear_wheel", (0.72, 0.90, 0.90, 1.00, 0.00, 0.30), "r"),
    ("left_front_door", (0.32, 0.52, 0.00, 0.08, 0.25, 0.80), "l"),
    ("right_front_door", (0.32, 0.52, 0.92, 1.00, 0.25, 0.80), "r"),
    ("left_rear_door", (0.52, 0.72, 0.00, 0.08, 0.25, 0.80), "l"),
    ("right_rear_door", (0.52, 0.72, 0.92, 1.00, 0.25, 0.80), "r"),
    ("left_mirror", (0.28, 0.36, 0.00, 0.06, 0.58, 0.72), "lf"),
    ("right_mirror", (0.28, 0.36, 0.94, 1.00, 0.58, 0.72), "rf"),
]

NUM_PARTS = len(PART_TABLE)
PART_NAMES = [name for name, _, _ in PART_TABLE]

_FACE_NORMALS = {
    "f": np.array([-1.0, 0.0, 0.0]),
    "b": np.array([1.0, 0.0, 0.0]),
    "l": np.array([0.0, -1.0, 0.0]),
    "r": np.array([0.0, 1.0, 0.0]),
    "t": np.array([0.0, 0.0, 1.0]),
}


def type_dims(car_type: int, type_count: int):
    """Deterministic per-type car box dims (length, width, height)."""
    t = car_type / max(1, type_count - 1) if type_count > 1 else 0.5
    return (
        CAR_LENGTH * (0.90 + 0.20 * t),
        CAR_WIDTH * (0.95 + 0.10 * (1 - t)),
        CAR_HEIGHT * (0.92 + 0.16 * t),
    )


# ground depth leaks into image height as elevation grows; the gain is
# damped so footprint aspect stays within the reach of pyramid levels
DEPTH_GAIN = 0.35


def project_point(x, y, z, azimuth, elevation):
    """Orthographic 2.5-D projection to image (x right, y down)."""
    ca, sa = np.cos(azimuth), np.sin(azimuth)
    depth = x * ca + y * sa
    img_x = -x * sa + y * ca
    img_y = -z * np.cos(elevation) - depth * DEPTH_GAIN * np.sin(elevation)
    return img_x, img_y, depth


def _project_box(corners, azimuth, elevation):
    xs, ys = [], []
    for (x, y, z) in corners:
        ix, iy, _ = project_point(x, y, z, azimuth, elevation)
        xs.append(ix)
        ys.append(iy)
    x0, y0 = min(xs), min(ys)
    return (x0, y0, max(xs) - x0, max(ys) - y0)


def _box_corners(cx, cy, heading_flip, dims, frac):
    """World corners of a part box on a car centered at (cx, cy)."""
    length, width, height = dims
    u0, u1, v0, v1, z0, z1 = frac
    sgn = -1.0 if heading_flip else 1.0
    out = []
    for u in (u0, u1):
        for v in (v0, v1):
            for z in (z0, z1):
                out.append(
                    (
                        cx + sgn * (u - 0.5) * length,
                        cy + sgn * (v - 0.5) * width,
                        z * height,
                    )
                )
    return out


def project_car(cx, cy, heading_flip, dims, azimuth, elevation):
    """Image footprint box, per-part image rects, and self-visibility.

    Returns (footprint, part_rects, self_visible) where rects are
    (x, y, w, h) in projected world units.
    """
    footprint = _box_corners(cx, cy, heading_flip, dims, (0, 1, 0, 1, 0, 1))
    foot_rect = _project_box(footprint, azimuth, elevation)
    toward_cam = np.array(
        [
            -np.cos(azimuth) * np.cos(elevation),
            -np.sin(azimuth) * np.cos(elevation),
            np.sin(elevation),
        ]
    )
    sgn = -1.0 if heading_flip else 1.0
    rects, visible = [], []
    for _, frac, faces in PART_TABLE:
        rects.append(
            _project_box(_box_corners(cx, cy, heading_flip, dims, frac), azimuth, elevation)
        )
        vis = False
        for face in faces:
            n = _FACE_NORMALS[face].copy()
            n[:2] *= sgn
            if float(n @ toward_cam) > 1e-9:
                vis = True
                break
        visible.append(vis)
    return foot_rect, rects, visible


def car_depth(cx, cy, azimuth):
    return cx * np.cos(azimuth) + cy * np.sin(azimuth)
