"""Render simulated scenes into textured grayscale images.

Cars are painted far-to-near (painter's algorithm) so image occlusion
matches the simulator's footprint-coverage model exactly. The car body
and each self-visible part get distinct oriented square-wave textures
keyed on (part, view bin), on top of a smooth noise background; a mild
Gaussian blur softens pasted boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from .parts import NUM_PARTS
from .scenes import SceneConfig, visibility_row

BODY_BASE = 112.0
BODY_AMP = 40.0
PART_BASE = 142.0
PART_AMP = 50.0


@dataclass
class RenderedScene:
    image: np.ndarray  # (H, W) float64, 0..255
    boxes: list  # per-car (x, y, w, h) pixel boxes, car 0 = center car
    views: list  # per-car view bin (the scene camera bin)
    visibility: list  # per-car 17-entry binary rows
    scene: SceneConfig = None


def texture_angle(part: int, view: int, num_views: int) -> float:
    """Distinct stripe orientation per (part, view); part -1 is the body."""
    base = np.pi * (part + 2) / (NUM_PARTS + 4)
    return base + view * np.pi / (2.0 * max(1, num_views))


def _paint_stripes(image, rect_px, angle, base, amp, freq=0.6, chirp=0.0, border=0):
    """Oriented square-wave fill; `chirp` sweeps the frequency across the
    rectangle (breaking translation invariance so windows localize) and
    `border` paints a dark silhouette band of that pixel width."""
    h, w = image.shape
    x0 = max(0, int(np.floor(rect_px[0])))
    y0 = max(0, int(np.floor(rect_px[1])))
    x1 = min(w, int(np.ceil(rect_px[0] + rect_px[2])))
    y1 = min(h, int(np.ceil(rect_px[1] + rect_px[3])))
    if x1 <= x0 or y1 <= y0:
        return
    ys, xs = np.mgrid[y0:y1, x0:x1]
    u = xs - rect_px[0]
    v = ys - rect_px[1]
    rel = u / max(rect_px[2], 1.0)
    local_freq = freq * (1.0 + chirp * rel)
    phase = local_freq * (np.cos(angle) * u + np.sin(angle) * v)
    image[y0:y1, x0:x1] = base + amp * np.sign(np.sin(phase) + 1e-12)
    if border > 0:
        inner_x0 = min(x1, x0 + border)
        inner_x1 = max(x0, x1 - border)
        inner_y0 = min(y1, y0 + border)
        inner_y1 = max(y0, y1 - border)
        image[y0:inner_y0, x0:x1] = 30.0
        image[inner_y1:y1, x0:x1] = 30.0
        image[y0:y1, x0:inner_x0] = 30.0
        image[y0:y1, inner_x1:x1] = 30.0


def render_background(rng, shape=(240, 320)) -> np.ndarray:
    """Car-free textured background image."""
    img = 128.0 + gaussian_filter(rng.normal(0.0, 40.0, shape), 6.0)
    img += rng.normal(0.0, 1.5, shape)
    return np.clip(img, 0, 255)


def render_scene(
    scene: SceneConfig,
    rng,
    pixels_per_unit: float = 96.0,
    margin: float = 0.25,
    blur: float = 0.7,
) -> RenderedScene:
    feet = [car.footprint for car in scene.cars]
    x_min = min(f[0] for f in feet) - margin
    y_min = min(f[1] for f in feet) - margin
    x_max = max(f[0] + f[2] for f in feet) + margin
    y_max = max(f[1] + f[3] for f in feet) + margin
    w = int(np.ceil((x_max - x_min) * pixels_per_unit))
    h = int(np.ceil((y_max - y_min) * pixels_per_unit))

    def to_px(rect):
        return (
            (rect[0] - x_min) * pixels_per_unit,
            (rect[1] - y_min) * pixels_per_unit,
            rect[2] * pixels_per_unit,
            rect[3] * pixels_per_unit,
        )

    img = render_background(rng, (h, w))
    order = sorted(range(len(scene.cars)), key=lambda i: -scene.cars[i].depth)
    for i in order:
        car = scene.cars[i]
        _paint_stripes(
            img,
            to_px(car.footprint),
            texture_angle(-1, scene.view_bin, scene.num_views),
            BODY_BASE,
            BODY_AMP,
            chirp=0.9,
            border=3,
        )
        for p, rect in enumerate(car.part_rects):
            if not car._self_visible[p]:
                continue
            _paint_stripes(
                img,
                to_px(rect),
                texture_angle(p, scene.view_bin, scene.num_views),
                PART_BASE,
                PART_AMP,
                freq=0.75,
            )
    if blur > 0:
        img = gaussian_filter(img, blur)
    img = np.clip(img, 0, 255)

    boxes = [to_px(car.footprint) for car in scene.cars]
    return RenderedScene(
        image=img,
        boxes=boxes,
        views=[scene.view_bin] * len(scene.cars),
        visibility=[visibility_row(car) for car in scene.cars],
        scene=scene,
    )


def save_png(path, image):
    from PIL import Image

    Image.fromarray(np.clip(image, 0, 255).astype(np.uint8), mode="L").save(path)


def load_image(path) -> np.ndarray:
    """8-bit grayscale or RGB PNG/PGM as a float array."""
    from PIL import Image

    img = Image.open(path)
    if img.mode not in ("L", "RGB"):
        img = img.convert("RGB" if "A" in img.mode or len(img.getbands()) > 2 else "L")
    return np.asarray(img, dtype=np.float64)
