"""Gradient-histogram cell descriptors and multi-scale feature pyramids.

Each cell carries 31 channels: 18 contrast-sensitive orientation bins,
9 contrast-insensitive bins, and 4 block-normalization energy channels.
Grids are float64 arrays of shape (cells_y, cells_x, 31). Normalization
uses no epsilon, so descriptors are exactly invariant to positive
rescaling of the input intensities.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

CHANNELS = 31
N_SENS = 18  # contrast-sensitive orientation bins over [0, 2pi)
N_INS = 9  # contrast-insensitive bins over [0, pi)
TRUNCATION = 0.2
TEXTURE_WEIGHT = 0.2357  # ~1/sqrt(18), energy-channel scaling

LUMA = (0.299, 0.587, 0.114)


class DimensionError(ValueError):
    """Image too small for the requested cell size."""


def to_intensity(image) -> np.ndarray:
    """Convert an (H, W) or (H, W, 3) array to a float64 intensity grid."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        return img
    if img.ndim == 3 and img.shape[2] == 3:
        return img[:, :, 0] * LUMA[0] + img[:, :, 1] * LUMA[1] + img[:, :, 2] * LUMA[2]
    raise ValueError(f"expected HxW or HxWx3 image, got shape {img.shape}")


def area_resample(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Exact area-averaging resample of a 2-D grid to (out_h, out_w)."""

    def weights(n_out, n_in):
        w = np.zeros((n_out, n_in))
        step = n_in / n_out
        for i in range(n_out):
            lo, hi = i * step, (i + 1) * step
            k0, k1 = int(np.floor(lo)), int(np.ceil(hi))
            for k in range(k0, min(k1, n_in)):
                w[i, k] = min(hi, k + 1) - max(lo, k)
        return w / step

    img = np.asarray(image, dtype=np.float64)
    return weights(out_h, img.shape[0]) @ img @ weights(out_w, img.shape[1]).T


def _gradients(intensity):
    # centered differences on a replicate-padded grid
    padded = np.pad(intensity, 1, mode="edge")
    dx = padded[1:-1, 2:] - padded[1:-1, :-2]
    dy = padded[2:, 1:-1] - padded[:-2, 1:-1]
    return dx, dy


def compute_cells(image, cell_size: int = 8) -> np.ndarray:
    """31-channel cell descriptors for an intensity or RGB image.

    Gradient magnitude votes are interpolated bilinearly over the two
    nearest orientation bins and the four nearest cells, then each cell
    is normalized against its four neighboring 2x2 blocks with
    truncation at 0.2.
    """
    intensity = to_intensity(image)
    h, w = intensity.shape
    if h < 2 * cell_size or w < 2 * cell_size:
        raise DimensionError(
            f"image {w}x{h} smaller than 2x cell_size {cell_size} in some axis"
        )
    cells_y, cells_x = h // cell_size, w // cell_size

    dx, dy = _gradients(intensity)
    mag = np.hypot(dx, dy)
    ang = np.mod(np.arctan2(dy, dx), 2.0 * np.pi)

    # orientation interpolation over the 18 sensitive bins
    o = ang * (N_SENS / (2.0 * np.pi))
    o0 = np.floor(o).astype(np.int64) % N_SENS
    of = o - np.floor(o)
    o1 = (o0 + 1) % N_SENS

    # spatial bilinear interpolation into cell centers
    ys, xs = np.mgrid[0:h, 0:w]
    cy = (ys + 0.5) / cell_size - 0.5
    cx = (xs + 0.5) / cell_size - 0.5
    cy0 = np.floor(cy).astype(np.int64)
    cx0 = np.floor(cx).astype(np.int64)
    fy = cy - cy0
    fx = cx - cx0

    hist = np.zeros((cells_y, cells_x, N_SENS))
    flat = hist.reshape(-1)
    for iy, wy in ((cy0, 1.0 - fy), (cy0 + 1, fy)):
        for ix, wx in ((cx0, 1.0 - fx), (cx0 + 1, fx)):
            valid = (iy >= 0) & (iy < cells_y) & (ix >= 0) & (ix < cells_x)
            base = (iy * cells_x + ix) * N_SENS
            spatial = wy * wx * mag
            for ob, ow in ((o0, 1.0 - of), (o1, of)):
                np.add.at(
                    flat,
                    (base + ob)[valid],
                    (spatial * ow)[valid],
                )

    return _normalize(hist)


def _normalize(hist):
    cells_y, cells_x, _ = hist.shape
    insens = hist[:, :, :N_INS] + hist[:, :, N_INS:]
    energy = np.sum(insens**2, axis=2)

    # 2x2 block energies; boundary cells replicate edge energies
    pad = np.pad(energy, 1, mode="edge")
    block = pad[:-1, :-1] + pad[:-1, 1:] + pad[1:, :-1] + pad[1:, 1:]
    norms = np.empty((cells_y, cells_x, 4))
    norms[:, :, 0] = block[:-1, :-1]  # up-left
    norms[:, :, 1] = block[:-1, 1:]  # up-right
    norms[:, :, 2] = block[1:, :-1]  # down-left
    norms[:, :, 3] = block[1:, 1:]  # down-right
    with np.errstate(divide="ignore"):
        inv = np.where(norms > 0, 1.0 / np.sqrt(norms), 0.0)

    out = np.zeros((cells_y, cells_x, CHANNELS))
    clipped_sens = np.minimum(hist[:, :, :, None] * inv[:, :, None, :], TRUNCATION)
    out[:, :, :N_SENS] = 0.5 * clipped_sens.sum(axis=3)
    clipped_ins = np.minimum(insens[:, :, :, None] * inv[:, :, None, :], TRUNCATION)
    out[:, :, N_SENS : N_SENS + N_INS] = 0.5 * clipped_ins.sum(axis=3)
    out[:, :, N_SENS + N_INS :] = TEXTURE_WEIGHT * clipped_sens.sum(axis=2)
    return out


@dataclass
class FeaturePyramid:
    """Cell-descriptor grids of an image over geometrically spaced scales.

    `levels[l]` is the (padded) grid for the image resampled by
    2^(-l / levels_per_octave). Padding cells are all-zero, so filter
    scores over padded positions stay linear in the parameters.
    """

    levels: list = field(default_factory=list)
    levels_per_octave: int = 5
    cell_size: int = 8
    padding: int = 0
    image_shape: tuple = (0, 0)

    def scale_of_level(self, level: int) -> float:
        return 2.0 ** (-level / self.levels_per_octave)

    @property
    def num_levels(self) -> int:
        return len(self.levels)

    def cell_to_pixel(self, level: int, x: float, y: float):
        """Left-top image pixel of a padded-lattice cell position."""
        s = self.scale_of_level(level)
        return (
            (x - self.padding) * self.cell_size / s,
            (y - self.padding) * self.cell_size / s,
        )


def build_pyramid(
    image,
    levels_per_octave: int = 5,
    cell_size: int = 8,
    padding: int = 0,
    max_levels: int | None = None,
    min_cells: int = 1,
) -> FeaturePyramid:
    """Compute the feature pyramid of an image.

    Levels are emitted while the resampled image still fits the
    cell-descriptor preconditions and grids keep at least `min_cells`
    per axis (pass the largest filter dimension to guarantee coverage).
    """
    if levels_per_octave < 1:
        raise ValueError("levels_per_octave must be >= 1")
    intensity = to_intensity(image)
    h, w = intensity.shape
    levels = []
    level = 0
    while max_levels is None or level < max_levels:
        s = 2.0 ** (-level / levels_per_octave)
        sh, sw = max(1, round(h * s)), max(1, round(w * s))
        if sh < 2 * cell_size or sw < 2 * cell_size:
            break
        if sh // cell_size < min_cells or sw // cell_size < min_cells:
            break
        scaled = intensity if level == 0 else area_resample(intensity, sh, sw)
        grid = compute_cells(scaled, cell_size)
        if padding:
            grid = np.pad(grid, ((padding, padding), (padding, padding), (0, 0)))
        levels.append(grid)
        level += 1
    return FeaturePyramid(
        levels=levels,
        levels_per_octave=levels_per_octave,
        cell_size=cell_size,
        padding=padding,
        image_shape=(h, w),
    )
