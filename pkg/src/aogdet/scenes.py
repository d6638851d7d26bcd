"""2.5-D occlusion scene simulation and the part-visibility data matrix.

Each scene places 3 cars on a 3x3 ground grid (center cell always
occupied) and draws a camera azimuth/elevation. Cars are planar
footprints carrying the 17 projected part rectangles; a part of a car
is occluded when strictly nearer car footprints cover more than 60% of
its image-plane area, or when it faces away from the camera.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import parts as part_defs
from .geometry import visible_fraction

VISIBLE_FRACTION_THRESHOLD = 0.4

GRID_SPACING = (1.35, 0.62)  # world units along (length, width) axes


@dataclass
class CarState:
    car_type: int
    rear_facing: bool  # orientation rho
    grid_cell: tuple  # (gi, gj) on the 3x3 grid
    position: tuple  # world (x, y) after jitter
    depth: float = 0.0
    footprint: tuple = None  # image-plane (x, y, w, h)
    part_rects: list = field(default_factory=list)
    part_fractions: np.ndarray = None  # (17,) visible fraction per part


@dataclass
class SceneConfig:
    cars: list  # CarState, index 0 is the center car
    azimuth: float
    elevation: float
    view_bin: int
    num_views: int

    @property
    def center_car(self):
        return self.cars[0]


def view_bin_of(azimuth: float, num_views: int) -> int:
    return int(np.floor((azimuth % (2 * np.pi)) / (2 * np.pi / num_views)))


def simulate_scene(rng, num_views: int, type_count: int = 8, jitter: float = 0.08,
                   azimuth_spread: float = 1.0) -> SceneConfig:
    """One scene; azimuth_spread < 1 concentrates azimuths around view
    bin centers (1.0 is uniform over the circle)."""
    bin_w = 2 * np.pi / num_views
    bin_idx = int(rng.integers(num_views))
    azimuth = float((bin_idx + 0.5 + (rng.uniform() - 0.5) * azimuth_spread) * bin_w) % (2 * np.pi)
    elevation = float(rng.uniform(0, np.pi / 4))
    cells = [(1, 1)]
    others = [(i, j) for i in range(3) for j in range(3) if (i, j) != (1, 1)]
    pick = rng.choice(len(others), size=2, replace=False)
    cells.extend(others[int(p)] for p in pick)

    cars = []
    for cell in cells:
        jx = float(rng.uniform(-jitter, jitter)) * GRID_SPACING[0]
        jy = float(rng.uniform(-jitter, jitter)) * GRID_SPACING[1]
        pos = (cell[0] * GRID_SPACING[0] + jx, cell[1] * GRID_SPACING[1] + jy)
        cars.append(
            CarState(
                car_type=int(rng.integers(type_count)),
                rear_facing=bool(rng.integers(2)),
                grid_cell=cell,
                position=pos,
            )
        )

    for car in cars:
        dims = part_defs.type_dims(car.car_type, type_count)
        foot, rects, selfvis = part_defs.project_car(
            car.position[0], car.position[1], car.rear_facing, dims, azimuth, elevation
        )
        car.depth = float(part_defs.car_depth(car.position[0], car.position[1], azimuth))
        car.footprint = foot
        car.part_rects = rects
        car._self_visible = selfvis

    for car in cars:
        occluders = [o.footprint for o in cars if o.depth < car.depth]
        fracs = np.zeros(part_defs.NUM_PARTS)
        for p, rect in enumerate(car.part_rects):
            if not car._self_visible[p]:
                continue
            fracs[p] = visible_fraction(rect, occluders)
        car.part_fractions = fracs

    return SceneConfig(
        cars=cars,
        azimuth=azimuth,
        elevation=elevation,
        view_bin=view_bin_of(azimuth, num_views),
        num_views=num_views,
    )


def simulate_scenes(count: int, num_views: int, seed: int = 0, type_count: int = 8,
                    jitter: float = 0.08, azimuth_spread: float = 1.0) -> list:
    """Deterministic batch of simulated scenes for one seed."""
    if num_views < 1:
        raise ValueError("num_views must be >= 1")
    rng = np.random.default_rng(seed)
    return [
        simulate_scene(rng, num_views, type_count, jitter, azimuth_spread)
        for _ in range(count)
    ]


@dataclass
class OcclusionDataMatrix:
    """Per-scene center-car part visibility (v) and geometry (b) rows.

    v is N x (17 * B) binary with the scene's view segment populated;
    b is N x ((1 + 17) * B * 4) holding the root box and the part boxes
    in the normalized car frame, zero wherever the part is invisible.
    """

    v: np.ndarray
    b: np.ndarray
    num_views: int
    view_of_row: np.ndarray
    part_names: list = field(default_factory=lambda: list(part_defs.PART_NAMES))


def visibility_row(car: CarState) -> np.ndarray:
    return (car.part_fractions >= VISIBLE_FRACTION_THRESHOLD).astype(np.int8)


def normalized_part_boxes(car: CarState) -> np.ndarray:
    """(17, 4) part rects relative to the car footprint, in [0, 1]."""
    fx, fy, fw, fh = car.footprint
    out = np.zeros((part_defs.NUM_PARTS, 4))
    for p, (x, y, w, h) in enumerate(car.part_rects):
        out[p] = ((x - fx) / fw, (y - fy) / fh, w / fw, h / fh)
    return out


def build_data_matrix(scenes: list) -> OcclusionDataMatrix:
    if not scenes:
        raise ValueError("need at least one scene")
    nv = scenes[0].num_views
    npart = part_defs.NUM_PARTS
    v = np.zeros((len(scenes), npart * nv), dtype=np.int8)
    b = np.zeros((len(scenes), (1 + npart) * nv * 4))
    views = np.zeros(len(scenes), dtype=np.int64)
    for i, scene in enumerate(scenes):
        car = scene.center_car
        beta = scene.view_bin
        views[i] = beta
        vis = visibility_row(car)
        v[i, beta * npart : (beta + 1) * npart] = vis
        seg = beta * (1 + npart) * 4
        b[i, seg : seg + 4] = (0.0, 0.0, car.footprint[2], car.footprint[3])
        norm = normalized_part_boxes(car)
        for p in range(npart):
            if vis[p]:
                b[i, seg + 4 * (1 + p) : seg + 4 * (2 + p)] = norm[p]
    return OcclusionDataMatrix(v=v, b=b, num_views=nv, view_of_row=views)


def write_scene_dump(path, scenes):
    """Structured text dump of scene configurations for inspection."""
    with open(path, "w") as f:
        f.write("# scene car type rear grid_i grid_j x y depth visible_parts\n")
        for i, scene in enumerate(scenes):
            f.write(
                f"scene {i} azimuth {scene.azimuth:.6f} elevation {scene.elevation:.6f} "
                f"view {scene.view_bin} of {scene.num_views}\n"
            )
            for c, car in enumerate(scene.cars):
                vis = "".join(str(x) for x in visibility_row(car))
                f.write(
                    f"  car {c} type {car.car_type} rear {int(car.rear_facing)} "
                    f"grid {car.grid_cell[0]} {car.grid_cell[1]} "
                    f"pos {car.position[0]:.4f} {car.position[1]:.4f} "
                    f"depth {car.depth:.4f} vis {vis}\n"
                )
