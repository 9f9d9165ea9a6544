"""Procedural labeled LIDAR sequences with exact ground-truth maps.

Scenes are 2.5-D height fields over a flat ground plane: a road ribbon
(free) through grass (low-cost), with bush patches (medium-cost) and
boxes / walls / trunks (lethal). Scans are ray-cast against a fine
height raster, so point density falls off with distance exactly like a
spinning scanner's.

Semantic ids: 0 void, 1 road, 2 grass, 3 bush, 4 trunk, 5 wall, 6 box
(see data/default.ontology).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .fileio import save_labels, save_map, save_poses, save_scan
from .grid import GridSpec
from .ontology import Ontology

SEM_VOID, SEM_ROAD, SEM_GRASS, SEM_BUSH, SEM_TRUNK, SEM_WALL, SEM_BOX = range(7)

REFLECTANCE = {
    SEM_ROAD: 0.25, SEM_GRASS: 0.45, SEM_BUSH: 0.55,
    SEM_TRUNK: 0.35, SEM_WALL: 0.7, SEM_BOX: 0.6,
}


class SceneCoverageError(ValueError):
    """A generated scene is missing one of the four cost classes."""


@dataclass
class LidarModel:
    ring_elevations_deg: tuple = tuple(np.linspace(-24.0, 2.0, 16).round(4))
    azimuth_step_deg: float = 2.0
    max_range: float = 20.0
    range_sigma: float = 0.01
    dropout: float = 0.02
    sensor_height: float = 1.8

    def __post_init__(self):
        if self.max_range <= 0:
            raise ValueError("max_range must be positive")
        if self.range_sigma < 0 or not 0 <= self.dropout < 1:
            raise ValueError("noise parameters out of range")


@dataclass
class SceneParams:
    extent: float = 30.0          # half-size of the square world
    road_half_width: float = 3.0
    road_wobble: float = 1.2      # lateral sine amplitude of the road centerline
    road_period: float = 45.0
    num_bushes: int = 12
    num_boxes: int = 7
    num_walls: int = 2
    num_trunks: int = 7
    bush_radius: tuple = (0.6, 1.6)
    bush_height: tuple = (0.35, 0.45)
    box_size: tuple = (0.8, 2.6)
    box_height: tuple = (0.6, 2.0)
    wall_length: tuple = (4.0, 9.0)
    wall_thickness: float = 0.35
    wall_height: tuple = (1.0, 2.0)
    trunk_radius: tuple = (0.18, 0.4)
    trunk_height: tuple = (1.5, 2.4)
    margin: float = 0.6           # clearance between objects and off the road
    raster_step: float = 0.05
    # analytic area-fraction bounds checked by tests: cost class -> (lo, hi)
    fraction_bounds: dict = field(default_factory=lambda: {
        "free": (0.05, 0.5), "low-cost": (0.4, 0.95),
        "medium-cost": (0.002, 0.2), "lethal": (0.002, 0.2),
    })


@dataclass
class _Disk:
    x: float
    y: float
    radius: float
    semantic: int
    height: float

    def contains(self, x, y):
        return (x - self.x) ** 2 + (y - self.y) ** 2 <= self.radius**2

    @property
    def area(self):
        return np.pi * self.radius**2

    @property
    def bound(self):
        return self.radius


@dataclass
class _Box:
    x: float
    y: float
    half_x: float
    half_y: float
    semantic: int
    height: float

    def contains(self, x, y):
        return (np.abs(x - self.x) <= self.half_x) & (np.abs(y - self.y) <= self.half_y)

    @property
    def area(self):
        return 4.0 * self.half_x * self.half_y

    @property
    def bound(self):
        return float(np.hypot(self.half_x, self.half_y))


class Scene:
    def __init__(self, params: SceneParams, seed: int, objects: list):
        self.params = params
        self.seed = seed
        self.objects = objects
        self._raster = None

    # -- exact footprint queries -------------------------------------------

    def road_center(self, x):
        p = self.params
        return p.road_wobble * np.sin(2 * np.pi * np.asarray(x) / p.road_period)

    def semantic_at(self, x, y) -> np.ndarray:
        """Exact semantic id at metric world coordinates (vectorized)."""
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        out = np.full(np.broadcast(x, y).shape, SEM_GRASS, dtype=np.int64)
        on_road = np.abs(y - self.road_center(x)) <= self.params.road_half_width
        out[on_road] = SEM_ROAD
        for obj in self.objects:
            out[obj.contains(x, y)] = obj.semantic
        return out

    def surface_height(self, x, y) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        out = np.zeros(np.broadcast(x, y).shape, dtype=np.float64)
        for obj in self.objects:
            inside = obj.contains(x, y)
            out[inside] = np.maximum(out[inside], obj.height)
        return out

    def area_fractions(self) -> dict:
        """Analytic cost-class area fractions (objects never overlap)."""
        p = self.params
        total = (2 * p.extent) ** 2
        road = 4 * p.extent * p.road_half_width
        medium = sum(o.area for o in self.objects if o.semantic == SEM_BUSH)
        lethal = sum(o.area for o in self.objects if o.semantic in (SEM_TRUNK, SEM_WALL, SEM_BOX))
        grass = total - road - medium - lethal
        return {
            "free": road / total, "low-cost": grass / total,
            "medium-cost": medium / total, "lethal": lethal / total,
        }

    # -- raster cache for ray casting ----------------------------------------

    def raster(self):
        if self._raster is None:
            p = self.params
            n = int(round(2 * p.extent / p.raster_step))
            centers = -p.extent + (np.arange(n) + 0.5) * p.raster_step
            xx, yy = np.meshgrid(centers, centers, indexing="xy")
            self._raster = (
                self.semantic_at(xx, yy),
                self.surface_height(xx, yy),
                n,
            )
        return self._raster

    def raster_lookup(self, x, y):
        """Nearest-cell raster samples of (semantic, height) at world points."""
        sem, height, n = self.raster()
        p = self.params
        ix = np.clip(((x + p.extent) / p.raster_step).astype(np.int64), 0, n - 1)
        iy = np.clip(((y + p.extent) / p.raster_step).astype(np.int64), 0, n - 1)
        return sem[iy, ix], height[iy, ix]


def build_scene(seed: int, params: SceneParams = None) -> Scene:
    """Deterministic scene layout; raises unless all four cost classes appear."""
    p = params or SceneParams()
    rng = np.random.default_rng(seed)
    objects = []

    def road_center(x):
        return p.road_wobble * np.sin(2 * np.pi * x / p.road_period)

    def off_road_position(bound):
        for _ in range(400):
            x = rng.uniform(-p.extent + bound + p.margin, p.extent - bound - p.margin)
            y = rng.uniform(-p.extent + bound + p.margin, p.extent - bound - p.margin)
            if abs(y - road_center(x)) <= p.road_half_width + p.margin + bound:
                continue
            if all(np.hypot(x - o.x, y - o.y) > bound + o.bound + p.margin for o in objects):
                return x, y
        raise RuntimeError("could not place object without overlap; loosen scene params")

    for _ in range(p.num_bushes):
        r = rng.uniform(*p.bush_radius)
        x, y = off_road_position(r)
        objects.append(_Disk(x, y, r, SEM_BUSH, rng.uniform(*p.bush_height)))
    for _ in range(p.num_boxes):
        hx, hy = rng.uniform(p.box_size[0] / 2, p.box_size[1] / 2, size=2)
        x, y = off_road_position(float(np.hypot(hx, hy)))
        objects.append(_Box(x, y, hx, hy, SEM_BOX, rng.uniform(*p.box_height)))
    for _ in range(p.num_walls):
        length = rng.uniform(*p.wall_length)
        along_x = rng.random() < 0.5
        hx = length / 2 if along_x else p.wall_thickness / 2
        hy = p.wall_thickness / 2 if along_x else length / 2
        x, y = off_road_position(float(np.hypot(hx, hy)))
        objects.append(_Box(x, y, hx, hy, SEM_WALL, rng.uniform(*p.wall_height)))
    for _ in range(p.num_trunks):
        r = rng.uniform(*p.trunk_radius)
        x, y = off_road_position(r)
        objects.append(_Disk(x, y, r, SEM_TRUNK, rng.uniform(*p.trunk_height)))

    scene = Scene(p, seed, objects)
    semantics = {o.semantic for o in objects}
    has_medium = SEM_BUSH in semantics
    has_lethal = semantics & {SEM_TRUNK, SEM_WALL, SEM_BOX}
    if p.road_half_width <= 0 or not has_medium or not has_lethal:
        raise SceneCoverageError(
            "scene must contain road, grass, at least one bush and one lethal object"
        )
    return scene


def yaw_pose(x, y, yaw, z=0.0) -> np.ndarray:
    c, s = np.cos(yaw), np.sin(yaw)
    pose = np.eye(4)
    pose[:3, :3] = [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
    pose[:3, 3] = [x, y, z]
    return pose


def road_path(scene: Scene, frames: int, speed: float = 0.6, start_x: float = None) -> list:
    """Ego poses along the road centerline, yaw following the tangent."""
    p = scene.params
    if start_x is None:
        start_x = -speed * frames / 2
    poses = []
    for t in range(frames):
        x = start_x + speed * t
        y = float(scene.road_center(x))
        slope = (
            2 * np.pi / p.road_period * p.road_wobble * np.cos(2 * np.pi * x / p.road_period)
        )
        poses.append(yaw_pose(x, y, np.arctan2(slope * speed, speed)))
    return poses


def simulate_scan(scene: Scene, pose: np.ndarray, lidar: LidarModel = None, seed: int = 0,
                  march_step: float = 0.08):
    """Ray-cast one scan; returns sensor-frame (M, 4) points and semantic ids.

    Each (ring, azimuth) ray marches along the height field; the first
    crossing within max_range becomes a return, refined by linear
    interpolation of the height difference across the crossing step.
    """
    lidar = lidar or LidarModel()
    rng = np.random.default_rng(seed)
    pose = np.asarray(pose, dtype=np.float64)
    origin = pose[:3, 3].copy()
    origin[2] = lidar.sensor_height

    elev = np.deg2rad(np.asarray(lidar.ring_elevations_deg))
    azim = np.deg2rad(np.arange(0.0, 360.0, lidar.azimuth_step_deg))
    ee, aa = np.meshgrid(elev, azim, indexing="ij")
    dirs = np.stack(
        [np.cos(ee) * np.cos(aa), np.cos(ee) * np.sin(aa), np.sin(ee)], axis=-1
    ).reshape(-1, 3)
    dirs = dirs @ pose[:3, :3].T  # sensor frame -> world

    ts = np.arange(0.4, lidar.max_range + march_step, march_step)
    px = origin[0] + dirs[:, 0:1] * ts
    py = origin[1] + dirs[:, 1:2] * ts
    pz = origin[2] + dirs[:, 2:3] * ts
    _, surf = scene.raster_lookup(px, py)
    below = pz <= surf
    hit_any = below.any(axis=1)
    first = np.argmax(below, axis=1)

    rays = np.nonzero(hit_any & (first > 0))[0]
    if lidar.dropout > 0:
        rays = rays[rng.random(len(rays)) >= lidar.dropout]
    i1 = first[rays]
    i0 = i1 - 1
    f0 = pz[rays, i0] - surf[rays, i0]
    f1 = pz[rays, i1] - surf[rays, i1]
    t_hit = ts[i0] + march_step * f0 / np.maximum(f0 - f1, 1e-12)
    if lidar.range_sigma > 0:
        t_hit = t_hit + rng.normal(0.0, lidar.range_sigma, size=len(rays))

    world = origin + dirs[rays] * t_hit[:, None]
    # semantic from the first below-surface sample (inside the hit footprint)
    sem, _ = scene.raster_lookup(px[rays, i1], py[rays, i1])

    local = (world - origin) @ pose[:3, :3]  # yaw-only rotation: z is unchanged
    refl = np.array([REFLECTANCE.get(int(s), 0.5) for s in sem], dtype=np.float64)
    points = np.column_stack([local, refl]).astype(np.float32)
    return points, sem.astype(np.int64)


def ground_truth_map(scene: Scene, pose: np.ndarray, g: GridSpec,
                     ontology: Ontology = None, subsamples: int = 3) -> np.ndarray:
    """Analytic rasterization of cost classes into the pose-centered grid.

    Each cell takes the maximum cost over a subsample lattice, mirroring
    the conservative max-cost rule of the projection pipeline. Full
    coverage: no unknown cells.
    """
    ontology = ontology or Ontology.default()
    pose = np.asarray(pose, dtype=np.float64)
    offs = (np.arange(subsamples) + 0.5) / subsamples  # fractions of a cell
    out = np.zeros((g.height, g.width), dtype=np.uint8)
    best = np.full((g.height, g.width), -1, dtype=np.int64)
    for fy in offs:
        for fx in offs:
            lx = g.x_min + (np.arange(g.width) + fx) * g.cell_size
            ly = g.y_min + (np.arange(g.height) + fy) * g.cell_size
            xx, yy = np.meshgrid(lx, ly, indexing="xy")
            wx = pose[0, 0] * xx + pose[0, 1] * yy + pose[0, 3]
            wy = pose[1, 0] * xx + pose[1, 1] * yy + pose[1, 3]
            cost = ontology.map_semantics(scene.semantic_at(wx, wy))
            best = np.maximum(best, cost)
    out[:] = best
    return out


def generate_sequence(seed: int, frames: int, out_dir, lidar: LidarModel = None,
                      scene_params: SceneParams = None, g: GridSpec = None,
                      speed: float = 0.6, ontology: Ontology = None):
    """Write a scan/label/pose sequence plus analytic maps and a manifest."""
    if frames < 1:
        raise ValueError("frames must be >= 1")
    lidar = lidar or LidarModel()
    g = g or GridSpec.square(12.8, 0.2)
    ontology = ontology or Ontology.default()
    scene = build_scene(seed, scene_params)
    poses = road_path(scene, frames, speed=speed)

    out = Path(out_dir)
    for sub in ("scans", "labels", "maps"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    frame_seeds = np.random.SeedSequence(seed).generate_state(frames, dtype=np.uint32)
    entries = []
    for t, pose in enumerate(poses):
        points, sem = simulate_scan(scene, pose, lidar, seed=int(frame_seeds[t]))
        scan_path = out / "scans" / f"{t:06d}.bin"
        label_path = out / "labels" / f"{t:06d}.label"
        map_path = out / "maps" / f"{t:06d}.tmap"
        save_scan(scan_path, points)
        save_labels(label_path, sem)
        save_map(map_path, ground_truth_map(scene, pose, g, ontology), g)
        entries.append(
            {
                "index": t,
                "scan": str(scan_path.resolve()),
                "labels": str(label_path.resolve()),
                "pose": pose[:3, :].ravel().tolist(),
                "map": f"maps/{t:06d}.tmap",
            }
        )
    save_poses(out / "poses.txt", poses)
    manifest = {
        "sequence_id": f"synth-{seed}",
        "seed": seed,
        "grid": {
            "x_min": g.x_min, "x_max": g.x_max, "y_min": g.y_min, "y_max": g.y_max,
            "z_min": g.z_min, "z_max": g.z_max, "cell_size": g.cell_size,
            "height": g.height, "width": g.width,
        },
        "lidar": {
            "ring_elevations_deg": list(lidar.ring_elevations_deg),
            "azimuth_step_deg": lidar.azimuth_step_deg,
            "max_range": lidar.max_range,
            "range_sigma": lidar.range_sigma,
            "dropout": lidar.dropout,
            "sensor_height": lidar.sensor_height,
        },
        "frames": entries,
    }
    with open(out / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    return out / "manifest.json"
