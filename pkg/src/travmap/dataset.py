"""Ground-truth dataset generation from labeled scan sequences.

Per frame: aggregate neighboring scans into the frame's own coordinate
system, estimate per-cell ground height, then project points in a height
band above the ground into a BEV traversability map. Conflicts inside a
cell resolve to the maximum cost (conservative for navigation).
"""

from __future__ import annotations

import json
import shutil
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import UNKNOWN
from .fileio import load_labels, load_poses, load_scan, save_map
from .grid import GridSpec, metric_to_cell_array
from .ontology import Ontology

DEFAULT_BAND_LOW = -0.3  # meters below estimated ground still considered


@dataclass
class AggregationConfig:
    """Scan aggregation and projection parameters."""

    num_scans: int = 71   # scans merged per frame
    stride: int = 2       # frame step between merged scans
    vehicle_height: float = 2.5
    ground_percentile: float = 0.05
    band_low: float = DEFAULT_BAND_LOW

    def __post_init__(self):
        if self.num_scans < 1 or self.stride < 1:
            raise ValueError("num_scans and stride must be >= 1")
        if not 0 < self.ground_percentile < 1:
            raise ValueError("ground_percentile must lie strictly between 0 and 1")


@dataclass
class SequenceIndex:
    """Ordered (scan, label, pose) triples of one recorded sequence."""

    scan_paths: list
    label_paths: list
    poses: list
    sequence_id: str = ""
    sensor: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (len(self.scan_paths) == len(self.label_paths) == len(self.poses)):
            raise ValueError(
                f"sequence {self.sequence_id}: {len(self.scan_paths)} scans, "
                f"{len(self.label_paths)} labels, {len(self.poses)} poses"
            )

    def __len__(self):
        return len(self.scan_paths)

    @classmethod
    def from_directory(cls, root) -> "SequenceIndex":
        """Index a directory laid out as scans/*.bin, labels/*.label, poses.txt."""
        root = Path(root)
        scans = sorted((root / "scans").glob("*.bin"))
        labels = sorted((root / "labels").glob("*.label"))
        poses = load_poses(root / "poses.txt")
        return cls(scans, labels, poses, sequence_id=root.name)


def selected_indices(t: int, length: int, cfg: AggregationConfig) -> list[int]:
    """Frame indices merged for frame t: t, t-S, t+S, ... up to num_scans, clipped."""
    picked = []
    step = 0
    while len(picked) < cfg.num_scans:
        candidates = [t] if step == 0 else [t - step, t + step]
        in_range = [i for i in candidates if 0 <= i < length]
        if not in_range and (t - step < 0 and t + step >= length):
            break
        for i in in_range:
            if len(picked) < cfg.num_scans:
                picked.append(i)
        step += cfg.stride
    return sorted(picked)


def aggregate_scans(seq: SequenceIndex, t: int, cfg: AggregationConfig, ontology: Ontology):
    """Merge scans around frame t into frame t's coordinates.

    Returns (points (M, 4) float64, cost_ids (M,) int64); each source scan is
    moved by inv(M_t) @ M_ti so every output point lives in frame t.
    """
    if not 0 <= t < len(seq):
        raise IndexError(f"frame {t} outside sequence of length {len(seq)}")
    pose_t_inv = np.linalg.inv(seq.poses[t])
    chunks, label_chunks = [], []
    for i in selected_indices(t, len(seq), cfg):
        scan = load_scan(seq.scan_paths[i])
        costs = ontology.map_semantics(load_labels(seq.label_paths[i]))
        if len(costs) != len(scan):
            raise ValueError(
                f"frame {i}: {len(scan)} points but {len(costs)} labels"
            )
        rel = pose_t_inv @ seq.poses[i]
        xyz = scan[:, :3].astype(np.float64) @ rel[:3, :3].T + rel[:3, 3]
        out = np.empty((len(scan), 4))
        out[:, :3] = xyz
        out[:, 3] = scan[:, 3]
        chunks.append(out)
        label_chunks.append(costs)
    points = np.concatenate(chunks) if chunks else np.empty((0, 4))
    costs = np.concatenate(label_chunks) if label_chunks else np.empty(0, dtype=np.int64)
    return points, costs


@dataclass
class GroundGrid:
    """Per-cell ground elevation estimate with validity mask."""

    elevation: np.ndarray  # (H, W) float64
    valid: np.ndarray      # (H, W) bool


def _segment_quantile(sorted_values: np.ndarray, starts: np.ndarray, counts: np.ndarray, q: float):
    """Linear-interpolation quantile of each [start, start+count) segment."""
    pos = q * (counts - 1)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, counts - 1)
    frac = pos - lo
    return sorted_values[starts + lo] * (1.0 - frac) + sorted_values[starts + hi] * frac


def estimate_ground(points: np.ndarray, g: GridSpec, cfg: AggregationConfig) -> GroundGrid:
    """Per-cell low-percentile z over each cell's 3x3 neighborhood.

    Cells whose 3x3 neighborhood contains no points are invalid. Points
    outside the grid's x-y crop are ignored; z is not cropped here so that
    overhangs participate in (and are rejected by) the low percentile.
    """
    rows, cols, valid = metric_to_cell_array(points[:, :2], g)
    rows, cols, z = rows[valid], cols[valid], points[valid, 2]

    elevation = np.full((g.height, g.width), np.nan)
    if len(z) == 0:
        return GroundGrid(elevation, np.zeros((g.height, g.width), dtype=bool))

    # replicate each point into the 9 cells whose neighborhood contains it
    offsets = np.array([(dr, dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1)])
    nrows = (rows[None, :] + offsets[:, 0:1]).ravel()
    ncols = (cols[None, :] + offsets[:, 1:2]).ravel()
    nz = np.broadcast_to(z, (9, len(z))).ravel()
    keep = (nrows >= 0) & (nrows < g.height) & (ncols >= 0) & (ncols < g.width)
    nrows, ncols, nz = nrows[keep], ncols[keep], nz[keep]

    lin = nrows * g.width + ncols
    order = np.lexsort((nz, lin))
    lin, nz = lin[order], nz[order]
    cells, starts, counts = np.unique(lin, return_index=True, return_counts=True)
    est = _segment_quantile(nz, starts, counts, cfg.ground_percentile)

    elevation.ravel()[cells] = est
    valid_mask = ~np.isnan(elevation)
    return GroundGrid(elevation, valid_mask)


def project_traversability(
    points: np.ndarray,
    costs: np.ndarray,
    ground: GroundGrid,
    g: GridSpec,
    cfg: AggregationConfig,
) -> np.ndarray:
    """Rasterize labeled points into a (H, W) uint8 traversability map.

    A point counts toward its cell when z - ground(cell) lies in
    [band_low, vehicle_height]. The cell label is the maximum cost among
    counted points, ignoring cost 4; cells with nothing counted (or only
    cost-4 points) are unknown.
    """
    rows, cols, valid = metric_to_cell_array(points[:, :2], g)
    out = np.full((g.height, g.width), UNKNOWN, dtype=np.uint8)

    keep = valid.copy()
    keep[valid] &= ground.valid[rows[valid], cols[valid]]
    rows, cols, z, cost = rows[keep], cols[keep], points[keep, 2], costs[keep]

    rel = z - ground.elevation[rows, cols]
    in_band = (rel >= cfg.band_low) & (rel <= cfg.vehicle_height) & (cost != UNKNOWN)
    rows, cols, cost = rows[in_band], cols[in_band], cost[in_band]

    lin = rows * g.width + cols
    flat = np.zeros(g.height * g.width, dtype=np.int64)
    np.maximum.at(flat, lin, cost + 1)  # +1 so "no point" stays 0
    touched = flat > 0
    out.ravel()[touched] = (flat[touched] - 1).astype(np.uint8)
    return out


def build_frame_map(seq: SequenceIndex, t: int, cfg: AggregationConfig, g: GridSpec, ontology: Ontology):
    """Aggregate, estimate ground, and project one frame's map."""
    points, costs = aggregate_scans(seq, t, cfg, ontology)
    ground = estimate_ground(points, g, cfg)
    return project_traversability(points, costs, ground, g, cfg)


class MapDataset:
    """Generated dataset (manifest + maps) with cached pillarization."""

    def __init__(self, root, max_pillars: int = 4096, max_points: int = 32):
        from .fileio import load_map
        from .pillars import pillarize

        self.root = Path(root)
        with open(self.root / "manifest.json") as f:
            manifest = json.load(f)
        gspec = manifest["grid"]
        self.grid = GridSpec(
            gspec["x_min"], gspec["x_max"], gspec["y_min"], gspec["y_max"],
            gspec["z_min"], gspec["z_max"], gspec["cell_size"],
            gspec["height"], gspec["width"],
        )
        self.frames = manifest["frames"]
        self.max_pillars = max_pillars
        self.max_points = max_points
        self._pillar_cache = {}
        self._map_cache = {}
        self._load_map = load_map
        self._pillarize = pillarize

    def __len__(self):
        return len(self.frames)

    def scan(self, i: int) -> np.ndarray:
        return load_scan(self.frames[i]["scan"])

    def pose(self, i: int) -> np.ndarray:
        pose = np.eye(4)
        pose[:3, :] = np.asarray(self.frames[i]["pose"]).reshape(3, 4)
        return pose

    def class_map(self, i: int) -> np.ndarray:
        if i not in self._map_cache:
            cmap, _ = self._load_map(self.root / self.frames[i]["map"])
            self._map_cache[i] = cmap
        return self._map_cache[i]

    def pillars(self, i: int):
        if i not in self._pillar_cache:
            self._pillar_cache[i] = self._pillarize(
                self.scan(i), self.grid, self.max_pillars, self.max_points, rng_seed=i
            )
        return self._pillar_cache[i]

    def frame_window(self, i: int, offsets) -> list:
        """Frame ids at i+offset, clamped to the sequence bounds."""
        return [min(max(i + off, 0), len(self) - 1) for off in offsets]


class ConcatMapDataset:
    """Several MapDatasets behind one index; frame windows never cross sequences."""

    def __init__(self, parts: list):
        if not parts:
            raise ValueError("need at least one dataset")
        self.parts = list(parts)
        grid0 = self.parts[0].grid
        for p in self.parts[1:]:
            if p.grid != grid0:
                raise ValueError("all datasets must share one grid")
        self.grid = grid0
        self._starts = np.cumsum([0] + [len(p) for p in self.parts])

    def __len__(self):
        return int(self._starts[-1])

    def _locate(self, i: int):
        part = int(np.searchsorted(self._starts, i, side="right")) - 1
        return self.parts[part], i - int(self._starts[part]), int(self._starts[part])

    def scan(self, i):
        part, j, _ = self._locate(i)
        return part.scan(j)

    def pose(self, i):
        part, j, _ = self._locate(i)
        return part.pose(j)

    def class_map(self, i):
        part, j, _ = self._locate(i)
        return part.class_map(j)

    def pillars(self, i):
        part, j, _ = self._locate(i)
        return part.pillars(j)

    def frame_window(self, i, offsets):
        part, j, base = self._locate(i)
        return [base + k for k in part.frame_window(j, offsets)]


def generate_dataset(seq: SequenceIndex, cfg: AggregationConfig, g: GridSpec, ontology: Ontology, out_dir):
    """Write per-frame maps plus a manifest; removes partial output on failure."""
    out = Path(out_dir)
    maps_dir = out / "maps"
    created = not out.exists()
    maps_dir.mkdir(parents=True, exist_ok=True)
    try:
        frames = []
        for t in range(len(seq)):
            cmap = build_frame_map(seq, t, cfg, g, ontology)
            map_path = maps_dir / f"{t:06d}.tmap"
            save_map(map_path, cmap, g)
            frames.append(
                {
                    "index": t,
                    "scan": str(Path(seq.scan_paths[t]).resolve()),
                    "labels": str(Path(seq.label_paths[t]).resolve()),
                    "pose": np.asarray(seq.poses[t])[:3, :].ravel().tolist(),
                    "map": str(map_path.relative_to(out)),
                }
            )
        manifest = {
            "sequence_id": seq.sequence_id,
            "grid": {
                "x_min": g.x_min, "x_max": g.x_max,
                "y_min": g.y_min, "y_max": g.y_max,
                "z_min": g.z_min, "z_max": g.z_max,
                "cell_size": g.cell_size, "height": g.height, "width": g.width,
            },
            "aggregation": {
                "num_scans": cfg.num_scans, "stride": cfg.stride,
                "vehicle_height": cfg.vehicle_height,
                "ground_percentile": cfg.ground_percentile,
                "band_low": cfg.band_low,
            },
            "frames": frames,
        }
        with open(out / "manifest.json", "w") as f:
            json.dump(manifest, f, indent=2, sort_keys=True)
    except BaseException:
        shutil.rmtree(out if created else maps_dir, ignore_errors=True)
        (out / "manifest.json").unlink(missing_ok=True)
        raise
    return out / "manifest.json"
