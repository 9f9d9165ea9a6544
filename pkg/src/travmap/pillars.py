"""Point-cloud pillarization: crop, group by cell, augment to 9-D.

Each kept point becomes [x, y, z, r, x-xm, y-ym, z-zm, x-cx, y-cy] where
(xm, ym, zm) is the arithmetic mean of the pillar's kept points and
(cx, cy) the center of the pillar's cell. Overfull pillars / point lists
are subsampled uniformly at random; underfull ones are zero padded.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import GridSpec, metric_to_cell_array

POINT_DIM = 9


@dataclass
class PillarBatch:
    points: np.ndarray        # (P, N, 9) float32, zero where masked
    point_mask: np.ndarray    # (P, N) bool
    pillar_coords: np.ndarray  # (P, 2) int64 (row, col); zeros for invalid pillars
    pillar_mask: np.ndarray   # (P,) bool

    @property
    def max_pillars(self):
        return self.points.shape[0]

    @property
    def max_points(self):
        return self.points.shape[1]


def pillarize(cloud: np.ndarray, g: GridSpec, max_pillars: int, max_points: int, rng_seed: int = 0) -> PillarBatch:
    """Group a scan into a dense (P, N, 9) pillar tensor over grid g."""
    if max_pillars < 1 or max_points < 1:
        raise ValueError("max_pillars and max_points must be >= 1")
    cloud = np.asarray(cloud, dtype=np.float32).reshape(-1, 4)
    rows, cols, valid = metric_to_cell_array(cloud[:, :2].astype(np.float64), g)
    valid &= (cloud[:, 2] >= g.z_min) & (cloud[:, 2] <= g.z_max)
    rows, cols, pts = rows[valid], cols[valid], cloud[valid]

    out = PillarBatch(
        points=np.zeros((max_pillars, max_points, POINT_DIM), dtype=np.float32),
        point_mask=np.zeros((max_pillars, max_points), dtype=bool),
        pillar_coords=np.zeros((max_pillars, 2), dtype=np.int64),
        pillar_mask=np.zeros(max_pillars, dtype=bool),
    )
    if len(pts) == 0:
        return out

    rng = np.random.default_rng(rng_seed)
    lin = rows * g.width + cols
    order = np.argsort(lin, kind="stable")
    lin_sorted = lin[order]
    cells, starts, counts = np.unique(lin_sorted, return_index=True, return_counts=True)

    keep = np.arange(len(cells))
    if len(cells) > max_pillars:
        keep = np.sort(rng.choice(len(cells), size=max_pillars, replace=False))

    for slot, ci in enumerate(keep):
        idx = order[starts[ci] : starts[ci] + counts[ci]]
        if len(idx) > max_points:
            idx = idx[np.sort(rng.choice(len(idx), size=max_points, replace=False))]
        kept = pts[idx]
        n = len(kept)
        row, col = divmod(int(cells[ci]), g.width)
        cx = g.x_min + (col + 0.5) * g.cell_size
        cy = g.y_min + (row + 0.5) * g.cell_size
        xyz = kept[:, :3].astype(np.float64)
        mean = xyz.mean(axis=0)

        out.points[slot, :n, :4] = kept
        out.points[slot, :n, 4:7] = xyz - mean
        out.points[slot, :n, 7] = xyz[:, 0] - cx
        out.points[slot, :n, 8] = xyz[:, 1] - cy
        out.point_mask[slot, :n] = True
        out.pillar_coords[slot] = (row, col)
        out.pillar_mask[slot] = True
    return out
