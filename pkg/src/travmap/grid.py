"""Metric bird's-eye-view grid geometry.

Single source of truth for metric <-> cell conversions. Row index follows
the y axis, column index follows x. Binning is floor-based over half-open
intervals [min, max), so points exactly on the max boundary are out of
bounds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

OOB = (-1, -1)


@dataclass(frozen=True)
class GridSpec:
    """Axis-aligned BEV grid: crop box in meters plus cell geometry."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float
    z_min: float
    z_max: float
    cell_size: float
    height: int
    width: int

    def __post_init__(self):
        if self.cell_size <= 0:
            raise ValueError(f"cell_size must be positive, got {self.cell_size}")
        if self.x_max <= self.x_min or self.y_max <= self.y_min or self.z_max <= self.z_min:
            raise ValueError("grid bounds must satisfy max > min on every axis")
        if self.width != round((self.x_max - self.x_min) / self.cell_size):
            raise ValueError(
                f"width {self.width} inconsistent with x extent "
                f"{self.x_max - self.x_min} at cell_size {self.cell_size}"
            )
        if self.height != round((self.y_max - self.y_min) / self.cell_size):
            raise ValueError(
                f"height {self.height} inconsistent with y extent "
                f"{self.y_max - self.y_min} at cell_size {self.cell_size}"
            )

    @classmethod
    def from_bounds(cls, x_min, x_max, y_min, y_max, z_min, z_max, cell_size) -> "GridSpec":
        """Build a spec, deriving height/width from the bounds."""
        if cell_size <= 0:
            raise ValueError(f"cell_size must be positive, got {cell_size}")
        width = round((x_max - x_min) / cell_size)
        height = round((y_max - y_min) / cell_size)
        return cls(x_min, x_max, y_min, y_max, z_min, z_max, cell_size, height, width)

    @classmethod
    def square(cls, half_extent: float, cell_size: float, z_min: float = -3.0, z_max: float = 3.0) -> "GridSpec":
        """Square grid centered on the sensor, covering [-half_extent, half_extent)^2."""
        return cls.from_bounds(-half_extent, half_extent, -half_extent, half_extent, z_min, z_max, cell_size)

    def downscale(self, factor: int) -> "GridSpec":
        """Same crop box at `factor`-times coarser cells (resolutions must divide)."""
        if self.height % factor or self.width % factor:
            raise ValueError(f"grid {self.height}x{self.width} not divisible by {factor}")
        return GridSpec(
            self.x_min, self.x_max, self.y_min, self.y_max, self.z_min, self.z_max,
            self.cell_size * factor, self.height // factor, self.width // factor,
        )


def metric_to_cell(p, g: GridSpec):
    """Map a metric (x, y) point to (row, col); OOB marker (-1, -1) outside the crop."""
    x, y = p
    col = int(np.floor((x - g.x_min) / g.cell_size))
    row = int(np.floor((y - g.y_min) / g.cell_size))
    if 0 <= row < g.height and 0 <= col < g.width:
        return (row, col)
    return OOB


def metric_to_cell_array(xy: np.ndarray, g: GridSpec):
    """Vectorized binning: (M, 2) metric points -> (rows, cols, in_bounds mask)."""
    cols = np.floor((xy[:, 0] - g.x_min) / g.cell_size).astype(np.int64)
    rows = np.floor((xy[:, 1] - g.y_min) / g.cell_size).astype(np.int64)
    valid = (rows >= 0) & (rows < g.height) & (cols >= 0) & (cols < g.width)
    return rows, cols, valid


def cell_center(row: int, col: int, g: GridSpec):
    """Metric (x, y) center of a cell; rejects out-of-range indices."""
    if not (0 <= row < g.height and 0 <= col < g.width):
        raise IndexError(f"cell ({row}, {col}) outside {g.height}x{g.width} grid")
    x = g.x_min + (col + 0.5) * g.cell_size
    y = g.y_min + (row + 0.5) * g.cell_size
    return (x, y)


def cell_centers_grid(g: GridSpec):
    """(H, W) arrays of cell-center x and y coordinates."""
    xs = g.x_min + (np.arange(g.width) + 0.5) * g.cell_size
    ys = g.y_min + (np.arange(g.height) + 0.5) * g.cell_size
    return np.meshgrid(xs, ys, indexing="xy")
