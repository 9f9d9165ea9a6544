"""On-disk formats for scans, labels, poses, and traversability maps.

Scan:  flat binary, little-endian float32, 4 values per point (x, y, z, r).
Label: one little-endian uint32 per point; low 16 bits hold the semantic id.
Poses: text, one scan per line, 12 whitespace-separated decimals forming a
       row-major 3x4 rigid transform (sensor frame -> world).
Map:   binary header (magic 'TVM1', u32 height, u32 width, f32 cell_size,
       f32 x_min, f32 y_min) followed by row-major uint8 class ids.
"""

from __future__ import annotations

import os
import struct
import tempfile

import numpy as np

from .grid import GridSpec

SCAN_RECORD_BYTES = 16  # 4 x float32
MAP_MAGIC = b"TVM1"
MAP_HEADER = struct.Struct("<4sIIfff")

ROTATION_TOL = 1e-3


class FileFormatError(ValueError):
    """Raised when an input file does not match its declared format."""


def load_scan(path) -> np.ndarray:
    """Read a scan file into an (M, 4) float32 array of x, y, z, reflectance."""
    raw = np.fromfile(path, dtype="<f4")
    if raw.nbytes % SCAN_RECORD_BYTES:
        good = raw.nbytes - raw.nbytes % SCAN_RECORD_BYTES
        raise FileFormatError(
            f"{path}: scan length {raw.nbytes} bytes is not a multiple of "
            f"{SCAN_RECORD_BYTES}; trailing partial record at byte offset {good}"
        )
    return raw.reshape(-1, 4)


def save_scan(path, points: np.ndarray):
    pts = np.ascontiguousarray(points, dtype="<f4")
    if pts.ndim != 2 or pts.shape[1] != 4:
        raise ValueError(f"scan array must be (M, 4), got {pts.shape}")
    pts.tofile(path)


def load_labels(path) -> np.ndarray:
    """Read per-point semantic ids (low 16 bits of each uint32 record)."""
    raw = np.fromfile(path, dtype="<u4")
    return (raw & 0xFFFF).astype(np.int64)


def save_labels(path, semantic_ids: np.ndarray):
    np.ascontiguousarray(semantic_ids, dtype="<u4").tofile(path)


def _complete_pose(rt: np.ndarray, line_no: int, path) -> np.ndarray:
    pose = np.eye(4)
    pose[:3, :] = rt
    rot = pose[:3, :3]
    err = np.abs(rot @ rot.T - np.eye(3)).max()
    if err > ROTATION_TOL:
        raise FileFormatError(
            f"{path}: pose on line {line_no} has a non-orthonormal rotation "
            f"block (max deviation {err:.2e} > {ROTATION_TOL})"
        )
    return pose


def load_poses(path) -> list[np.ndarray]:
    """Read a pose file into a list of 4x4 homogeneous transforms."""
    poses = []
    with open(path) as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            values = line.split()
            if len(values) != 12:
                raise FileFormatError(
                    f"{path}: line {line_no} has {len(values)} values, expected 12"
                )
            rt = np.array([float(v) for v in values]).reshape(3, 4)
            poses.append(_complete_pose(rt, line_no, path))
    return poses


def save_poses(path, poses):
    with open(path, "w") as f:
        for pose in poses:
            f.write(" ".join(f"{v:.9g}" for v in np.asarray(pose)[:3, :].ravel()) + "\n")


def save_map(path, class_map: np.ndarray, g: GridSpec):
    """Write a traversability map with its grid geometry, atomically."""
    cmap = np.ascontiguousarray(class_map, dtype=np.uint8)
    if cmap.shape != (g.height, g.width):
        raise ValueError(f"map shape {cmap.shape} does not match grid {(g.height, g.width)}")
    header = MAP_HEADER.pack(MAP_MAGIC, g.height, g.width, g.cell_size, g.x_min, g.y_min)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)), suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(header)
            f.write(cmap.tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_map(path):
    """Read a map file -> (class_map uint8 (H, W), (cell_size, x_min, y_min))."""
    with open(path, "rb") as f:
        header = f.read(MAP_HEADER.size)
        if len(header) < MAP_HEADER.size:
            raise FileFormatError(f"{path}: truncated map header")
        magic, height, width, cell_size, x_min, y_min = MAP_HEADER.unpack(header)
        if magic != MAP_MAGIC:
            raise FileFormatError(f"{path}: bad magic {magic!r}, expected {MAP_MAGIC!r}")
        body = f.read(height * width)
        if len(body) != height * width:
            raise FileFormatError(
                f"{path}: expected {height * width} map bytes, got {len(body)}"
            )
    cmap = np.frombuffer(body, dtype=np.uint8).reshape(height, width).copy()
    return cmap, (cell_size, x_min, y_min)
