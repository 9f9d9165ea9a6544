"""Exact-palette PNG rendering of traversability maps.

One pixel per cell plus an 8-row legend strip at the bottom. The palette
is fixed and invertible, so decoding an emitted PNG recovers the class
ids exactly.
"""

from __future__ import annotations

import numpy as np
from PIL import Image

from . import NUM_CLASSES

# class id -> RGB
PALETTE = {
    0: (0x00, 0xC8, 0x00),  # free: green
    1: (0xE6, 0xD2, 0x00),  # low-cost: yellow
    2: (0x20, 0x50, 0xE0),  # medium-cost: blue
    3: (0xD0, 0x20, 0x20),  # lethal: red
    4: (0x40, 0x40, 0x40),  # unknown: dark gray
}
LEGEND_ROWS = 8
_LUT = np.zeros((NUM_CLASSES, 3), dtype=np.uint8)
for _cid, _rgb in PALETTE.items():
    _LUT[_cid] = _rgb


def class_map_to_rgb(class_map: np.ndarray) -> np.ndarray:
    cmap = np.asarray(class_map)
    if cmap.min() < 0 or cmap.max() >= NUM_CLASSES:
        raise ValueError("class ids must lie in [0, 4]")
    return _LUT[cmap.astype(np.int64)]


def _legend_strip(width: int) -> np.ndarray:
    strip = np.zeros((LEGEND_ROWS, width, 3), dtype=np.uint8)
    edges = np.linspace(0, width, NUM_CLASSES + 1).astype(int)
    for cid in range(NUM_CLASSES):
        strip[:, edges[cid] : edges[cid + 1]] = _LUT[cid]
    return strip


def render_map_png(class_map: np.ndarray, out_path):
    """Write the map as a PNG with one pixel per cell and a legend strip."""
    rgb = class_map_to_rgb(class_map)
    image = np.concatenate([rgb, _legend_strip(rgb.shape[1])], axis=0)
    Image.fromarray(image, mode="RGB").save(out_path, format="PNG")
    return out_path


def decode_map_png(path) -> np.ndarray:
    """Invert the palette of an emitted PNG back into class ids."""
    rgb = np.asarray(Image.open(path).convert("RGB"))
    body = rgb[:-LEGEND_ROWS]
    out = np.full(body.shape[:2], -1, dtype=np.int64)
    for cid in range(NUM_CLASSES):
        out[(body == _LUT[cid]).all(axis=-1)] = cid
    if (out < 0).any():
        raise ValueError(f"{path}: pixel colors outside the documented palette")
    return out.astype(np.uint8)
