"""Built-in appearance descriptor and image-patch loading.

The descriptor is deliberately simple: the person crop is resized to
128x48, split into a 6x2 block grid, and each block contributes an
8-bin-per-channel colour histogram and a 9-bin edge-orientation
histogram, each L2-normalised.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import EmptyPatch, InputParseError
from .multipose import FeatureVector

PATCH_HEIGHT = 128
PATCH_WIDTH = 48
GRID_ROWS = 6
GRID_COLS = 2
COLOR_BINS = 8
ORIENTATION_BINS = 9
DESCRIPTOR_ID = "builtin-colorhist-orient-v1"
DESCRIPTOR_DIM = GRID_ROWS * GRID_COLS * (3 * COLOR_BINS + ORIENTATION_BINS)


def resize_bilinear(image: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resize with pixel-centre alignment and edge clamping."""
    img = np.asarray(image, dtype=float)
    h, w = img.shape[:2]
    ys = np.clip((np.arange(height) + 0.5) * (h / height) - 0.5, 0, h - 1)
    xs = np.clip((np.arange(width) + 0.5) * (w / width) - 0.5, 0, w - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    if img.ndim == 3:
        wy = wy[..., None]
        wx = wx[..., None]
    top = img[y0][:, x0] * (1 - wx) + img[y0][:, x1] * wx
    bottom = img[y1][:, x0] * (1 - wx) + img[y1][:, x1] * wx
    return top * (1 - wy) + bottom * wy


def _as_rgb_unit(patch) -> np.ndarray:
    arr = np.asarray(patch)
    if arr.size == 0 or arr.ndim < 2 or 0 in arr.shape[:2]:
        raise EmptyPatch("image patch is empty")
    if arr.ndim == 2:
        arr = np.repeat(arr[..., None], 3, axis=2)
    elif arr.shape[2] == 4:
        arr = arr[..., :3]
    elif arr.shape[2] == 1:
        arr = np.repeat(arr, 3, axis=2)
    if np.issubdtype(arr.dtype, np.integer):
        arr = arr.astype(float) / 255.0
    return np.clip(arr.astype(float), 0.0, 1.0)


def edge_orientation(gray: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel gradient magnitude and edge orientation in ``[0, 180)`` degrees.

    Edge orientation is the gradient direction turned by 90 degrees, so a
    vertical edge reads 90.
    """
    gy, gx = np.gradient(gray)
    mag = np.hypot(gx, gy)
    ori = np.mod(np.degrees(np.arctan2(gy, gx)) + 90.0, 180.0)
    return mag, ori


def _l2(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    return v / n if n > 1e-12 else v


def extract_builtin_descriptor(image_patch) -> FeatureVector:
    """Colour + orientation histogram descriptor of one person crop.

    ``image_patch`` is an ``(H, W)`` or ``(H, W, 3)`` array; integer input
    is read as 8-bit, float input as values in ``[0, 1]``.
    """
    rgb = resize_bilinear(_as_rgb_unit(image_patch), PATCH_HEIGHT, PATCH_WIDTH)
    gray = rgb @ np.array([0.299, 0.587, 0.114])
    mag, ori = edge_orientation(gray)
    color_bin = np.minimum((rgb * COLOR_BINS).astype(int), COLOR_BINS - 1)
    ori_bin = np.minimum((ori / (180.0 / ORIENTATION_BINS)).astype(int), ORIENTATION_BINS - 1)

    parts = []
    for rows in np.array_split(np.arange(PATCH_HEIGHT), GRID_ROWS):
        for cols in np.array_split(np.arange(PATCH_WIDTH), GRID_COLS):
            block = np.ix_(rows, cols)
            for ch in range(3):
                hist = np.bincount(color_bin[..., ch][block].ravel(), minlength=COLOR_BINS).astype(float)
                parts.append(_l2(hist))
            hist = np.bincount(ori_bin[block].ravel(), weights=mag[block].ravel(), minlength=ORIENTATION_BINS)
            parts.append(_l2(hist))
    return FeatureVector(np.concatenate(parts), DESCRIPTOR_ID)


def patch_path(directory, camera_id, object_id, frame) -> Path | None:
    """Locate ``<camera>_<object>_<frame>.png`` or ``.ppm`` in ``directory``."""
    stem = f"{camera_id}_{object_id}_{frame}"
    for ext in (".png", ".ppm", ".PNG", ".PPM"):
        p = Path(directory) / (stem + ext)
        if p.exists():
            return p
    return None


def load_patch(path) -> np.ndarray:
    from PIL import Image

    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"))
    except OSError as exc:
        raise InputParseError(f"cannot read image patch {path}: {exc}", path=str(path)) from exc
