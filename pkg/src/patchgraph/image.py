"""PNG loading/saving and bilinear patch rescaling."""

from __future__ import annotations

import numpy as np
from PIL import Image


class DataError(ValueError):
    """Unusable input data (bad image, bad file, empty dataset)."""


def load_image(path) -> np.ndarray:
    """Read an 8-bit image as (3, H, W) float64 in [0, 1]; alpha is dropped."""
    try:
        with Image.open(path) as im:
            rgb = im.convert("RGB")
            arr = np.asarray(rgb, dtype=np.float64) / 255.0
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def save_image(pixels: np.ndarray, path):
    """Write (3, H, W) floats in [0, 1] as an 8-bit RGB PNG."""
    arr = np.clip(np.rint(pixels * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr.transpose(1, 2, 0), mode="RGB").save(path, format="PNG")


def bilinear_resize(pixels: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Align-corners bilinear resize of (C, h, w) to (C, out_h, out_w).

    Corner pixels map to corner pixels; outputs of in-range inputs stay
    in range because every value is a convex combination.
    """
    c, h, w = pixels.shape
    if h == out_h and w == out_w:
        return pixels.copy()

    def axis_coords(n_in, n_out):
        if n_out == 1 or n_in == 1:
            return np.zeros(n_out), np.zeros(n_out, dtype=np.intp)
        pos = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
        base = np.minimum(pos.astype(np.intp), n_in - 2)
        return pos - base, base

    fy, y0 = axis_coords(h, out_h)
    fx, x0 = axis_coords(w, out_w)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = fy[None, :, None]
    fx = fx[None, None, :]
    tl = pixels[:, y0[:, None], x0[None, :]]
    tr = pixels[:, y0[:, None], x1[None, :]]
    bl = pixels[:, y1[:, None], x0[None, :]]
    br = pixels[:, y1[:, None], x1[None, :]]
    top = tl * (1.0 - fx) + tr * fx
    bottom = bl * (1.0 - fx) + br * fx
    return top * (1.0 - fy) + bottom * fy
