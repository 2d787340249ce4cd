"""Small image helpers shared by augmentation and patch embedding."""
from __future__ import annotations

import numpy as np


def bilinear_resize(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize an (H, W, C) or (H, W) float image with bilinear interpolation.

    Half-pixel centre convention with edge clamping, so resizing to the same
    size is the exact identity.
    """
    if out_h < 1 or out_w < 1:
        raise ValueError("output size must be positive")
    squeeze = image.ndim == 2
    if squeeze:
        image = image[:, :, None]
    h, w, _ = image.shape
    src_y = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    src_x = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    y0 = np.floor(src_y).astype(int)
    x0 = np.floor(src_x).astype(int)
    wy = (src_y - y0)[:, None, None]
    wx = (src_x - x0)[None, :, None]
    y0c = np.clip(y0, 0, h - 1)
    y1c = np.clip(y0 + 1, 0, h - 1)
    x0c = np.clip(x0, 0, w - 1)
    x1c = np.clip(x0 + 1, 0, w - 1)
    top = image[y0c][:, x0c] * (1 - wx) + image[y0c][:, x1c] * wx
    bot = image[y1c][:, x0c] * (1 - wx) + image[y1c][:, x1c] * wx
    out = top * (1 - wy) + bot * wy
    return out[:, :, 0] if squeeze else out


def resize_clip(frames: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize every frame of a (T, H, W, C) clip."""
    return np.stack([bilinear_resize(f, out_h, out_w) for f in frames])


def crop_patch(frame: np.ndarray, x0: float, y0: float, x1: float, y1: float,
               patch: int) -> np.ndarray | None:
    """Crop a normalised box from an (H, W, C) frame and resize to patch**2.

    Pixel bounds snap outward (floor/ceil); a crop that snaps to zero area is
    reported as None so callers can treat the detection as absent.
    """
    h, w = frame.shape[:2]
    px0, px1 = int(np.floor(x0 * w)), int(np.ceil(x1 * w))
    py0, py1 = int(np.floor(y0 * h)), int(np.ceil(y1 * h))
    px0, py0 = max(px0, 0), max(py0, 0)
    px1, py1 = min(px1, w), min(py1, h)
    if px1 <= px0 or py1 <= py0:
        return None
    return bilinear_resize(frame[py0:py1, px0:px1], patch, patch)
