"""Training-time augmentation with consistent frame and box transforms.

Two pipelines: the standard one (scale, random crop at an arbitrary offset,
resize) and the edge-preserving one (scale, full-height square crop with only
a horizontal offset, resize). The second keeps hands that sit near the frame
border in view. Boxes ride through the same affine map; a box whose visible
area drops below 10% of its original area is marked absent, which is exactly
how a cropped-out hand looks to the rest of the pipeline.

Horizontal flips are deliberately excluded: they would silently exchange
left/right role semantics.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .detections import BoundingBox, FrameDetections
from .imageops import resize_clip

AREA_KEEP_FRACTION = 0.10


@dataclass(frozen=True)
class AugmentSpec:
    mode: str  # "std" | "scr" | "none"
    scale_range: tuple = (1.0, 1.3)
    target_size: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("std", "scr", "none"):
            raise ValueError(f"unknown augment mode {self.mode!r}")
        lo, hi = self.scale_range
        if not 1.0 <= lo <= hi:
            raise ValueError(f"scale_range must satisfy 1 <= lo <= hi, got {self.scale_range}")
        if self.target_size < 16:
            raise ValueError("target_size must be >= 16")


def transform_box(box: BoundingBox, window: tuple) -> BoundingBox | None:
    """Map a normalised box through a crop window (wx0, wy0, wx1, wy1).

    Returns None when less than 10% of the box area survives the crop.
    """
    wx0, wy0, wx1, wy1 = window
    ix0, ix1 = max(box.x0, wx0), min(box.x1, wx1)
    iy0, iy1 = max(box.y0, wy0), min(box.y1, wy1)
    inter = max(0.0, ix1 - ix0) * max(0.0, iy1 - iy0)
    if inter < AREA_KEEP_FRACTION * box.area:
        return None
    return BoundingBox(
        (ix0 - wx0) / (wx1 - wx0),
        (iy0 - wy0) / (wy1 - wy0),
        (ix1 - wx0) / (wx1 - wx0),
        (iy1 - wy0) / (wy1 - wy0),
        box.confidence,
    )


def _apply_window(frames: np.ndarray, detections: Sequence[FrameDetections],
                  scaled_h: int, scaled_w: int, crop: tuple, target: int):
    """Scale the clip, crop a pixel window, resize to target; remap boxes."""
    cx0, cy0, cx1, cy1 = crop
    scaled = resize_clip(frames, scaled_h, scaled_w)
    cropped = scaled[:, cy0:cy1, cx0:cx1]
    out_frames = resize_clip(cropped, target, target)
    window = (cx0 / scaled_w, cy0 / scaled_h, cx1 / scaled_w, cy1 / scaled_h)
    out_dets = []
    for f in detections:
        entries = {}
        for role, box in f.entries.items():
            mapped = transform_box(box, window)
            if mapped is not None:
                entries[role] = mapped
        out_dets.append(FrameDetections(frame_index=f.frame_index, entries=entries))
    return out_frames.astype(frames.dtype, copy=False), out_dets


def scr_augment(frames: np.ndarray, detections: Sequence[FrameDetections],
                spec: AugmentSpec):
    """Scale, square crop keeping the full height, resize.

    The crop side equals the scaled height, so only a horizontal offset is
    drawn and nothing near the top or bottom edge can be lost. One transform
    is drawn per clip and applied to every frame.
    """
    if spec.mode != "scr":
        raise ValueError(f"scr_augment called with mode {spec.mode!r}")
    rng = np.random.default_rng(spec.seed)
    t, h, w, _ = frames.shape
    scale = rng.uniform(*spec.scale_range)
    scaled_h, scaled_w = int(round(h * scale)), int(round(w * scale))
    side = min(scaled_h, scaled_w)
    x0 = int(rng.integers(0, scaled_w - side + 1))
    y0 = (scaled_h - side) // 2
    return _apply_window(frames, detections, scaled_h, scaled_w,
                         (x0, y0, x0 + side, y0 + side), spec.target_size)


def std_augment(frames: np.ndarray, detections: Sequence[FrameDetections],
                spec: AugmentSpec):
    """Standard pipeline: scale then a random crop at an arbitrary offset."""
    if spec.mode != "std":
        raise ValueError(f"std_augment called with mode {spec.mode!r}")
    rng = np.random.default_rng(spec.seed)
    t, h, w, _ = frames.shape
    lo = max(spec.scale_range[0], spec.target_size / min(h, w))
    hi = max(spec.scale_range[1], lo)
    scale = rng.uniform(lo, hi)
    scaled_h, scaled_w = int(round(h * scale)), int(round(w * scale))
    side = min(spec.target_size, scaled_h, scaled_w)
    x0 = int(rng.integers(0, scaled_w - side + 1))
    y0 = int(rng.integers(0, scaled_h - side + 1))
    return _apply_window(frames, detections, scaled_h, scaled_w,
                         (x0, y0, x0 + side, y0 + side), spec.target_size)


def augment_clip(frames: np.ndarray, detections: Sequence[FrameDetections],
                 spec: AugmentSpec):
    if spec.mode == "scr":
        return scr_augment(frames, detections, spec)
    if spec.mode == "std":
        return std_augment(frames, detections, spec)
    return center_eval_process(frames, detections, spec.target_size)


def center_eval_process(frames: np.ndarray,
                        detections: Sequence[FrameDetections], target: int):
    """Deterministic evaluation preprocessing: short-side scale, centre crop.

    Square inputs at the target size pass through bit-identically.
    """
    t, h, w, _ = frames.shape
    if h == w == target:
        return frames, list(detections)
    scale = target / min(h, w)
    scaled_h, scaled_w = int(round(h * scale)), int(round(w * scale))
    x0 = (scaled_w - target) // 2
    y0 = (scaled_h - target) // 2
    return _apply_window(frames, detections, scaled_h, scaled_w,
                         (x0, y0, x0 + target, y0 + target), target)
