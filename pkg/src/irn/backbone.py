"""Toy two-pathway 3D convolutional video backbone.

A slow pathway samples T frames and a fast pathway samples 2T frames with a
quarter of the channels; the fast stream is fused into the slow one by a
temporally strided convolution before the final block. The fused third-block
volume (T x H/8 x W/8 x C) feeds RoI average pooling of detections, and a
1x1x1 head conv plus global average pooling yields the M-dim action
representation. Spatial convolutions use replicate padding so a constant
input stays constant across space.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch
from torch import nn

from .detections import BoundingBox, Role
from .imageops import crop_patch


@dataclass
class VideoClip:
    """Raw clip: (T_in, H, W, 3) floats in [0, 1] plus its label and id."""

    frames: np.ndarray
    label: int = -1
    clip_id: str = ""

    def __post_init__(self):
        if self.frames.ndim != 4 or self.frames.shape[-1] != 3:
            raise ValueError(f"expected (T, H, W, 3) frames, got {self.frames.shape}")


@dataclass
class FeatureVolume:
    """Third-block features, (T, H', W', C), plus the box-to-cell scale."""

    values: torch.Tensor
    spatial_scale: float


@dataclass
class ActionRepresentation:
    vector: torch.Tensor  # (M,)


@dataclass
class PooledDetectionFeature:
    vector: torch.Tensor  # (C,)
    frame_index: int
    role: Optional[Role] = None


class BottleneckBlock3d(nn.Module):
    """Residual block: 1x1x1 reduce, 3x3x3, 1x1x1 expand, projection skip."""

    def __init__(self, in_ch: int, out_ch: int, spatial_stride: int = 1,
                 bias: bool = True):
        super().__init__()
        mid = max(2, out_ch // 4)
        stride = (1, spatial_stride, spatial_stride)
        self.reduce = nn.Conv3d(in_ch, mid, 1, stride=stride, bias=bias)
        self.conv = nn.Conv3d(mid, mid, 3, padding=1, padding_mode="replicate",
                              bias=bias)
        self.expand = nn.Conv3d(mid, out_ch, 1, bias=bias)
        if in_ch != out_ch or spatial_stride != 1:
            self.skip = nn.Conv3d(in_ch, out_ch, 1, stride=stride, bias=bias)
        else:
            self.skip = None

    def forward(self, x):
        y = torch.relu(self.reduce(x))
        y = torch.relu(self.conv(y))
        y = self.expand(y)
        s = x if self.skip is None else self.skip(x)
        return torch.relu(y + s)


class TwoPathwayBackbone(nn.Module):
    """Video clips (B, 3, T_in, H, W) -> (feature volume, pooled action vector).

    Channel plan is derived from the detection feature width C: the slow
    pathway runs C/4 -> C/2 -> 3C/4, the fast pathway a quarter of that, and
    the fusion conv brings the fast stream up to C/4 so the fused volume has
    exactly C channels.
    """

    def __init__(self, feature_dim: int, action_dim: int, traj_len: int,
                 frames_per_clip: int, bias: bool = True):
        super().__init__()
        if frames_per_clip % (2 * traj_len) != 0:
            raise ValueError("frames_per_clip must be divisible by 2*traj_len")
        c = feature_dim
        self.feature_dim = c
        self.action_dim = action_dim
        self.traj_len = traj_len
        self.frames_per_clip = frames_per_clip

        slow = (c // 4, c // 2, 3 * c // 4)
        fast = (max(1, c // 16), max(1, c // 8), max(1, 3 * c // 16))
        fuse_out = c - slow[2]

        self.slow_stem = nn.Conv3d(3, slow[0], (1, 3, 3), stride=(1, 2, 2),
                                   padding=(0, 1, 1), padding_mode="replicate",
                                   bias=bias)
        self.fast_stem = nn.Conv3d(3, fast[0], (3, 3, 3), stride=(1, 2, 2),
                                   padding=(1, 1, 1), padding_mode="replicate",
                                   bias=bias)
        self.slow_block1 = BottleneckBlock3d(slow[0], slow[1], 2, bias)
        self.slow_block2 = BottleneckBlock3d(slow[1], slow[2], 2, bias)
        self.fast_block1 = BottleneckBlock3d(fast[0], fast[1], 2, bias)
        self.fast_block2 = BottleneckBlock3d(fast[1], fast[2], 2, bias)
        self.fuse = nn.Conv3d(fast[2], fuse_out, (3, 1, 1), stride=(2, 1, 1),
                              padding=(1, 0, 0), padding_mode="replicate",
                              bias=bias)
        self.block3 = BottleneckBlock3d(c, c, 1, bias)
        self.head = nn.Conv3d(c, action_dim, 1, bias=bias)

    def sampled_frame_indices(self) -> np.ndarray:
        """Input-frame indices the slow pathway (and trajectories) use."""
        stride = self.frames_per_clip // self.traj_len
        return np.arange(self.traj_len) * stride

    def forward(self, clips: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        if clips.dim() != 5 or clips.shape[1] != 3:
            raise ValueError(f"expected (B, 3, T, H, W) clips, got {tuple(clips.shape)}")
        if clips.shape[2] != self.frames_per_clip:
            raise ValueError(
                f"expected {self.frames_per_clip} frames, got {clips.shape[2]}"
            )
        slow_idx = torch.as_tensor(self.sampled_frame_indices(), device=clips.device)
        fast_stride = self.frames_per_clip // (2 * self.traj_len)
        fast_idx = torch.arange(2 * self.traj_len, device=clips.device) * fast_stride

        s = torch.relu(self.slow_stem(clips.index_select(2, slow_idx)))
        f = torch.relu(self.fast_stem(clips.index_select(2, fast_idx)))
        s = self.slow_block2(self.slow_block1(s))
        f = self.fast_block2(self.fast_block1(f))
        fused = torch.cat([s, torch.relu(self.fuse(f))], dim=1)
        volume = self.block3(fused)  # (B, C, T, H', W')
        pooled = torch.relu(self.head(volume)).mean(dim=(2, 3, 4))  # (B, M)
        return volume, pooled


def backbone_forward(model: TwoPathwayBackbone, clip: VideoClip
                     ) -> tuple[FeatureVolume, ActionRepresentation]:
    """Single-clip wrapper returning the typed volume and action vector."""
    frames = torch.as_tensor(clip.frames, dtype=torch.float32)
    batch = frames.permute(3, 0, 1, 2).unsqueeze(0)
    volume, pooled = model(batch)
    values = volume[0].permute(1, 2, 3, 0)  # (T, H', W', C)
    scale = values.shape[1] / clip.frames.shape[1]
    return FeatureVolume(values=values, spatial_scale=scale), ActionRepresentation(pooled[0])


def roi_cell_mask(box: Optional[BoundingBox], grid_h: int, grid_w: int) -> np.ndarray:
    """Cells whose centres fall inside the box; the box centre's cell always
    counts so the pool never averages over an empty set."""
    mask = np.zeros((grid_h, grid_w), dtype=np.float32)
    if box is None:
        return mask
    cy = (np.arange(grid_h) + 0.5) / grid_h
    cx = (np.arange(grid_w) + 0.5) / grid_w
    inside = ((cy >= box.y0) & (cy < box.y1))[:, None] & ((cx >= box.x0) & (cx < box.x1))[None, :]
    mask[inside] = 1.0
    bx, by = box.center
    mask[min(int(by * grid_h), grid_h - 1), min(int(bx * grid_w), grid_w - 1)] = 1.0
    return mask


def roi_average_pool(volume: FeatureVolume, box: Optional[BoundingBox], t: int,
                     role: Optional[Role] = None) -> PooledDetectionFeature:
    """Average the feature cells covered by a normalised box at time t.

    An absent box pools to the exact zero vector.
    """
    values = volume.values
    if not 0 <= t < values.shape[0]:
        raise ValueError(f"frame index {t} outside volume of length {values.shape[0]}")
    channels = values.shape[-1]
    if box is None:
        vec = torch.zeros(channels, dtype=values.dtype)
        return PooledDetectionFeature(vector=vec, frame_index=t, role=role)
    mask = torch.as_tensor(roi_cell_mask(box, values.shape[1], values.shape[2]),
                           dtype=values.dtype)
    pooled = (values[t] * mask.unsqueeze(-1)).sum(dim=(0, 1)) / mask.sum()
    return PooledDetectionFeature(vector=pooled, frame_index=t, role=role)


class MlpPatchEmbed(nn.Module):
    """Per-frame detection features from raw pixel crops.

    Crops are bilinearly resized to a fixed patch, flattened, and passed
    through a two-layer perceptron shared across roles and frames. These
    features carry spatial appearance only, no temporal context.
    """

    def __init__(self, patch_size: int, out_dim: int, bias: bool = True):
        super().__init__()
        self.patch_size = patch_size
        in_dim = patch_size * patch_size * 3
        self.net = nn.Sequential(
            nn.Linear(in_dim, 2 * out_dim, bias=bias),
            nn.ReLU(),
            nn.Linear(2 * out_dim, out_dim, bias=bias),
        )

    def forward(self, patches: torch.Tensor) -> torch.Tensor:
        """(..., P, P, 3) -> (..., C). Expects pixel values in [0, 1]."""
        flat = patches.reshape(*patches.shape[:-3], -1)
        # centre the pixel range: the raw positive mean otherwise dominates
        # the projection and destabilises the normalisation-free stack
        return self.net(flat - 0.5)


def mlp_patch_embed(model: MlpPatchEmbed, clip: VideoClip,
                    box: Optional[BoundingBox], t: int,
                    role: Optional[Role] = None) -> PooledDetectionFeature:
    """Single-detection wrapper; degenerate crops count as absent."""
    out_dim = model.net[-1].out_features
    patch = None
    if box is not None:
        patch = crop_patch(clip.frames[t], box.x0, box.y0, box.x1, box.y1,
                           model.patch_size)
    if patch is None:
        vec = torch.zeros(out_dim)
        return PooledDetectionFeature(vector=vec, frame_index=t, role=role)
    vec = model(torch.as_tensor(patch, dtype=torch.float32))
    return PooledDetectionFeature(vector=vec, frame_index=t, role=role)
