"""Spatial position encoding learned from binary detection maps.

A single 3-stage 3D ConvNet is shared across all four roles. Temporal kernels
are local (size 3, stride 1, padded) so each output stays per-frame while
still seeing position and scale changes in neighbouring frames. The remaining
spatial grid is flattened and projected per frame instead of average-pooled:
pooling translation-equivariant features would erase exactly the absolute
position this encoder exists to capture.
"""
from __future__ import annotations

import torch
from torch import nn


class SpatialPositionEncoder(nn.Module):
    """Binary map sequence (B, T, G, G) -> per-frame codes (B, T, C)."""

    STAGE_CHANNELS = (8, 16, 32)

    def __init__(self, grid_size: int, out_dim: int, bias: bool = True):
        super().__init__()
        if grid_size % 8 != 0:
            raise ValueError("grid_size must be divisible by 8")
        self.grid_size = grid_size
        self.out_dim = out_dim
        chans = (1,) + self.STAGE_CHANNELS
        self.stages = nn.ModuleList(
            nn.Conv3d(chans[i], chans[i + 1], kernel_size=3,
                      stride=(1, 2, 2), padding=1, bias=bias)
            for i in range(3)
        )
        reduced = grid_size // 8
        self.project = nn.Linear(self.STAGE_CHANNELS[-1] * reduced * reduced,
                                 out_dim, bias=bias)

    def forward(self, maps: torch.Tensor) -> torch.Tensor:
        single = maps.dim() == 3
        if single:
            maps = maps.unsqueeze(0)
        if maps.shape[-1] != self.grid_size or maps.shape[-2] != self.grid_size:
            raise ValueError(
                f"expected {self.grid_size}x{self.grid_size} maps, got "
                f"{tuple(maps.shape[-2:])}"
            )
        x = maps.unsqueeze(1)  # (B, 1, T, G, G)
        for stage in self.stages:
            x = torch.relu(stage(x))
        b, c, t, gh, gw = x.shape
        x = x.permute(0, 2, 1, 3, 4).reshape(b, t, c * gh * gw)
        out = self.project(x)
        return out.squeeze(0) if single else out


class TrajectoryFuser(nn.Module):
    """Combine pooled detection features with their position encodings.

    ``sum`` adds elementwise, ``none`` passes features through, and ``concat``
    concatenates per frame to 2C and projects back to C with a learned map.
    """

    def __init__(self, mode: str, channels: int, bias: bool = True):
        super().__init__()
        if mode not in ("none", "sum", "concat"):
            raise ValueError(f"unknown fusion mode {mode!r}")
        self.mode = mode
        self.project = (
            nn.Linear(2 * channels, channels, bias=bias) if mode == "concat" else None
        )

    def forward(self, features: torch.Tensor, encodings: torch.Tensor) -> torch.Tensor:
        if self.mode == "none":
            return features
        if features.shape != encodings.shape:
            raise ValueError(
                f"feature/encoding shapes differ: {tuple(features.shape)} vs "
                f"{tuple(encodings.shape)}"
            )
        if self.mode == "sum":
            return features + encodings
        return self.project(torch.cat([features, encodings], dim=-1))
