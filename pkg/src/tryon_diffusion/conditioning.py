"""Pose encoder, global garment embedding and clothing-agnostic composition."""

from __future__ import annotations

from typing import Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ShapeError

POSE_CHANNELS = (16, 32, 64, 128)


class PoseEncoder(nn.Module):
    """Four stride-2 convolutions followed by a zero-initialized alignment head.

    The trunk downsamples by 16. The head resizes (nearest) to the latent grid
    ``H/f x W/f`` and maps to the UNet's first width with a 1x1 conv, so the
    output can be added straight after the UNet's initial convolution.
    """

    def __init__(self, out_channels: int, factor: int, channels: Sequence[int] = POSE_CHANNELS):
        super().__init__()
        self.factor = factor
        self.channels = tuple(channels)
        layers = []
        c_in = 3
        for c in self.channels:
            layers.append(nn.Conv2d(c_in, c, kernel_size=4, stride=2, padding=1))
            layers.append(nn.SiLU())
            c_in = c
        self.trunk = nn.Sequential(*layers)
        self.align = nn.Conv2d(c_in, out_channels, kernel_size=1)
        nn.init.zeros_(self.align.weight)
        nn.init.zeros_(self.align.bias)

    @property
    def downsample(self) -> int:
        return 2 ** len(self.channels)

    def trunk_features(self, pose: torch.Tensor) -> torch.Tensor:
        return self.trunk(pose)

    def forward(self, pose: torch.Tensor) -> torch.Tensor:
        if pose.dim() != 4 or pose.shape[1] != 3:
            raise ShapeError(f"expected (F, 3, H, W) pose video, got {tuple(pose.shape)}")
        h, w = pose.shape[-2:]
        if h % self.downsample or w % self.downsample:
            raise ShapeError(f"pose size {h}x{w} must be divisible by {self.downsample}")
        if h % self.factor or w % self.factor:
            raise ShapeError(f"pose size {h}x{w} must be divisible by codec factor {self.factor}")
        feat = self.trunk(pose)
        feat = F.interpolate(feat, size=(h // self.factor, w // self.factor), mode="nearest")
        return self.align(feat)


class GarmentEmbedder(nn.Module):
    """Fixed linear stand-in for a CLIP image encoder.

    Area-downsamples to 16x16, flattens and multiplies by a seeded Gaussian
    matrix. Any module mapping ``(G, 3, H, W) -> (G, d_emb)`` can replace it.
    """

    grid = 16

    def __init__(self, dim: int = 64, seed: int = 0):
        super().__init__()
        self.dim = dim
        g = torch.Generator().manual_seed(seed)
        n_in = 3 * self.grid * self.grid
        matrix = torch.randn(dim, n_in, generator=g, dtype=torch.float64) / n_in**0.5
        # regenerated from the seed, so kept out of checkpoints
        self.register_buffer("matrix", matrix.float(), persistent=False)

    def forward(self, garment: torch.Tensor) -> torch.Tensor:
        if garment.dim() == 3:
            garment = garment.unsqueeze(0)
        if garment.dim() != 4 or garment.shape[1] != 3:
            raise ShapeError(f"expected (G, 3, H, W) garment, got {tuple(garment.shape)}")
        h, w = garment.shape[-2:]
        if h % self.grid or w % self.grid:
            raise ShapeError(f"garment size {h}x{w} must be divisible by {self.grid}")
        small = F.avg_pool2d(garment, kernel_size=(h // self.grid, w // self.grid))
        return small.flatten(1) @ self.matrix.to(garment.dtype).T


def compose_agnostic(video: torch.Tensor, mask: torch.Tensor, fill: float = 0.0) -> torch.Tensor:
    """Blend ``video * (1 - mask) + fill * mask``; pixels outside the mask are untouched."""
    if video.dim() != 4 or mask.dim() != 4 or mask.shape[1] != 1:
        raise ShapeError(f"expected (F,3,H,W) video and (F,1,H,W) mask, got "
                         f"{tuple(video.shape)} and {tuple(mask.shape)}")
    if video.shape[0] != mask.shape[0] or video.shape[2:] != mask.shape[2:]:
        raise ShapeError(f"video {tuple(video.shape)} and mask {tuple(mask.shape)} are not aligned")
    return torch.where(mask > 0, video * (1 - mask) + fill * mask, video)
