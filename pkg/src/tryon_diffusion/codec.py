"""Deterministic latent codec standing in for a learned VAE.

The codec folds ``f x f`` pixel patches into channels (space-to-depth) and then
applies a fixed, seeded orthonormal rotation over the ``3 f^2`` patch channels.
In ``lossless-patch`` mode every rotated channel is kept, so decoding is the exact
inverse. In ``projected`` mode only the first ``c_lat`` rows of the rotation are
kept; decoding is the transpose, so ``decode(encode(x))`` is an orthogonal
projection of ``x``.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .errors import ShapeError

LOSSLESS = "lossless-patch"
PROJECTED = "projected"


@dataclass(frozen=True)
class CodecConfig:
    f: int = 4
    mode: str = LOSSLESS
    c_lat: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.f < 1:
            raise ValueError(f"codec factor must be >= 1, got {self.f}")
        if self.mode not in (LOSSLESS, PROJECTED):
            raise ValueError(f"unknown codec mode {self.mode!r}")
        full = 3 * self.f * self.f
        if self.mode == LOSSLESS:
            if self.c_lat not in (None, full):
                raise ValueError(f"lossless-patch mode forces c_lat={full}, got {self.c_lat}")
            object.__setattr__(self, "c_lat", full)
        else:
            if self.c_lat is None:
                raise ValueError("projected mode needs an explicit c_lat")
            if not 1 <= self.c_lat <= full:
                raise ValueError(f"projected c_lat must be in [1, {full}], got {self.c_lat}")

    @property
    def patch_channels(self) -> int:
        return 3 * self.f * self.f


@functools.lru_cache(maxsize=32)
def _rotation(patch_channels: int, seed: int) -> torch.Tensor:
    g = torch.Generator().manual_seed(seed)
    a = torch.randn(patch_channels, patch_channels, generator=g, dtype=torch.float64)
    q, r = torch.linalg.qr(a)
    # fix column signs so the factorization is unique
    q = q * torch.sign(torch.diagonal(r)).unsqueeze(0)
    return q.T.contiguous()


def projection_matrix(cfg: CodecConfig) -> torch.Tensor:
    """Rows of the fixed rotation kept by ``cfg``: shape ``(c_lat, 3 f^2)``, float64."""
    return _rotation(cfg.patch_channels, cfg.seed)[: cfg.c_lat]


def _check_divisible(h: int, w: int, f: int) -> None:
    if h % f or w % f:
        raise ShapeError(f"spatial size {h}x{w} is not divisible by codec factor {f}")


def encode(video: torch.Tensor, cfg: CodecConfig) -> torch.Tensor:
    """Map ``(F, 3, H, W)`` pixels to ``(F, c_lat, H/f, W/f)`` latents."""
    if video.dim() != 4 or video.shape[1] != 3:
        raise ShapeError(f"expected (F, 3, H, W) video, got {tuple(video.shape)}")
    _check_divisible(video.shape[2], video.shape[3], cfg.f)
    patches = F.pixel_unshuffle(video, cfg.f)
    p = projection_matrix(cfg).to(video.dtype)
    return torch.einsum("kc,nchw->nkhw", p, patches)


def decode(latent: torch.Tensor, cfg: CodecConfig) -> torch.Tensor:
    """Transpose of :func:`encode`; the exact inverse in lossless-patch mode."""
    if latent.dim() != 4 or latent.shape[1] != cfg.c_lat:
        raise ShapeError(f"expected (F, {cfg.c_lat}, h, w) latent, got {tuple(latent.shape)}")
    p = projection_matrix(cfg).to(latent.dtype)
    patches = torch.einsum("kc,nkhw->nchw", p, latent)
    return F.pixel_shuffle(patches, cfg.f)


def resize_mask(mask: torch.Tensor, f: int) -> torch.Tensor:
    """Average-pool a ``(F, 1, H, W)`` mask over ``f x f`` blocks."""
    if mask.dim() != 4 or mask.shape[1] != 1:
        raise ShapeError(f"expected (F, 1, H, W) mask, got {tuple(mask.shape)}")
    n, _, h, w = mask.shape
    _check_divisible(h, w, f)
    blocks = mask.reshape(n, 1, h // f, f, w // f, f)
    return blocks.mean(dim=(3, 5))
