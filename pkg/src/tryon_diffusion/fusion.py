"""Attention feature fusion between the denoising UNet and the garment encoder.

At a spatial self-attention site the garment feature ``x_g`` (h, w, c) is
repeated for every frame and appended to the frame tokens along the width axis.
Self-attention runs per frame over the ``h * 2w`` tokens, the first ``w``
columns are kept, and the garment encoder's own self-attention of ``x_g`` is
added on top.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ShapeError


@dataclass
class AttentionWeights:
    """Projection matrices of one self-attention layer, ``y = x @ W.T``."""

    q: torch.Tensor
    k: torch.Tensor
    v: torch.Tensor
    o: torch.Tensor
    o_bias: torch.Tensor | None = None

    @classmethod
    def identity(cls, c: int, dtype=torch.float64) -> "AttentionWeights":
        eye = torch.eye(c, dtype=dtype)
        return cls(eye, eye, eye, eye)


@dataclass
class FusionSiteParams:
    unet: AttentionWeights
    garment: AttentionWeights | None
    heads: int = 1
    garment_scale: float = 1.0

    def __post_init__(self):
        c = self.unet.q.shape[0]
        if c % self.heads:
            raise ValueError(f"head count {self.heads} does not divide channel dim {c}")


def attention(x: torch.Tensor, w: AttentionWeights, heads: int) -> torch.Tensor:
    """Multi-head softmax self-attention over the token axis of ``(B, n, c)``.

    Heads are contiguous channel blocks; scores are scaled by ``1/sqrt(c/heads)``.
    """
    b, n, c = x.shape
    d = c // heads

    def split(t):
        return t.reshape(b, n, heads, d).transpose(1, 2)

    q = split(x @ w.q.T)
    k = split(x @ w.k.T)
    v = split(x @ w.v.T)
    out = F.scaled_dot_product_attention(q, k, v)
    out = out.transpose(1, 2).reshape(b, n, c) @ w.o.T
    if w.o_bias is not None:
        out = out + w.o_bias
    return out


def broadcast_duplicate(x_g: torch.Tensor, t: int) -> torch.Tensor:
    """Stack ``t`` copies of ``x_g`` along a new leading frame axis (materialized)."""
    if t < 1:
        raise ValueError(f"frame count must be >= 1, got {t}")
    return x_g.unsqueeze(0).repeat(t, *([1] * x_g.dim()))


def _garment_frames(x_g: torch.Tensor, t: int) -> torch.Tensor:
    if x_g.dim() == 3:
        return broadcast_duplicate(x_g, t)
    if x_g.shape[0] == t:
        return x_g
    if x_g.shape[0] == 1:
        return broadcast_duplicate(x_g[0], t)
    raise ShapeError(f"garment feature has {x_g.shape[0]} entries for {t} frames")


def garment_self_attention(x_g: torch.Tensor, params: FusionSiteParams) -> torch.Tensor:
    """Self-attention of the garment feature alone, ``(.., h, w, c)`` in and out."""
    shape = x_g.shape
    tokens = x_g.reshape(-1, shape[-3] * shape[-2], shape[-1])
    out = attention(tokens, params.garment, params.heads)
    return out.reshape(shape)


def fuse(
    x_d: torch.Tensor,
    x_g: torch.Tensor,
    params: FusionSiteParams,
    garment_out: torch.Tensor | None = None,
) -> torch.Tensor:
    """Fuse denoiser features ``(t, h, w, c)`` with a garment feature.

    ``x_g`` is ``(h, w, c)`` (shared by all frames) or ``(t, h, w, c)`` (one
    garment per frame, as in image batches). ``garment_out`` may carry the
    garment encoder's already computed self-attention of ``x_g``.
    """
    if x_d.dim() != 4:
        raise ShapeError(f"expected x_d of shape (t, h, w, c), got {tuple(x_d.shape)}")
    t, h, w, c = x_d.shape
    if tuple(x_g.shape[-3:]) != (h, w, c):
        raise ShapeError(f"garment feature {tuple(x_g.shape)} does not match frame shape {(h, w, c)}")
    g = _garment_frames(x_g, t)
    joint = torch.cat([x_d, g], dim=2).reshape(t, h * 2 * w, c)
    out = attention(joint, params.unet, params.heads).reshape(t, h, 2 * w, c)[:, :, :w]
    if garment_out is None:
        if params.garment is None:
            raise ValueError("fusion needs garment attention weights or a precomputed garment_out")
        garment_out = garment_self_attention(x_g, params)
    return out + params.garment_scale * garment_out


class Attention(nn.Module):
    """Self-attention layer whose weights can be handed to :func:`fuse`."""

    def __init__(self, dim: int, heads: int):
        super().__init__()
        if dim % heads:
            raise ValueError(f"head count {heads} does not divide {dim}")
        self.heads = heads
        self.to_q = nn.Linear(dim, dim, bias=False)
        self.to_k = nn.Linear(dim, dim, bias=False)
        self.to_v = nn.Linear(dim, dim, bias=False)
        self.to_out = nn.Linear(dim, dim)
        nn.init.zeros_(self.to_out.bias)

    def weights(self) -> AttentionWeights:
        return AttentionWeights(self.to_q.weight, self.to_k.weight, self.to_v.weight,
                                self.to_out.weight, self.to_out.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return attention(x, self.weights(), self.heads)
