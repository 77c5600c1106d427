"""Inflated denoising UNet with fusion sites and temporal modules."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigurationError, ShapeError
from .fusion import Attention, FusionSiteParams, fuse

FUSION = "fusion"
CONTROLNET = "controlnet"
REMOVED = "removed"
GARMENT_MODES = (FUSION, CONTROLNET, REMOVED)


@dataclass(frozen=True)
class UNetConfig:
    c_lat: int = 48
    widths: tuple[int, ...] = (32, 64)
    attention: tuple[bool, ...] = (True, True)
    mid_attention: bool = True
    heads: int = 2
    groups: int = 8
    d_emb: int = 64
    ff_mult: int = 2
    temporal_enabled: bool = True
    temporal_heads: int = 2

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(self.widths))
        object.__setattr__(self, "attention", tuple(self.attention))
        if not self.widths or any(w <= 0 for w in self.widths):
            raise ValueError(f"widths must be positive, got {self.widths}")
        if len(self.attention) != len(self.widths):
            raise ValueError("attention flags must match the number of levels")
        if not (any(self.attention) or self.mid_attention):
            raise ValueError("at least one attention site is required")
        for w in self.widths:
            if w % self.heads or w % self.temporal_heads:
                raise ValueError(f"heads must divide every width, got {self.widths}")

    @property
    def in_channels(self) -> int:
        return 2 * self.c_lat + 1

    @property
    def base_width(self) -> int:
        return self.widths[0]


def _groups(channels: int, requested: int) -> int:
    g = min(requested, channels)
    while channels % g:
        g -= 1
    return g


def sinusoidal_embedding(positions: torch.Tensor, dim: int) -> torch.Tensor:
    """Standard transformer sin/cos table, shape ``(len(positions), dim)``."""
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float64) / max(half, 1))
    args = positions.to(torch.float64)[:, None] * freqs[None]
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=1)
    if dim % 2:
        emb = F.pad(emb, (0, 1))
    return emb


def expand_input_conv(weight: torch.Tensor, c_lat: int) -> torch.Tensor:
    """Widen an initial conv kernel from ``c_lat`` to ``2 c_lat + 1`` input channels.

    The original channels are copied; the agnostic-latent and mask channels are zero.
    """
    if weight.dim() != 4 or weight.shape[1] != c_lat:
        raise ShapeError(f"initial conv kernel has {weight.shape[1]} input channels, expected {c_lat}")
    extra = weight.new_zeros(weight.shape[0], c_lat + 1, *weight.shape[2:])
    return torch.cat([weight, extra], dim=1)


class ResBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, temb_dim: int, groups: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(_groups(c_in, groups), c_in)
        self.conv1 = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.temb = nn.Linear(temb_dim, 2 * c_out)
        self.norm2 = nn.GroupNorm(_groups(c_out, groups), c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.skip = nn.Conv2d(c_in, c_out, 1) if c_in != c_out else nn.Identity()

    def forward(self, x, temb):
        h = self.conv1(F.silu(self.norm1(x)))
        scale, shift = self.temb(F.silu(temb))[:, :, None, None].chunk(2, dim=1)
        h = self.norm2(h) * (1 + scale) + shift
        h = self.conv2(F.silu(h))
        return self.skip(x) + h


class CrossAttention(nn.Module):
    """Attention from spatial tokens to the garment embedding token(s)."""

    def __init__(self, dim: int, context_dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.to_q = nn.Linear(dim, dim, bias=False)
        self.to_k = nn.Linear(context_dim, dim, bias=False)
        self.to_v = nn.Linear(context_dim, dim, bias=False)
        self.to_out = nn.Linear(dim, dim)

    def forward(self, x, context):
        b, n, c = x.shape
        d = c // self.heads
        q = self.to_q(x).reshape(b, n, self.heads, d).transpose(1, 2)
        k = self.to_k(context).reshape(b, -1, self.heads, d).transpose(1, 2)
        v = self.to_v(context).reshape(b, -1, self.heads, d).transpose(1, 2)
        out = F.scaled_dot_product_attention(q, k, v)
        return self.to_out(out.transpose(1, 2).reshape(b, n, c))


class SiteBlock(nn.Module):
    """Spatial transformer block: self-attention site, cross-attention, feed-forward."""

    def __init__(self, dim: int, cfg: UNetConfig):
        super().__init__()
        self.norm = nn.GroupNorm(_groups(dim, cfg.groups), dim)
        self.proj_in = nn.Linear(dim, dim)
        self.norm1 = nn.LayerNorm(dim)
        self.attn1 = Attention(dim, cfg.heads)
        self.norm2 = nn.LayerNorm(dim)
        self.attn2 = CrossAttention(dim, cfg.d_emb, cfg.heads)
        self.norm3 = nn.LayerNorm(dim)
        self.ff = nn.Sequential(nn.Linear(dim, cfg.ff_mult * dim), nn.GELU(),
                                nn.Linear(cfg.ff_mult * dim, dim))
        self.proj_out = nn.Linear(dim, dim)

    def forward(self, x, context, attend):
        """``attend(block, hidden)`` computes the self-attention output for ``(N, h, w, c)`` hidden states."""
        h = self.proj_in(self.norm(x).permute(0, 2, 3, 1))
        h = h + attend(self, self.norm1(h))
        if context is not None:
            n, hh, ww, c = h.shape
            tokens = h.reshape(n, hh * ww, c)
            tokens = tokens + self.attn2(self.norm2(tokens), context)
            h = tokens.reshape(n, hh, ww, c)
        h = h + self.ff(self.norm3(h))
        return x + self.proj_out(h).permute(0, 3, 1, 2)


def frame_position_encoding(num_frames: int, dim: int) -> torch.Tensor:
    return sinusoidal_embedding(torch.arange(num_frames), dim)


class TemporalModule(nn.Module):
    """Self-attention along the frame axis with a zero-initialized output projection."""

    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.norm = nn.LayerNorm(dim)
        self.attn = Attention(dim, heads)
        nn.init.zeros_(self.attn.to_out.weight)
        nn.init.zeros_(self.attn.to_out.bias)

    def forward(self, x: torch.Tensor, num_frames: int) -> torch.Tensor:
        n, c, h, w = x.shape
        if n % num_frames:
            raise ShapeError(f"{n} frames do not split into clips of {num_frames}")
        video = x.reshape(n // num_frames, num_frames, c, h, w).transpose(1, 2)
        out = temporal_attention(video, self)
        return out.transpose(1, 2).reshape(n, c, h, w)


def to_frame_tokens(feature: torch.Tensor) -> torch.Tensor:
    """``(b, c, f, h, w) -> (b*h*w, f, c)``."""
    if feature.dim() != 5:
        raise ShapeError(f"expected (b, c, f, h, w) feature, got {tuple(feature.shape)}")
    b, c, f, h, w = feature.shape
    return feature.permute(0, 3, 4, 2, 1).reshape(b * h * w, f, c)


def from_frame_tokens(tokens: torch.Tensor, b: int, h: int, w: int) -> torch.Tensor:
    """Inverse of :func:`to_frame_tokens`."""
    _, f, c = tokens.shape
    return tokens.reshape(b, h, w, f, c).permute(0, 4, 3, 1, 2)


def temporal_attention(feature: torch.Tensor, params: TemporalModule) -> torch.Tensor:
    """Attend along ``f`` of a ``(b, c, f, h, w)`` map; spatial positions are folded into the batch."""
    tokens = to_frame_tokens(feature)
    b, c, f, h, w = feature.shape
    pos = frame_position_encoding(f, c).to(tokens.dtype)
    tokens = tokens + params.attn(params.norm(tokens) + pos)
    return from_frame_tokens(tokens, b, h, w)


Attend = Callable[[str, SiteBlock, torch.Tensor], torch.Tensor]


class SpatialUNet(nn.Module):
    """Down/mid/up backbone shared by the denoiser and the garment encoder."""

    def __init__(self, cfg: UNetConfig, in_channels: int, temporal: bool, output: bool):
        super().__init__()
        self.cfg = cfg
        widths = cfg.widths
        temb_dim = 4 * widths[0]
        self.conv_in = nn.Conv2d(in_channels, widths[0], 3, padding=1)
        self.time_mlp = nn.Sequential(nn.Linear(widths[0], temb_dim), nn.SiLU(),
                                      nn.Linear(temb_dim, temb_dim))
        self.res = nn.ModuleDict()
        self.sites = nn.ModuleDict()
        self.resample = nn.ModuleDict()
        self.temporal = nn.ModuleDict()
        self._order: list[tuple[str, int, bool]] = []

        def add_level(name, c_in, c_out, with_attn):
            key = name.replace(".", "_")
            self.res[key] = ResBlock(c_in, c_out, temb_dim, cfg.groups)
            if with_attn:
                self.sites[key] = SiteBlock(c_out, cfg)
            if temporal:
                self.temporal[key] = TemporalModule(c_out, cfg.temporal_heads)
            self._order.append((name, c_out, with_attn))

        ch = widths[0]
        for i, w in enumerate(widths):
            add_level(f"down.{i}", ch, w, cfg.attention[i])
            ch = w
            if i < len(widths) - 1:
                self.resample[f"down_{i}"] = nn.Conv2d(ch, ch, 3, stride=2, padding=1)
        add_level("mid", ch, ch, cfg.mid_attention)
        for i in reversed(range(len(widths))):
            add_level(f"up.{i}", ch + widths[i], widths[i], cfg.attention[i])
            ch = widths[i]
            if i > 0:
                self.resample[f"up_{i}"] = nn.Conv2d(ch, ch, 3, padding=1)
        self.has_output = output
        if output:
            self.norm_out = nn.GroupNorm(_groups(ch, cfg.groups), ch)
            self.conv_out = nn.Conv2d(ch, cfg.c_lat, 3, padding=1)

    def site_ids(self) -> list[str]:
        return [name for name, _, attn in self._order if attn]

    def site_shapes(self, h: int, w: int) -> dict[str, tuple[int, int, int]]:
        """Per-site ``(h_i, w_i, c_i)`` for a latent of spatial size ``h x w``."""
        shapes = {}
        for name, c, attn in self._order:
            level = len(self.cfg.widths) - 1 if name == "mid" else int(name.split(".")[1])
            if attn:
                shapes[name] = (h >> level, w >> level, c)
        return shapes

    def timestep_embedding(self, t: torch.Tensor, n: int, dtype) -> torch.Tensor:
        t = torch.as_tensor(t)
        if t.dim() == 0:
            t = t.expand(n)
        if t.shape[0] != n:
            raise ShapeError(f"got {t.shape[0]} timesteps for {n} frames")
        return self.time_mlp(sinusoidal_embedding(t, self.cfg.widths[0]).to(dtype))

    def _level(self, name, x, temb, context, attend, num_frames):
        key = name.replace(".", "_")
        x = self.res[key](x, temb)
        if key in self.sites:
            x = self.sites[key](x, context, lambda blk, hid: attend(name, blk, hid))
        if num_frames is not None and key in self.temporal:
            x = self.temporal[key](x, num_frames)
        return x

    def run(self, x, t, attend: Attend, context=None, pose=None, num_frames=None):
        """Run the backbone; ``num_frames=None`` bypasses temporal modules (image mode)."""
        n = x.shape[0]
        if n == 0:
            raise ValueError("empty frame batch")
        levels = len(self.cfg.widths)
        if x.shape[-2] % 2 ** (levels - 1) or x.shape[-1] % 2 ** (levels - 1):
            raise ShapeError(f"latent size {tuple(x.shape[-2:])} not divisible by {2 ** (levels - 1)}")
        temb = self.timestep_embedding(t, n, x.dtype)
        h = self.conv_in(x)
        if pose is not None:
            if pose.shape != h.shape:
                raise ShapeError(f"pose feature {tuple(pose.shape)} does not match {tuple(h.shape)}")
            h = h + pose
        skips = []
        for i in range(levels):
            h = self._level(f"down.{i}", h, temb, context, attend, num_frames)
            skips.append(h)
            if i < levels - 1:
                h = self.resample[f"down_{i}"](h)
        h = self._level("mid", h, temb, context, attend, num_frames)
        for i in reversed(range(levels)):
            h = torch.cat([h, skips[i]], dim=1)
            h = self._level(f"up.{i}", h, temb, context, attend, num_frames)
            if i > 0:
                h = self.resample[f"up_{i}"](F.interpolate(h, scale_factor=2.0, mode="nearest"))
        if not self.has_output:
            return h
        return self.conv_out(F.silu(self.norm_out(h)))


def _per_frame(x: torch.Tensor, n: int) -> torch.Tensor:
    g = x.shape[0]
    if g == n:
        return x
    if g == 0 or n % g:
        raise ShapeError(f"{g} garment entries cannot be spread over {n} frames")
    return x.repeat_interleave(n // g, dim=0)


class DenoisingUNet(SpatialUNet):
    """Noise predictor over ``z_t ⊕ E(agnostic) ⊕ R(mask)``."""

    def __init__(self, cfg: UNetConfig, in_channels: int | None = None):
        super().__init__(cfg, in_channels or cfg.in_channels, temporal=cfg.temporal_enabled, output=True)

    @property
    def in_channels(self) -> int:
        return self.conv_in.in_channels

    def expand_input_conv(self) -> None:
        """Widen ``conv_in`` from ``c_lat`` to ``2 c_lat + 1`` inputs, zero-filling the new channels."""
        old = self.conv_in
        new = nn.Conv2d(self.cfg.in_channels, old.out_channels, old.kernel_size, padding=old.padding)
        with torch.no_grad():
            new.weight.copy_(expand_input_conv(old.weight, self.cfg.c_lat))
            new.bias.copy_(old.bias)
        self.conv_in = new.to(old.weight.dtype)

    def temporal_parameters(self):
        return list(self.temporal.parameters())

    def forward(self, z_cat, t, pose=None, bank=None, emb=None, num_frames=None,
                garment_mode: str = FUSION, garment_scale: float = 1.0):
        if garment_mode not in GARMENT_MODES:
            raise ConfigurationError(f"unknown garment mode {garment_mode!r}")
        if z_cat.shape[1] != self.in_channels:
            raise ShapeError(f"expected {self.in_channels} input channels, got {z_cat.shape[1]}")
        n = z_cat.shape[0]
        if n == 0:
            raise ValueError("empty frame batch")
        if num_frames is not None and n % num_frames:
            raise ShapeError(f"{n} frames do not split into clips of {num_frames}")
        if garment_mode != REMOVED:
            if bank is None:
                raise ConfigurationError(f"garment mode {garment_mode!r} needs a garment feature bank")
            if list(bank.sites) != self.site_ids():
                raise ConfigurationError(f"bank sites {list(bank.sites)} != UNet sites {self.site_ids()}")
        context = _per_frame(emb, n).unsqueeze(1) if emb is not None else None

        def attend(site, block, hidden):
            if garment_mode == REMOVED:
                return block.attn1(hidden.flatten(1, 2)).reshape(hidden.shape)
            x_g = bank.features[site]
            if garment_mode == CONTROLNET:
                mixed = hidden + _per_frame(x_g, n)
                return block.attn1(mixed.flatten(1, 2)).reshape(hidden.shape)
            g_out = bank.attn_out[site]
            if x_g.shape[0] == 1:
                x_g, g_out = x_g[0], g_out[0]
            else:
                x_g, g_out = _per_frame(x_g, n), _per_frame(g_out, n)
            params = FusionSiteParams(block.attn1.weights(), None, block.attn1.heads, garment_scale)
            return fuse(hidden, x_g, params, garment_out=g_out)

        return self.run(z_cat, t, attend, context=context, pose=pose, num_frames=num_frames)
