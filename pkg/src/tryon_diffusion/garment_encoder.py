"""UNet-shaped garment encoder emitting one feature map per self-attention site."""

from __future__ import annotations

from dataclasses import dataclass
from types import MappingProxyType
from typing import Mapping

import torch

from . import codec
from .codec import CodecConfig
from .errors import ShapeError
from .unet import SpatialUNet, UNetConfig


@dataclass(frozen=True)
class GarmentFeatureBank:
    """Per-site garment features, ordered like the UNet's self-attention sites.

    ``features[site]`` is the hidden state entering the site's self-attention,
    shape ``(G, h_i, w_i, c_i)``; ``attn_out[site]`` is the garment encoder's own
    self-attention output for it.
    """

    sites: tuple[str, ...]
    features: Mapping[str, torch.Tensor]
    attn_out: Mapping[str, torch.Tensor]

    def __post_init__(self):
        object.__setattr__(self, "features", MappingProxyType(dict(self.features)))
        object.__setattr__(self, "attn_out", MappingProxyType(dict(self.attn_out)))

    def __len__(self):
        return len(self.sites)

    def shapes(self) -> dict[str, tuple[int, int, int]]:
        return {s: tuple(self.features[s].shape[1:]) for s in self.sites}

    def detach(self) -> "GarmentFeatureBank":
        return GarmentFeatureBank(self.sites,
                                  {k: v.detach() for k, v in self.features.items()},
                                  {k: v.detach() for k, v in self.attn_out.items()})

    def select(self, index) -> "GarmentFeatureBank":
        """Bank restricted to the garments at ``index`` along the leading axis."""
        return GarmentFeatureBank(self.sites,
                                  {k: v[index] for k, v in self.features.items()},
                                  {k: v[index] for k, v in self.attn_out.items()})


class GarmentEncoder(SpatialUNet):
    """Spatial copy of the denoiser over ``E(garment) ⊕ R(garment mask)``.

    No temporal modules and no output head; the timestep is fixed to 0.
    """

    def __init__(self, cfg: UNetConfig):
        super().__init__(cfg, cfg.c_lat + 1, temporal=False, output=False)

    @classmethod
    def from_unet(cls, unet: SpatialUNet) -> "GarmentEncoder":
        """Copy the spatial weights of ``unet``; the mask input channel starts at zero."""
        enc = cls(unet.cfg).to(unet.conv_in.weight.dtype)
        c_lat = unet.cfg.c_lat
        own = enc.state_dict()
        shared = {k: v for k, v in unet.state_dict().items() if k in own and not k.startswith("conv_in.")}
        enc.load_state_dict(shared, strict=False)
        with torch.no_grad():
            enc.conv_in.weight.zero_()
            enc.conv_in.weight[:, :c_lat] = unet.conv_in.weight[:, :c_lat]
            enc.conv_in.bias.copy_(unet.conv_in.bias)
        return enc

    def forward(self, garment_input: torch.Tensor, emb: torch.Tensor | None = None) -> GarmentFeatureBank:
        if garment_input.dim() != 4 or garment_input.shape[1] != self.cfg.c_lat + 1:
            raise ShapeError(f"expected (G, {self.cfg.c_lat + 1}, h, w) garment input, "
                             f"got {tuple(garment_input.shape)}")
        features, attn_out = {}, {}

        def attend(site, block, hidden):
            out = block.attn1(hidden.flatten(1, 2)).reshape(hidden.shape)
            features[site] = hidden
            attn_out[site] = out
            return out

        context = emb.unsqueeze(1) if emb is not None else None
        t = torch.zeros(garment_input.shape[0], dtype=torch.long)
        self.run(garment_input, t, attend, context=context)
        sites = tuple(self.site_ids())
        return GarmentFeatureBank(sites, features, attn_out)


def garment_input(garment: torch.Tensor, mask: torch.Tensor, cfg: CodecConfig) -> torch.Tensor:
    """``E(garment) ⊕ R(mask)`` for ``(G, 3, H, W)`` images and ``(G, 1, H, W)`` masks."""
    if garment.dim() == 3:
        garment, mask = garment.unsqueeze(0), mask.unsqueeze(0)
    if garment.shape[-2:] != mask.shape[-2:]:
        raise ShapeError(f"garment {tuple(garment.shape)} and mask {tuple(mask.shape)} differ in size")
    return torch.cat([codec.encode(garment, cfg), codec.resize_mask(mask.to(garment.dtype), cfg.f)], dim=1)


def encode_garment(encoder: GarmentEncoder, garment: torch.Tensor, mask: torch.Tensor,
                   embedding: torch.Tensor, cfg: CodecConfig) -> GarmentFeatureBank:
    if cfg.c_lat != encoder.cfg.c_lat:
        raise ShapeError(f"codec has c_lat={cfg.c_lat}, encoder expects {encoder.cfg.c_lat}")
    return encoder(garment_input(garment, mask, cfg), embedding)
