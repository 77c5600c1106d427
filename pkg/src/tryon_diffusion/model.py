"""Full try-on denoiser: ``eps(z_t, t, P(pose), garment_encoder(E(G_cat), emb), emb)``."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import torch
import torch.nn as nn

from . import codec
from .codec import CodecConfig
from .conditioning import POSE_CHANNELS, GarmentEmbedder, PoseEncoder
from .garment_encoder import GarmentEncoder, GarmentFeatureBank, garment_input
from .unet import FUSION, GARMENT_MODES, REMOVED, DenoisingUNet, UNetConfig


@dataclass(frozen=True)
class ModelConfig:
    codec: CodecConfig = CodecConfig()
    unet: UNetConfig = UNetConfig()
    pose_channels: tuple[int, ...] = POSE_CHANNELS
    garment_mode: str = FUSION
    garment_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "pose_channels", tuple(self.pose_channels))
        if self.unet.c_lat != self.codec.c_lat:
            raise ValueError(f"UNet c_lat={self.unet.c_lat} does not match codec c_lat={self.codec.c_lat}")
        if self.garment_mode not in GARMENT_MODES:
            raise ValueError(f"unknown garment mode {self.garment_mode!r}")


@dataclass
class Conditions:
    """Everything the denoiser conditions on, already in latent space where applicable.

    Per-frame fields have ``N`` leading entries; garment fields have ``G`` entries
    with ``G == 1`` for a video (one garment) or ``G == N`` for an image batch.
    ``num_frames=None`` marks image mode (temporal modules bypassed).
    """

    agnostic_latent: torch.Tensor
    mask_latent: torch.Tensor
    pose: torch.Tensor
    garment_input: torch.Tensor
    embedding: torch.Tensor
    num_frames: int | None = None
    bank: GarmentFeatureBank | None = None
    pose_feature: torch.Tensor | None = None

    def __len__(self):
        return self.agnostic_latent.shape[0]

    def frames(self, idx: list[int]) -> "Conditions":
        """Conditions for a sub-clip; shared garment fields are kept as they are."""
        per_garment = self.garment_input.shape[0] == len(self) and len(self) > 1
        g = (lambda x: x[idx]) if per_garment else (lambda x: x)
        return Conditions(
            agnostic_latent=self.agnostic_latent[idx],
            mask_latent=self.mask_latent[idx],
            pose=self.pose[idx],
            garment_input=g(self.garment_input),
            embedding=g(self.embedding),
            num_frames=None if self.num_frames is None else len(idx),
            bank=None if self.bank is None else (self.bank.select(idx) if per_garment else self.bank),
            pose_feature=None if self.pose_feature is None else self.pose_feature[idx],
        )


class TryOnModel(nn.Module):
    def __init__(self, cfg: ModelConfig = ModelConfig()):
        super().__init__()
        self.cfg = cfg
        with torch.random.fork_rng():
            torch.manual_seed(cfg.seed)
            unet = DenoisingUNet(cfg.unet, in_channels=cfg.unet.c_lat)
            # the garment encoder starts as a copy of the (unexpanded) UNet
            self.garment_encoder = GarmentEncoder.from_unet(unet)
            unet.expand_input_conv()
            self.unet = unet
            self.pose_encoder = PoseEncoder(cfg.unet.base_width, cfg.codec.f, cfg.pose_channels)
        self.embedder = GarmentEmbedder(cfg.unet.d_emb, seed=cfg.seed)

    @property
    def codec(self) -> CodecConfig:
        return self.cfg.codec

    @property
    def garment_mode(self) -> str:
        return self.cfg.garment_mode

    def temporal_parameters(self) -> list[nn.Parameter]:
        return self.unet.temporal_parameters()

    def set_temporal_trainable(self, flag: bool) -> None:
        for p in self.temporal_parameters():
            p.requires_grad_(flag)

    def conditions(self, agnostic, mask, pose, cloth, cloth_mask, video: bool = True) -> Conditions:
        """Build :class:`Conditions` from pixel-space streams."""
        dtype = next(self.parameters()).dtype
        agnostic, pose, cloth = agnostic.to(dtype), pose.to(dtype), cloth.to(dtype)
        mask, cloth_mask = mask.to(dtype), cloth_mask.to(dtype)
        if cloth.dim() == 3:
            cloth, cloth_mask = cloth.unsqueeze(0), cloth_mask.unsqueeze(0)
        return Conditions(
            agnostic_latent=codec.encode(agnostic, self.codec),
            mask_latent=codec.resize_mask(mask, self.codec.f),
            pose=pose,
            garment_input=garment_input(cloth, cloth_mask, self.codec),
            embedding=self.embedder(cloth),
            num_frames=agnostic.shape[0] if video else None,
        )

    def encode_garment(self, cond: Conditions) -> GarmentFeatureBank | None:
        if self.garment_mode == REMOVED:
            return None
        return self.garment_encoder(cond.garment_input, cond.embedding)

    @torch.no_grad()
    def cache(self, cond: Conditions) -> Conditions:
        """Precompute the timestep-independent parts (garment bank, pose feature)."""
        return dataclasses.replace(cond, bank=self.encode_garment(cond),
                                   pose_feature=self.pose_encoder(cond.pose))

    def forward(self, z_t: torch.Tensor, t, cond: Conditions) -> torch.Tensor:
        z_cat = torch.cat([z_t, cond.agnostic_latent, cond.mask_latent], dim=1)
        pose = cond.pose_feature if cond.pose_feature is not None else self.pose_encoder(cond.pose)
        bank = cond.bank if cond.bank is not None else self.encode_garment(cond)
        return self.unet(z_cat, t, pose=pose, bank=bank, emb=cond.embedding,
                         num_frames=cond.num_frames, garment_mode=self.garment_mode,
                         garment_scale=self.cfg.garment_scale)
