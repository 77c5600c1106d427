"""Glue between configuration, checkpoints, data records and the samplers."""

from __future__ import annotations

from pathlib import Path

import torch

from . import codec
from .checkpoint import load_tensors, read_header, save_checkpoint
from .config import RunConfig, resolve
from .data import RecordData
from .diffusion import NoiseSchedule, SamplerConfig, sample, sample_long_video
from .model import TryOnModel


def build_model(cfg: RunConfig) -> TryOnModel:
    return TryOnModel(cfg.model)


def save_model(path: Path | str, model: TryOnModel, cfg: RunConfig, step: int) -> None:
    save_checkpoint(path, model, cfg.to_dict(), cfg.seed, step)


def load_model(path: Path | str) -> tuple[TryOnModel, RunConfig]:
    header = read_header(path)
    cfg = resolve(header["config"])
    model = build_model(cfg)
    model.load_state_dict(load_tensors(path))
    model.eval()
    return model, cfg


def pixel_clamp(cfg: codec.CodecConfig):
    def clamp(z0: torch.Tensor) -> torch.Tensor:
        return codec.encode(codec.decode(z0, cfg).clamp(-1, 1), cfg)
    return clamp


@torch.no_grad()
def try_on(model: TryOnModel, record: RecordData, sched: NoiseSchedule, sampler: SamplerConfig,
           seed: int = 0, garment: str = "own", clip_denoised: bool = False) -> torch.Tensor:
    """Generate the try-on video for ``record`` wearing its own or its alternate garment.

    Clips longer than the sampler window go through the sliding-window sampler.
    With ``clip_denoised`` every intermediate clean-latent estimate is decoded,
    clamped to the pixel range and re-encoded.
    Returns pixels in ``[-1, 1]``, shape ``(F, 3, H, W)``.
    """
    if garment == "own":
        cloth, cloth_mask = record.cloth, record.cloth_mask
    elif garment == "alt":
        if record.alt_cloth is None:
            raise ValueError(f"record {record.record.id} has no alternate garment")
        cloth, cloth_mask = record.alt_cloth, record.alt_cloth_mask
    else:
        raise ValueError(f"garment must be 'own' or 'alt', got {garment!r}")
    cond = model.conditions(record.agnostic, record.mask, record.pose, cloth, cloth_mask, video=True)
    denoised_fn = pixel_clamp(model.codec) if clip_denoised else None
    if len(cond) > sampler.window_size:
        latent = sample_long_video(model, cond, sched, sampler, seed, denoised_fn)
    else:
        latent = sample(model, cond, sched, sampler, seed, denoised_fn)
    return codec.decode(latent, model.codec).clamp(-1, 1)
