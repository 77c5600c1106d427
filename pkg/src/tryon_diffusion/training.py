"""Image-video joint training with temporal-module freezing and spatial augmentation."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from . import codec
from .data import TryOnSample
from .diffusion import DiffusionBatch, NoiseSchedule, training_loss
from .errors import ConfigurationError, TrainingError
from .unet import GARMENT_MODES

logger = logging.getLogger(__name__)

JOINT = "joint"
TWO_STAGE = "two-stage"
IMAGE = "image"
VIDEO = "video"
LR_SCHEDULES = ("constant", "cosine")


@dataclass(frozen=True)
class JointTrainConfig:
    image_threshold: float = 0.5  # lambda: r <= lambda selects an image batch
    frames: int = 24
    lr: float = 1e-5
    total_steps: int = 60_000
    weight_decay: float = 1e-2
    betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    sample_rate: int = 4
    mode: str = JOINT
    garment_encoder_mode: str = "fusion"
    augment: bool = True
    include_swaps: bool = False
    ckpt_every: int = 1000
    lr_schedule: str = "constant"  # or "cosine": linear warmup, then cosine decay to 0
    warmup_steps: int = 0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "betas", tuple(self.betas))
        if not 0 <= self.image_threshold <= 1:
            raise ValueError(f"image_threshold must be in [0, 1], got {self.image_threshold}")
        if self.frames < 1:
            raise ValueError("frames must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.sample_rate < 1:
            raise ValueError("sample_rate must be >= 1")
        if self.mode not in (JOINT, TWO_STAGE):
            raise ValueError(f"unknown training mode {self.mode!r}")
        if self.garment_encoder_mode not in GARMENT_MODES:
            raise ValueError(f"unknown garment encoder mode {self.garment_encoder_mode!r}")
        if self.lr_schedule not in LR_SCHEDULES:
            raise ValueError(f"unknown lr schedule {self.lr_schedule!r}")
        if not 0 <= self.warmup_steps <= self.total_steps:
            raise ValueError("warmup_steps must be in [0, total_steps]")

    def threshold_at(self, step: int) -> float:
        """Effective lambda; the two-stage ablation uses images first, then video."""
        if self.mode == TWO_STAGE:
            return 1.0 if step < self.total_steps // 2 else 0.0
        return self.image_threshold


@dataclass
class TrainBatch:
    """``N`` frames of aligned streams. Image batches carry one garment per frame."""

    kind: str
    video: torch.Tensor
    agnostic: torch.Tensor
    mask: torch.Tensor
    pose: torch.Tensor
    cloth: torch.Tensor
    cloth_mask: torch.Tensor
    sources: list[str] = field(default_factory=list)

    @property
    def temporal_frozen(self) -> bool:
        return self.kind == IMAGE

    def __len__(self):
        return self.video.shape[0]


# --- augmentation -----------------------------------------------------------------


@dataclass(frozen=True)
class SpatialTransform:
    """Optional horizontal flip followed by a scale about the centre and a shift.

    Shifts are fractions of the image size. Sampling is nearest-neighbour, so
    binary masks stay binary and the transform commutes with pixelwise blends.
    """

    flip: bool = False
    scale: float = 1.0
    shift: tuple[float, float] = (0.0, 0.0)

    @classmethod
    def draw(cls, rng: np.random.Generator, p_flip: float = 0.5, p_affine: float = 0.5,
             limit: float = 0.2) -> "SpatialTransform":
        flip = bool(rng.random() < p_flip)
        if rng.random() < p_affine:
            scale = float(1 + rng.uniform(-limit, limit))
            shift = (float(rng.uniform(-limit, limit)), float(rng.uniform(-limit, limit)))
            return cls(flip, scale, shift)
        return cls(flip)

    def source_index(self, h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
        """Input row/col sampled by every output row/col (may be out of range)."""
        cy, cx = (h - 1) / 2, (w - 1) / 2
        ys = (np.arange(h) - cy - self.shift[0] * h) / self.scale + cy
        xs = (np.arange(w) - cx - self.shift[1] * w) / self.scale + cx
        ys = np.floor(ys + 0.5).astype(np.int64)
        xs = np.floor(xs + 0.5).astype(np.int64)
        if self.flip:
            xs = np.where((xs >= 0) & (xs < w), w - 1 - xs, xs)
        return ys, xs

    def apply(self, x: torch.Tensor, fill: float = 0.0) -> torch.Tensor:
        h, w = x.shape[-2:]
        ys, xs = self.source_index(h, w)
        valid = torch.from_numpy(((ys >= 0) & (ys < h))[:, None] & ((xs >= 0) & (xs < w))[None, :])
        gathered = x[..., torch.from_numpy(np.clip(ys, 0, h - 1))[:, None],
                     torch.from_numpy(np.clip(xs, 0, w - 1))[None, :]]
        return torch.where(valid, gathered, torch.full_like(gathered, fill))


SPATIAL_STREAMS = ("video", "agnostic", "mask", "pose", "cloth", "cloth_mask")


def augment(streams: dict[str, torch.Tensor], rng: np.random.Generator,
            transform: SpatialTransform | None = None) -> dict[str, torch.Tensor]:
    """Apply one drawn spatial transform to every stream; no photometric changes."""
    transform = transform or SpatialTransform.draw(rng)
    return {k: transform.apply(v) for k, v in streams.items()}


# --- datasets -----------------------------------------------------------------------


class ImageDataset:
    """Single frames (with their garment) drawn from a pool of try-on samples."""

    def __init__(self, samples: list[TryOnSample]):
        self.samples = samples

    def __len__(self):
        return sum(len(s) for s in self.samples)

    def draw(self, rng: np.random.Generator) -> dict[str, torch.Tensor]:
        s = self.samples[int(rng.integers(len(self.samples)))]
        i = int(rng.integers(len(s)))
        return {"video": s.video[i], "agnostic": s.agnostic[i], "mask": s.mask[i], "pose": s.pose[i],
                "cloth": s.cloth, "cloth_mask": s.cloth_mask, "source": f"{s.name}#{i}"}


class VideoDataset:
    """Clips of ``frames`` frames taken every ``sample_rate`` frames from one sample."""

    def __init__(self, samples: list[TryOnSample]):
        self.samples = samples

    def __len__(self):
        return len(self.samples)

    def draw(self, rng: np.random.Generator, frames: int, sample_rate: int) -> dict[str, torch.Tensor]:
        s = self.samples[int(rng.integers(len(self.samples)))]
        rate = sample_rate
        span = (frames - 1) * rate + 1
        if span > len(s):
            raise ConfigurationError(f"sample {s.name} has {len(s)} frames, a clip needs {span}")
        start = int(rng.integers(len(s) - span + 1))
        idx = list(range(start, start + span, rate))
        return {"video": s.video[idx], "agnostic": s.agnostic[idx], "mask": s.mask[idx],
                "pose": s.pose[idx], "cloth": s.cloth, "cloth_mask": s.cloth_mask,
                "source": f"{s.name}@{start}"}


def _pick_image(threshold: float, r: float) -> bool:
    return threshold >= 1 or (threshold > 0 and r <= threshold)


def joint_sample(image_ds: ImageDataset | None, video_ds: VideoDataset | None, cfg: JointTrainConfig,
                 rng: np.random.Generator, step: int = 0) -> TrainBatch:
    """Draw ``r ~ U(0, 1)``: ``r <= lambda`` gives N images, otherwise one N-frame clip."""
    lam = cfg.threshold_at(step)
    image = _pick_image(lam, float(rng.random()))
    if image:
        if not image_ds or len(image_ds) == 0:
            raise ConfigurationError("an image batch was selected but the image dataset is empty")
        items = [image_ds.draw(rng) for _ in range(cfg.frames)]
        if cfg.augment:
            items = [{**augment({k: it[k] for k in SPATIAL_STREAMS}, rng), "source": it["source"]}
                     for it in items]
        stacked = {k: torch.stack([it[k] for it in items]) for k in SPATIAL_STREAMS}
        return TrainBatch(IMAGE, sources=[it["source"] for it in items], **stacked)
    if not video_ds or len(video_ds) == 0:
        raise ConfigurationError("a video batch was selected but the video dataset is empty")
    clip = video_ds.draw(rng, cfg.frames, cfg.sample_rate)
    streams = {k: clip[k] for k in SPATIAL_STREAMS}
    if cfg.augment:
        streams = augment(streams, rng)
    streams["cloth"], streams["cloth_mask"] = streams["cloth"][None], streams["cloth_mask"][None]
    return TrainBatch(VIDEO, sources=[clip["source"]], **streams)


# --- optimisation -------------------------------------------------------------------


@dataclass
class TrainState:
    optimizer: torch.optim.Optimizer
    rng: torch.Generator
    scheduler: torch.optim.lr_scheduler.LRScheduler | None = None
    step: int = 0


def lr_factor(cfg: JointTrainConfig, step: int) -> float:
    """Multiplier on ``cfg.lr`` for optimiser step ``step`` (0-based)."""
    if cfg.lr_schedule == "constant":
        return 1.0
    if step < cfg.warmup_steps:
        return (step + 1) / cfg.warmup_steps
    span = max(1, cfg.total_steps - cfg.warmup_steps)
    return 0.5 * (1 + math.cos(math.pi * (step - cfg.warmup_steps) / span))


def make_state(model: torch.nn.Module, cfg: JointTrainConfig) -> TrainState:
    opt = torch.optim.AdamW(model.parameters(), lr=cfg.lr, betas=cfg.betas, eps=cfg.adam_eps,
                            weight_decay=cfg.weight_decay)
    sched = None
    if cfg.lr_schedule != "constant":
        sched = torch.optim.lr_scheduler.LambdaLR(opt, lambda step: lr_factor(cfg, step))
    return TrainState(opt, torch.Generator().manual_seed(cfg.seed), sched)


def diffusion_batch(model, batch: TrainBatch) -> DiffusionBatch:
    video = batch.kind == VIDEO
    cond = model.conditions(batch.agnostic, batch.mask, batch.pose, batch.cloth, batch.cloth_mask,
                            video=video)
    dtype = cond.agnostic_latent.dtype
    return DiffusionBatch(codec.encode(batch.video.to(dtype), model.codec), cond)


def train_step(model, batch: TrainBatch, sched: NoiseSchedule, state: TrainState) -> tuple[float, TrainState]:
    """One optimisation step; temporal parameters get no gradient on image batches."""
    model.set_temporal_trainable(not batch.temporal_frozen)
    state.optimizer.zero_grad(set_to_none=True)
    loss = training_loss(model, diffusion_batch(model, batch), sched, state.rng)
    if not torch.isfinite(loss):
        raise TrainingError(f"non-finite loss {loss.item()} at step {state.step} "
                            f"({batch.kind} batch from {batch.sources})")
    loss.backward()
    state.optimizer.step()
    if state.scheduler is not None:
        state.scheduler.step()
    state.step += 1
    return float(loss.detach()), state


def parameter_checksum(params) -> str:
    import hashlib

    h = hashlib.sha256()
    for p in params:
        h.update(p.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def train(model, image_ds, video_ds, cfg: JointTrainConfig, sched: NoiseSchedule,
          out_dir: Path | str | None = None,
          save: Callable[[Path, int], None] | None = None) -> list[tuple[int, float, str]]:
    """Run ``cfg.total_steps`` steps; writes ``loss.csv`` and periodic checkpoints under ``out_dir``."""
    rng = np.random.default_rng(cfg.seed)
    state = make_state(model, cfg)
    model.train()
    history = []
    out = Path(out_dir) if out_dir is not None else None
    writer = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        fh = open(out / "loss.csv", "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(["step", "kind", "loss"])
    try:
        for step in range(cfg.total_steps):
            batch = joint_sample(image_ds, video_ds, cfg, rng, step)
            loss, state = train_step(model, batch, sched, state)
            history.append((state.step, loss, batch.kind))
            if writer is not None:
                writer.writerow([state.step, batch.kind, repr(loss)])
            if step % 100 == 0:
                logger.info("step %d %s loss %.5f", state.step, batch.kind, loss)
            last = state.step == cfg.total_steps
            if out is not None and save is not None and (state.step % cfg.ckpt_every == 0 or last):
                save(out / f"checkpoint_{state.step:06d}.safetensors", state.step)
    finally:
        if writer is not None:
            fh.close()
    model.set_temporal_trainable(True)
    return history
