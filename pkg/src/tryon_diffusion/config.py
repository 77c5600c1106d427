"""Run configuration: flat key/value files resolved against a named profile."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, fields
from pathlib import Path

from .codec import CodecConfig
from .diffusion import NoiseSchedule, SamplerConfig
from .errors import ConfigurationError
from .model import ModelConfig
from .training import JointTrainConfig
from .unet import UNetConfig

ENV_CONFIG = "TRYON_CONFIG"


@dataclass(frozen=True)
class RunConfig:
    profile: str = "toy"
    seed: int = 0
    # data
    height: int = 64
    width: int = 48
    num_records: int = 8
    record_frames: int = 8
    # codec
    codec_factor: int = 2
    codec_mode: str = "lossless-patch"
    latent_channels: int | None = None
    # networks
    widths: tuple[int, ...] = (32, 64)
    attention: tuple[bool, ...] = (True, True)
    mid_attention: bool = True
    heads: int = 2
    groups: int = 8
    embed_dim: int = 64
    temporal: bool = True
    pose_channels: tuple[int, ...] = (16, 32, 64, 128)
    garment_encoder_mode: str = "fusion"
    garment_scale: float = 1.0
    # noise schedule
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    beta_schedule: str = "linear"
    # training
    image_threshold: float = 0.5
    frames: int = 4
    lr: float = 1e-3
    total_steps: int = 2000
    weight_decay: float = 1e-2
    sample_rate: int = 1
    mode: str = "joint"
    augment: bool = True
    include_swaps: bool = False
    ckpt_every: int = 500
    lr_schedule: str = "constant"
    warmup_steps: int = 0
    # sampling
    steps: int = 30
    eta: float = 0.0
    window: int = 8
    stride: int = 4
    blend: str = "uniform"
    clip_denoised: bool = False  # clamp each step's predicted clip to the pixel range

    def __post_init__(self):
        for name in ("widths", "attention", "pose_channels"):
            object.__setattr__(self, name, tuple(getattr(self, name)))

    @property
    def codec(self) -> CodecConfig:
        return CodecConfig(self.codec_factor, self.codec_mode, self.latent_channels, seed=self.seed)

    @property
    def unet(self) -> UNetConfig:
        return UNetConfig(c_lat=self.codec.c_lat, widths=self.widths, attention=self.attention,
                          mid_attention=self.mid_attention, heads=self.heads, groups=self.groups,
                          d_emb=self.embed_dim, temporal_enabled=self.temporal,
                          temporal_heads=self.heads)

    @property
    def model(self) -> ModelConfig:
        return ModelConfig(self.codec, self.unet, self.pose_channels, self.garment_encoder_mode,
                           self.garment_scale, seed=self.seed)

    @property
    def train(self) -> JointTrainConfig:
        return JointTrainConfig(self.image_threshold, self.frames, self.lr, self.total_steps,
                                self.weight_decay, sample_rate=self.sample_rate, mode=self.mode,
                                garment_encoder_mode=self.garment_encoder_mode, augment=self.augment,
                                include_swaps=self.include_swaps, ckpt_every=self.ckpt_every,
                                lr_schedule=self.lr_schedule, warmup_steps=self.warmup_steps,
                                seed=self.seed)

    @property
    def sampler(self) -> SamplerConfig:
        return SamplerConfig(self.steps, self.eta, self.window, self.stride, self.blend)

    def schedule(self) -> NoiseSchedule:
        return NoiseSchedule(self.T, self.beta_start, self.beta_end, self.beta_schedule)

    def validate(self) -> "RunConfig":
        """Build every nested config once so bad values fail early."""
        try:
            self.model, self.train, self.sampler, self.schedule()
        except ValueError as exc:
            raise ConfigurationError(str(exc)) from None
        if self.profile not in PROFILES:
            raise ConfigurationError(f"unknown profile {self.profile!r}")
        return self

    def to_dict(self) -> dict:
        return {f.name: (list(v) if isinstance(v := getattr(self, f.name), tuple) else v)
                for f in fields(self)}


PROFILES: dict[str, dict] = {
    "toy": {},
    "paper-shaped": {
        "height": 512, "width": 384, "record_frames": 48,
        "codec_factor": 8, "codec_mode": "projected", "latent_channels": 4,
        "widths": (320, 640, 1280, 1280), "attention": (True, True, True, False),
        "heads": 8, "groups": 32, "embed_dim": 768,
        "frames": 24, "lr": 1e-5, "total_steps": 60_000, "sample_rate": 4,
        "ckpt_every": 5000, "steps": 30, "window": 24, "stride": 16,
    },
}

KEYS = {f.name for f in fields(RunConfig)}


def read_config_file(path: Path | str) -> dict:
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:  # Python < 3.11
            import tomli as tomllib
        return tomllib.loads(text)
    return json.loads(text)


def resolve(values: dict | None = None, **overrides) -> RunConfig:
    """Profile defaults, then ``values`` (e.g. a config file), then ``overrides``; unknown keys fail."""
    merged = dict(values or {})
    merged.update({k: v for k, v in overrides.items() if v is not None})
    unknown = sorted(set(merged) - KEYS)
    if unknown:
        raise ConfigurationError(f"unknown config keys: {', '.join(unknown)}")
    profile = merged.get("profile", "toy")
    if profile not in PROFILES:
        raise ConfigurationError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
    base = dict(PROFILES[profile])
    base.update(merged)
    base["profile"] = profile
    try:
        cfg = dataclasses.replace(RunConfig(), **base)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(str(exc)) from None
    return cfg.validate()
