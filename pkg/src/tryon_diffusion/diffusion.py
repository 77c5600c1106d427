"""Noise schedule, epsilon-prediction loss, DDIM sampling and sliding-window sampling."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Protocol

import torch

from .errors import ShapeError

UNIFORM = "uniform"
TRIANGULAR = "triangular"


BETA_KINDS = ("linear", "scaled-linear")


class NoiseSchedule:
    """DDPM schedule; timesteps run ``1..T`` and ``alpha_bar(0) == 1``.

    ``"linear"`` spaces the betas evenly; ``"scaled-linear"`` spaces their square
    roots evenly (the latent-diffusion convention, used with 0.00085..0.012).
    """

    def __init__(self, T: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02,
                 kind: str = "linear"):
        if T < 1:
            raise ValueError(f"T must be >= 1, got {T}")
        if kind == "linear":
            betas = torch.linspace(beta_start, beta_end, T, dtype=torch.float64)
        elif kind == "scaled-linear":
            betas = torch.linspace(beta_start**0.5, beta_end**0.5, T, dtype=torch.float64) ** 2
        else:
            raise ValueError(f"unknown beta schedule {kind!r}; choose from {BETA_KINDS}")
        self._init(betas)

    @classmethod
    def from_betas(cls, betas) -> "NoiseSchedule":
        sched = cls.__new__(cls)
        sched._init(torch.as_tensor(betas, dtype=torch.float64))
        return sched

    def _init(self, betas: torch.Tensor) -> None:
        if betas.dim() != 1 or len(betas) == 0:
            raise ValueError("betas must be a non-empty vector")
        if not bool(((betas > 0) & (betas < 1)).all()):
            raise ValueError("every beta must lie in (0, 1)")
        self.T = len(betas)
        self.betas = betas
        self.alpha_bars = torch.cumprod(1.0 - betas, dim=0)
        self._table = torch.cat([torch.ones(1, dtype=torch.float64), self.alpha_bars])

    def alpha_bar(self, t) -> torch.Tensor:
        t = torch.as_tensor(t, dtype=torch.long)
        if bool(((t < 0) | (t > self.T)).any()):
            raise ValueError(f"timestep out of range [0, {self.T}]: {t.tolist()}")
        return self._table[t]


def _broadcast(coef: torch.Tensor, like: torch.Tensor) -> torch.Tensor:
    if coef.dim() == 0:
        return coef.to(like.dtype)
    return coef.to(like.dtype).reshape(-1, *([1] * (like.dim() - 1)))


def add_noise(z0: torch.Tensor, eps: torch.Tensor, t, sched: NoiseSchedule) -> torch.Tensor:
    """``sqrt(ab_t) z0 + sqrt(1 - ab_t) eps``; ``t`` is a scalar or one step per leading entry."""
    if eps.shape != z0.shape:
        raise ShapeError(f"noise {tuple(eps.shape)} does not match latent {tuple(z0.shape)}")
    ab = sched.alpha_bar(t)
    return _broadcast(ab.sqrt(), z0) * z0 + _broadcast((1 - ab).sqrt(), z0) * eps


class NoisePredictor(Protocol):
    def __call__(self, z_t: torch.Tensor, t: torch.Tensor, cond) -> torch.Tensor: ...


@dataclass
class DiffusionBatch:
    """Clean latents plus conditions; ``cond.num_frames`` groups frames into clips."""

    z0: torch.Tensor
    cond: object

    def __len__(self):
        return self.z0.shape[0]


def sample_timesteps(batch: DiffusionBatch, sched: NoiseSchedule, rng: torch.Generator) -> torch.Tensor:
    """Uniform ``t`` in ``[1, T]``: one per image, or one shared by all frames of a clip."""
    n = len(batch)
    clip = getattr(batch.cond, "num_frames", None)
    if clip is None:
        return torch.randint(1, sched.T + 1, (n,), generator=rng)
    per_clip = torch.randint(1, sched.T + 1, (n // clip,), generator=rng)
    return per_clip.repeat_interleave(clip)


def training_loss(model: NoisePredictor, batch: DiffusionBatch, sched: NoiseSchedule,
                  rng: torch.Generator) -> torch.Tensor:
    """Mean squared error between the injected noise and the model's prediction."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    t = sample_timesteps(batch, sched, rng)
    eps = torch.randn(batch.z0.shape, generator=rng, dtype=batch.z0.dtype)
    z_t = add_noise(batch.z0, eps, t, sched)
    pred = model(z_t, t, batch.cond)
    return torch.mean((eps - pred) ** 2)


@dataclass(frozen=True)
class SamplerConfig:
    num_inference_steps: int = 30
    eta: float = 0.0
    window_size: int = 24
    window_stride: int = 16
    blend: str = UNIFORM

    def __post_init__(self):
        if self.num_inference_steps < 1:
            raise ValueError("num_inference_steps must be >= 1")
        if self.window_stride < 1:
            raise ValueError(f"window stride must be >= 1, got {self.window_stride}")
        if not self.window_stride <= self.window_size:
            raise ValueError(f"stride {self.window_stride} exceeds window {self.window_size}")
        if self.blend not in (UNIFORM, TRIANGULAR):
            raise ValueError(f"unknown blend mode {self.blend!r}")


def inference_timesteps(T: int, steps: int) -> list[int]:
    """Evenly spaced, strictly decreasing timesteps from ``T`` down to (but excluding) 0."""
    if steps > T:
        raise ValueError(f"{steps} inference steps exceed the schedule length {T}")
    grid = torch.linspace(T, 0, steps + 1, dtype=torch.float64)[:-1]
    return [int(v) for v in torch.round(grid).tolist()]


def ddim_step(x: torch.Tensor, eps: torch.Tensor, ab_t: torch.Tensor, ab_prev: torch.Tensor,
              eta: float = 0.0, noise: torch.Tensor | None = None,
              denoised_fn: Callable[[torch.Tensor], torch.Tensor] | None = None) -> torch.Tensor:
    """One DDIM update. ``denoised_fn`` may project the predicted ``z0``; eps is then re-derived."""
    x0 = (x - (1 - ab_t).sqrt().to(x.dtype) * eps) / ab_t.sqrt().to(x.dtype)
    if denoised_fn is not None:
        x0 = denoised_fn(x0)
        eps = (x - ab_t.sqrt().to(x.dtype) * x0) / (1 - ab_t).sqrt().to(x.dtype)
    sigma = eta * ((1 - ab_prev) / (1 - ab_t) * (1 - ab_t / ab_prev)).sqrt()
    out = ab_prev.sqrt().to(x.dtype) * x0 + (1 - ab_prev - sigma**2).clamp(min=0).sqrt().to(x.dtype) * eps
    if eta > 0:
        out = out + sigma.to(x.dtype) * noise
    return out


def _prepare(model, cond):
    cache = getattr(model, "cache", None)
    return cache(cond) if callable(cache) else cond


def _latent_shape(cond) -> tuple[int, ...]:
    ag = cond.agnostic_latent
    return tuple(ag.shape)


def _ddim_loop(predict: Callable, shape, dtype, sched: NoiseSchedule, cfg: SamplerConfig,
               seed: int, denoised_fn: Callable | None = None) -> torch.Tensor:
    g = torch.Generator().manual_seed(seed)
    x = torch.randn(shape, generator=g, dtype=dtype)
    steps = inference_timesteps(sched.T, cfg.num_inference_steps)
    for i, t in enumerate(steps):
        t_prev = steps[i + 1] if i + 1 < len(steps) else 0
        eps = predict(x, t)
        noise = torch.randn(shape, generator=g, dtype=dtype) if cfg.eta > 0 else None
        x = ddim_step(x, eps, sched.alpha_bar(t), sched.alpha_bar(t_prev), cfg.eta, noise, denoised_fn)
    return x


@torch.no_grad()
def sample(model: NoisePredictor, cond, sched: NoiseSchedule, cfg: SamplerConfig,
           seed: int = 0, denoised_fn: Callable | None = None) -> torch.Tensor:
    """DDIM sampling of a clip that fits in one window; bitwise reproducible per seed."""
    shape = _latent_shape(cond)
    if shape[0] > cfg.window_size:
        raise ValueError(f"{shape[0]} frames exceed the window of {cfg.window_size}; "
                         "use sample_long_video")
    cond = _prepare(model, cond)

    def predict(x, t):
        return model(x, torch.full((shape[0],), t, dtype=torch.long), cond)

    return _ddim_loop(predict, shape, cond.agnostic_latent.dtype, sched, cfg, seed, denoised_fn)


def plan_windows(num_frames: int, window: int, stride: int) -> list[list[int]]:
    """Windows ``[0, W), [S, S+W), ...``; the last one is right-aligned to end at frame F-1."""
    if stride < 1:
        raise ValueError(f"window stride must be >= 1, got {stride}")
    if stride > window:
        raise ValueError(f"stride {stride} exceeds window {window}")
    if num_frames <= window:
        return [list(range(num_frames))]
    starts = list(range(0, num_frames - window + 1, stride))
    if starts[-1] + window < num_frames:
        starts.append(num_frames - window)
    return [list(range(s, s + window)) for s in starts]


def window_weights(num_frames: int, windows: list[list[int]], blend: str = UNIFORM) -> torch.Tensor:
    """Per-window, per-frame blend weights ``(n_windows, F)``; every column sums to 1."""
    raw = torch.zeros(len(windows), num_frames, dtype=torch.float64)
    for k, win in enumerate(windows):
        n = len(win)
        if blend == UNIFORM:
            w = torch.ones(n, dtype=torch.float64)
        elif blend == TRIANGULAR:
            j = torch.arange(n, dtype=torch.float64)
            w = torch.minimum(j + 1, n - j)
        else:
            raise ValueError(f"unknown blend mode {blend!r}")
        raw[k, win] = w
    total = raw.sum(dim=0)
    if bool((total == 0).any()):
        raise ValueError("some frames are not covered by any window")
    return raw / total


@torch.no_grad()
def sample_long_video(model: NoisePredictor, cond, sched: NoiseSchedule, cfg: SamplerConfig,
                      seed: int = 0, denoised_fn: Callable | None = None) -> torch.Tensor:
    """Sliding-window DDIM: per step, overlapping windows' noise predictions are blended."""
    shape = _latent_shape(cond)
    n = shape[0]
    windows = plan_windows(n, cfg.window_size, cfg.window_stride)
    weights = window_weights(n, windows, cfg.blend)
    cond = _prepare(model, cond)
    sub_conds = [cond.frames(win) for win in windows]

    def predict(x, t):
        if len(windows) == 1:
            return model(x, torch.full((n,), t, dtype=torch.long), cond)
        acc = torch.zeros(shape, dtype=torch.float64)
        for k, win in enumerate(windows):
            eps_k = model(x[win], torch.full((len(win),), t, dtype=torch.long), sub_conds[k])
            w = weights[k, win].reshape(-1, *([1] * (eps_k.dim() - 1)))
            acc[win] += w * eps_k.to(torch.float64)
        return acc.to(x.dtype)

    return _ddim_loop(predict, shape, cond.agnostic_latent.dtype, sched, cfg, seed, denoised_fn)
