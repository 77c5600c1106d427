"""SSIM and video Fréchet distance with pluggable feature extractors."""

from __future__ import annotations

import warnings
from typing import Callable, Protocol, Sequence

import numpy as np
import torch
import torch.nn as nn
from scipy import ndimage

from .errors import ShapeError

WINDOW_SIZE = 11
WINDOW_SIGMA = 1.5
K1, K2 = 0.01, 0.03


def _gaussian_kernel(size: int = WINDOW_SIZE, sigma: float = WINDOW_SIGMA) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2
    k = np.exp(-(x**2) / (2 * sigma**2))
    return k / k.sum()


def _as_channels(x) -> np.ndarray:
    a = x.detach().cpu().numpy() if isinstance(x, torch.Tensor) else np.asarray(x)
    a = a.astype(np.float64)
    if a.ndim == 2:
        a = a[None]
    if a.ndim != 3:
        raise ShapeError(f"expected (H, W) or (C, H, W) image, got shape {a.shape}")
    return a


def ssim_map(a, b, data_range: float = 2.0) -> np.ndarray:
    """Per-pixel SSIM averaged over channels, Gaussian window, reflected borders."""
    x, y = _as_channels(a), _as_channels(b)
    if x.shape != y.shape:
        raise ShapeError(f"image shapes differ: {x.shape} vs {y.shape}")
    k = _gaussian_kernel()
    c1, c2 = (K1 * data_range) ** 2, (K2 * data_range) ** 2

    def blur(img):
        out = ndimage.correlate1d(img, k, axis=0, mode="reflect")
        return ndimage.correlate1d(out, k, axis=1, mode="reflect")

    maps = []
    for xc, yc in zip(x, y):
        mu_x, mu_y = blur(xc), blur(yc)
        sxx = blur(xc * xc) - mu_x * mu_x
        syy = blur(yc * yc) - mu_y * mu_y
        sxy = blur(xc * yc) - mu_x * mu_y
        num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
        den = (mu_x * mu_x + mu_y * mu_y + c1) * (sxx + syy + c2)
        maps.append(num / den)
    return np.mean(maps, axis=0)


def ssim(a, b, data_range: float = 2.0) -> float:
    """Mean SSIM over the region unaffected by border padding.

    ``data_range`` defaults to 2 for images in ``[-1, 1]``.
    """
    m = ssim_map(a, b, data_range)
    pad = WINDOW_SIZE // 2
    if m.shape[0] > 2 * pad and m.shape[1] > 2 * pad:
        m = m[pad:-pad, pad:-pad]
    return float(m.mean())


def masked_ssim(a, b, mask, data_range: float = 2.0) -> float:
    """SSIM map averaged over pixels where ``mask > 0.5``."""
    m = ssim_map(a, b, data_range)
    sel = _as_channels(mask)[0] > 0.5
    if not sel.any():
        raise ValueError("mask selects no pixels")
    return float(m[sel].mean())


def video_ssim(a: torch.Tensor, b: torch.Tensor, data_range: float = 2.0) -> list[float]:
    if a.shape != b.shape:
        raise ShapeError(f"video shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")
    return [ssim(fa, fb, data_range) for fa, fb in zip(a, b)]


# --- Fréchet distance ---------------------------------------------------------------


def sqrtm_psd(a: np.ndarray) -> np.ndarray:
    """Square root of a symmetric positive semi-definite matrix via eigendecomposition."""
    sym = (a + a.T) / 2
    w, v = np.linalg.eigh(sym)
    return (v * np.sqrt(np.clip(w, 0, None))) @ v.T


def frechet_distance(mu_a, cov_a, mu_b, cov_b, eps: float = 1e-6) -> float:
    """``|mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a S_b)^(1/2))`` for Gaussian fits.

    The cross term uses ``tr sqrt(sqrt(S_a) S_b sqrt(S_a))``, which equals
    ``tr sqrt(S_a S_b)`` but stays symmetric. Singular covariances are
    regularized with ``eps * I``.
    """
    mu_a, mu_b = np.atleast_1d(mu_a), np.atleast_1d(mu_b)
    cov_a, cov_b = np.atleast_2d(cov_a), np.atleast_2d(cov_b)
    d = len(mu_a)
    if min(np.linalg.eigvalsh(cov_a).min(), np.linalg.eigvalsh(cov_b).min()) < eps:
        warnings.warn("singular covariance; adding %g * I" % eps, RuntimeWarning, stacklevel=2)
        cov_a = cov_a + eps * np.eye(d)
        cov_b = cov_b + eps * np.eye(d)
    root_a = sqrtm_psd(cov_a)
    cross = sqrtm_psd(root_a @ cov_b @ root_a)
    diff = mu_a - mu_b
    value = float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2 * np.trace(cross))
    return max(value, 0.0)


def gaussian_fit(features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    features = np.asarray(features, dtype=np.float64)
    mu = features.mean(axis=0)
    if len(features) < 2:
        return mu, np.zeros((features.shape[1], features.shape[1]))
    return mu, np.atleast_2d(np.cov(features, rowvar=False))


class FeatureExtractor3D(Protocol):
    name: str
    dim: int

    def __call__(self, clip: torch.Tensor) -> np.ndarray: ...


class RandomConv3DExtractor(nn.Module):
    """Seeded random-weight 3D conv network; clip ``(F, 3, H, W)`` -> feature vector."""

    def __init__(self, dim: int = 32, seed: int = 0):
        super().__init__()
        self.dim = dim
        self.seed = seed
        self.name = f"random-conv3d-d{dim}-s{seed}"
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            self.net = nn.Sequential(
                nn.Conv3d(3, 16, 3, stride=(1, 2, 2), padding=1), nn.ReLU(),
                nn.Conv3d(16, 32, 3, stride=(1, 2, 2), padding=1), nn.ReLU(),
                nn.Conv3d(32, dim, 3, stride=(2, 2, 2), padding=1),
            ).double()
        self.requires_grad_(False)

    @torch.no_grad()
    def forward(self, clip: torch.Tensor) -> np.ndarray:
        x = clip.to(torch.float64).permute(1, 0, 2, 3).unsqueeze(0)
        return self.net(x).mean(dim=(2, 3, 4))[0].numpy()


def extract_features(clips: Sequence, extractor: Callable) -> np.ndarray:
    return np.stack([np.asarray(extractor(c), dtype=np.float64) for c in clips])


def vfid(clips_a: Sequence, clips_b: Sequence, extractor: Callable | None = None) -> float:
    """Fréchet distance between Gaussian fits of per-clip features.

    ``extractor=None`` treats each entry as an already extracted feature vector.
    """
    fa = extract_features(clips_a, extractor) if extractor else np.asarray(clips_a, dtype=np.float64)
    fb = extract_features(clips_b, extractor) if extractor else np.asarray(clips_b, dtype=np.float64)
    d = fa.shape[1]
    if min(len(fa), len(fb)) < d + 1:
        warnings.warn(f"only {min(len(fa), len(fb))} clips for {d}-dim features; "
                      "the covariance estimate is rank deficient", RuntimeWarning, stacklevel=2)
    mu_a, cov_a = gaussian_fit(fa)
    mu_b, cov_b = gaussian_fit(fb)
    return frechet_distance(mu_a, cov_a, mu_b, cov_b)


def lpips(a, b, network: Callable | None = None) -> float:
    """Perceptual distance; needs a pretrained ``network(a, b) -> float`` supplied by the caller."""
    if network is None:
        raise NotImplementedError("LPIPS needs a pretrained perceptual network; pass network=...")
    return float(network(a, b))
