import pytest
import torch

from tryon_diffusion.codec import CodecConfig
from tryon_diffusion.model import ModelConfig, TryOnModel
from tryon_diffusion.unet import UNetConfig

_ACCEPTANCE: dict[str, tuple[str, float]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(num, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    num, title = marker.args
    key = f"{num:02d} {title}"
    if report.when == "call" or (report.when == "setup" and report.failed):
        status = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
        _ACCEPTANCE[key] = (status, report.duration)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_ACCEPTANCE):
        status, duration = _ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {status} ({duration:.1f}s)")


def small_model_config(seed: int = 0, mode: str = "fusion", temporal: bool = True) -> ModelConfig:
    """Toy architecture at reduced width; 16x16 pixel inputs give 4x4 latents."""
    codec = CodecConfig(4)
    unet = UNetConfig(c_lat=codec.c_lat, widths=(8, 16), heads=2, groups=4, d_emb=16,
                      temporal_enabled=temporal, temporal_heads=2)
    return ModelConfig(codec, unet, pose_channels=(4, 4, 4, 8), garment_mode=mode, seed=seed)


@pytest.fixture
def small_model():
    return TryOnModel(small_model_config())


def random_streams(frames: int, h: int = 16, w: int = 16, seed: int = 0, dtype=torch.float32):
    g = torch.Generator().manual_seed(seed)
    video = torch.rand(frames, 3, h, w, generator=g, dtype=dtype) * 2 - 1
    mask = (torch.rand(frames, 1, h, w, generator=g) > 0.5).to(dtype)
    pose = torch.rand(frames, 3, h, w, generator=g, dtype=dtype) * 2 - 1
    cloth = torch.rand(3, h, w, generator=g, dtype=dtype) * 2 - 1
    cloth_mask = (torch.rand(1, h, w, generator=g) > 0.3).to(dtype)
    return {"video": video, "agnostic": video * (1 - mask), "mask": mask, "pose": pose,
            "cloth": cloth, "cloth_mask": cloth_mask}


def perturb_zero_init(model: torch.nn.Module, seed: int = 1, scale: float = 0.05) -> None:
    """Give every all-zero parameter small random values so no path is trivially dead."""
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in model.parameters():
            if not p.any():
                p.copy_(torch.randn(p.shape, generator=g, dtype=p.dtype) * scale)
        conv = model.unet.conv_in.weight
        c_lat = model.cfg.unet.c_lat
        conv[:, c_lat:] = torch.randn(conv[:, c_lat:].shape, generator=g, dtype=conv.dtype) * scale
