import csv

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_streams, small_model_config
from tryon_diffusion.conditioning import compose_agnostic
from tryon_diffusion.data import TryOnSample
from tryon_diffusion.diffusion import NoiseSchedule
from tryon_diffusion.errors import ConfigurationError, TrainingError
from tryon_diffusion.model import TryOnModel
from tryon_diffusion.training import (
    IMAGE,
    VIDEO,
    ImageDataset,
    JointTrainConfig,
    SpatialTransform,
    VideoDataset,
    augment,
    joint_sample,
    lr_factor,
    make_state,
    parameter_checksum,
    train,
    train_step,
)


def _samples(n=2, frames=6):
    out = []
    for i in range(n):
        s = random_streams(frames, seed=i)
        out.append(TryOnSample(s["video"], s["agnostic"], s["mask"], s["pose"], s["cloth"],
                               s["cloth_mask"], name=f"s{i}"))
    return out


def test_config_validation():
    with pytest.raises(ValueError):
        JointTrainConfig(image_threshold=1.5)
    with pytest.raises(ValueError):
        JointTrainConfig(mode="alternating")
    with pytest.raises(ValueError):
        JointTrainConfig(garment_encoder_mode="cross")
    cfg = JointTrainConfig(mode="two-stage", total_steps=10)
    assert [cfg.threshold_at(s) for s in (0, 4, 5, 9)] == [1.0, 1.0, 0.0, 0.0]


@pytest.mark.parametrize("lam", [0.0, 0.1, 0.5, 0.9, 1.0])
def test_image_fraction_follows_threshold(lam):
    ds = _samples()
    cfg = JointTrainConfig(image_threshold=lam, frames=2, sample_rate=1, augment=False)
    rng = np.random.default_rng(0)
    kinds = [joint_sample(ImageDataset(ds), VideoDataset(ds), cfg, rng).kind for _ in range(2000)]
    frac = kinds.count(IMAGE) / len(kinds)
    assert abs(frac - lam) < 0.04
    if lam in (0.0, 1.0):
        assert frac == lam


def test_image_batch_has_one_garment_per_frame_and_video_one_garment():
    ds = _samples()
    rng = np.random.default_rng(1)
    img = joint_sample(ImageDataset(ds), VideoDataset(ds), JointTrainConfig(1.0, frames=3, augment=False), rng)
    assert img.kind == IMAGE and img.temporal_frozen and img.cloth.shape[0] == 3 and len(img.sources) == 3
    vid = joint_sample(ImageDataset(ds), VideoDataset(ds), JointTrainConfig(0.0, frames=3, sample_rate=2,
                                                                            augment=False), rng)
    assert vid.kind == VIDEO and not vid.temporal_frozen and vid.cloth.shape[0] == 1 and len(vid) == 3


def test_video_clip_uses_sample_rate():
    ds = _samples(1, frames=7)
    ds[0].video[:, 0, 0, 0] = torch.arange(7.0)
    clip = VideoDataset(ds).draw(np.random.default_rng(0), frames=3, sample_rate=3)
    assert clip["video"][:, 0, 0, 0].tolist() == [0.0, 3.0, 6.0]
    with pytest.raises(ConfigurationError):
        VideoDataset(ds).draw(np.random.default_rng(0), frames=4, sample_rate=3)


def test_empty_dataset_for_selected_kind_fails():
    with pytest.raises(ConfigurationError):
        joint_sample(ImageDataset([]), VideoDataset(_samples()), JointTrainConfig(1.0, frames=2),
                     np.random.default_rng(0))


def test_transform_identity_and_flip():
    x = torch.arange(24.0).reshape(1, 2, 3, 4)
    assert torch.equal(SpatialTransform().apply(x), x)
    assert torch.equal(SpatialTransform(flip=True).apply(x), x.flip(-1))
    shifted = SpatialTransform(shift=(0.0, 0.25)).apply(x)
    assert torch.equal(shifted[..., 1:], x[..., :-1]) and not shifted[..., 0].any()


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_augmentation_keeps_streams_aligned(seed):
    g = torch.Generator().manual_seed(seed)
    video = torch.rand(2, 3, 16, 16, generator=g) * 2 - 1
    mask = (torch.rand(2, 1, 16, 16, generator=g) > 0.5).float()
    out = augment({"video": video, "mask": mask, "agnostic": compose_agnostic(video, mask)},
                  np.random.default_rng(seed))
    assert set(out["mask"].unique().tolist()) <= {0.0, 1.0}
    assert torch.equal(out["agnostic"], compose_agnostic(out["video"], out["mask"]))


def test_augmentation_is_spatial_only():
    rng = np.random.default_rng(0)
    video = torch.rand(1, 3, 16, 16) * 2 - 1
    for _ in range(20):
        t = SpatialTransform.draw(rng)
        out = t.apply(video)
        values = set(video.flatten().tolist()) | {0.0}
        assert set(out.flatten().tolist()) <= values


def _model_and_data():
    model = TryOnModel(small_model_config())
    ds = _samples()
    return model, ImageDataset(ds), VideoDataset(ds)


def test_temporal_parameters_frozen_on_image_steps():
    model, img, vid = _model_and_data()
    sched = NoiseSchedule(1000)
    cfg = JointTrainConfig(0.5, frames=2, lr=1e-3, sample_rate=1, augment=False)
    state = make_state(model, cfg)
    rng = np.random.default_rng(0)
    before = parameter_checksum(model.temporal_parameters())
    kinds = []
    for step in range(8):
        batch = joint_sample(img, vid, cfg, rng, step)
        _, state = train_step(model, batch, sched, state)
        now = parameter_checksum(model.temporal_parameters())
        if batch.kind == IMAGE:
            assert now == before
        else:
            assert now != before
        before = now
        kinds.append(batch.kind)
    assert IMAGE in kinds and VIDEO in kinds


def test_non_finite_loss_aborts_with_context():
    model, img, vid = _model_and_data()
    with torch.no_grad():
        model.unet.conv_out.bias.fill_(float("nan"))
    cfg = JointTrainConfig(1.0, frames=2, augment=False)
    batch = joint_sample(img, vid, cfg, np.random.default_rng(0))
    with pytest.raises(TrainingError, match="image batch"):
        train_step(model, batch, NoiseSchedule(100), make_state(model, cfg))


def test_train_writes_loss_csv_and_checkpoints(tmp_path):
    model, img, vid = _model_and_data()
    cfg = JointTrainConfig(0.5, frames=2, lr=1e-3, total_steps=5, sample_rate=1, ckpt_every=2)
    saved = []
    hist = train(model, img, vid, cfg, NoiseSchedule(1000), out_dir=tmp_path,
                 save=lambda path, step: saved.append((path.name, step)))
    assert [h[0] for h in hist] == [1, 2, 3, 4, 5]
    rows = list(csv.reader((tmp_path / "loss.csv").open()))
    assert rows[0] == ["step", "kind", "loss"] and len(rows) == 6
    assert [s for _, s in saved] == [2, 4, 5]
    assert all(p.requires_grad for p in model.temporal_parameters())


def test_cosine_lr_schedule():
    cfg = JointTrainConfig(lr=1.0, total_steps=10, lr_schedule="cosine", warmup_steps=2)
    factors = [lr_factor(cfg, s) for s in range(10)]
    assert factors[:3] == [0.5, 1.0, 1.0]
    assert all(a >= b for a, b in zip(factors[1:], factors[2:]))
    assert lr_factor(JointTrainConfig(), 123) == 1.0
    model = torch.nn.Linear(2, 1)
    state = make_state(model, cfg)
    lrs = []
    for _ in range(4):
        lrs.append(state.optimizer.param_groups[0]["lr"])
        model(torch.ones(1, 2)).sum().backward()
        state.optimizer.step()
        state.scheduler.step()
    assert lrs == pytest.approx(factors[:4])
    with pytest.raises(ValueError):
        JointTrainConfig(lr_schedule="step")
