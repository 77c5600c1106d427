import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from tryon_diffusion.conditioning import POSE_CHANNELS, GarmentEmbedder, PoseEncoder, compose_agnostic
from tryon_diffusion.errors import ShapeError


def test_pose_encoder_layout():
    enc = PoseEncoder(32, factor=8)
    convs = [m for m in enc.trunk if isinstance(m, torch.nn.Conv2d)]
    assert [c.out_channels for c in convs] == list(POSE_CHANNELS)
    assert all(c.kernel_size == (4, 4) and c.stride == (2, 2) for c in convs)
    assert enc(torch.zeros(2, 3, 64, 48)).shape == (2, 32, 8, 6)


def test_pose_encoder_output_is_zero_at_init():
    enc = PoseEncoder(8, factor=4)
    out = enc(torch.randn(3, 3, 32, 32))
    assert out.shape == (3, 8, 8, 8)
    assert not out.any()
    assert enc.trunk_features(torch.randn(1, 3, 32, 32)).abs().sum() > 0


def test_pose_encoder_shape_errors():
    enc = PoseEncoder(8, factor=4)
    with pytest.raises(ShapeError):
        enc(torch.zeros(1, 3, 24, 32))
    with pytest.raises(ShapeError):
        enc(torch.zeros(1, 1, 32, 32))
    with pytest.raises(ShapeError):
        PoseEncoder(8, factor=32)(torch.zeros(1, 3, 48, 48))


def test_garment_embedder_is_seeded_and_linear():
    a, b = GarmentEmbedder(16, seed=0), GarmentEmbedder(16, seed=0)
    x, y = torch.randn(2, 3, 32, 32), torch.randn(2, 3, 32, 32)
    assert torch.equal(a(x), b(x))
    assert not torch.equal(a(x), GarmentEmbedder(16, seed=1)(x))
    torch.testing.assert_close(a(x + 2 * y), a(x) + 2 * a(y), atol=1e-5, rtol=1e-5)
    assert a(x[0]).shape == (1, 16)
    assert "matrix" not in a.state_dict()
    with pytest.raises(ShapeError):
        a(torch.zeros(1, 3, 20, 32))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 1000), fill=st.floats(-1, 1))
def test_compose_agnostic_preserves_unmasked_pixels(seed, fill):
    g = torch.Generator().manual_seed(seed)
    video = torch.rand(2, 3, 8, 8, generator=g) * 2 - 1
    mask = (torch.rand(2, 1, 8, 8, generator=g) > 0.5).float()
    out = compose_agnostic(video, mask, fill)
    keep = (mask == 0).expand_as(video)
    assert torch.equal(out[keep], video[keep])
    assert torch.all(out[~keep] == fill)


def test_compose_agnostic_soft_mask_blends():
    video = torch.ones(1, 3, 2, 2)
    mask = torch.full((1, 1, 2, 2), 0.25)
    torch.testing.assert_close(compose_agnostic(video, mask, fill=-1.0), torch.full_like(video, 0.5))


def test_compose_agnostic_shape_checks():
    with pytest.raises(ShapeError):
        compose_agnostic(torch.zeros(2, 3, 4, 4), torch.zeros(1, 1, 4, 4))
    with pytest.raises(ShapeError):
        compose_agnostic(torch.zeros(2, 3, 4, 4), torch.zeros(2, 3, 4, 4))
