import numpy as np
import pytest
import scipy.linalg
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from tryon_diffusion.errors import ShapeError
from tryon_diffusion.metrics import (
    RandomConv3DExtractor,
    frechet_distance,
    lpips,
    masked_ssim,
    sqrtm_psd,
    ssim,
    ssim_map,
    vfid,
    video_ssim,
)


def frechet_oracle(mu1, s1, mu2, s2):
    covmean = scipy.linalg.sqrtm(s1 @ s2).real
    return float(np.sum((mu1 - mu2) ** 2) + np.trace(s1 + s2 - 2 * covmean))


def _spd(rng, d):
    a = rng.standard_normal((d, d))
    return a @ a.T / d + 0.1 * np.eye(d)


def test_ssim_of_identical_images_is_one():
    x = torch.rand(3, 32, 32) * 2 - 1
    assert ssim(x, x) == pytest.approx(1.0, abs=1e-12)
    assert masked_ssim(x, x, torch.ones(1, 32, 32)) == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(a=st.floats(-1, 1), b=st.floats(-1, 1))
def test_constant_image_ssim_closed_form(a, b):
    c1 = (0.01 * 2.0) ** 2
    expected = (2 * a * b + c1) / (a * a + b * b + c1)
    got = ssim(np.full((3, 24, 24), a), np.full((3, 24, 24), b))
    assert abs(got - expected) < 1e-8


def test_ssim_is_symmetric_and_bounded():
    rng = np.random.default_rng(0)
    x, y = rng.uniform(-1, 1, (3, 20, 20)), rng.uniform(-1, 1, (3, 20, 20))
    assert ssim(x, y) == pytest.approx(ssim(y, x), abs=1e-12)
    assert -1 <= ssim(x, y) < 1
    assert ssim(x, x + 0.05 * rng.standard_normal(x.shape)) > ssim(x, y)


def test_ssim_map_matches_skimage_convention():
    skm = pytest.importorskip("skimage.metrics")
    rng = np.random.default_rng(1)
    x = rng.uniform(0, 1, (40, 40))
    y = np.clip(x + 0.1 * rng.standard_normal(x.shape), 0, 1)
    _, ref = skm.structural_similarity(x, y, data_range=1.0, gaussian_weights=True, sigma=1.5,
                                       use_sample_covariance=False, full=True)
    np.testing.assert_allclose(ssim_map(x, y, data_range=1.0), ref, atol=1e-10)


def test_masked_ssim_uses_only_masked_pixels():
    x = np.zeros((1, 24, 24))
    y = x.copy()
    y[:, :, 12:] = np.random.default_rng(0).uniform(-1, 1, (1, 24, 12))
    mask = np.zeros((24, 24))
    mask[:, :4] = 1
    assert masked_ssim(x, y, mask) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValueError):
        masked_ssim(x, y, np.zeros((24, 24)))


def test_shape_mismatch():
    with pytest.raises(ShapeError):
        ssim(np.zeros((3, 8, 8)), np.zeros((3, 8, 9)))
    with pytest.raises(ShapeError):
        video_ssim(torch.zeros(2, 3, 8, 8), torch.zeros(3, 3, 8, 8))


@settings(max_examples=20, deadline=None)
@given(d=st.integers(1, 6), seed=st.integers(0, 1000))
def test_frechet_matches_scipy_oracle(d, seed):
    rng = np.random.default_rng(seed)
    mu1, mu2 = rng.standard_normal(d), rng.standard_normal(d)
    s1, s2 = _spd(rng, d), _spd(rng, d)
    assert frechet_distance(mu1, s1, mu2, s2) == pytest.approx(frechet_oracle(mu1, s1, mu2, s2), rel=1e-8, abs=1e-9)


def test_frechet_of_identical_gaussians_is_zero():
    rng = np.random.default_rng(0)
    s = _spd(rng, 5)
    assert frechet_distance(np.ones(5), s, np.ones(5), s) <= 1e-9


def test_frechet_regularizes_singular_covariance():
    with pytest.warns(RuntimeWarning):
        d = frechet_distance(np.zeros(2), np.zeros((2, 2)), np.ones(2), np.zeros((2, 2)))
    assert d == pytest.approx(2.0, abs=1e-6)


def test_sqrtm_psd():
    s = _spd(np.random.default_rng(3), 4)
    r = sqrtm_psd(s)
    np.testing.assert_allclose(r @ r, s, atol=1e-12)


def test_vfid_identical_sets_is_zero():
    clips = [torch.rand(4, 3, 16, 16, generator=torch.Generator().manual_seed(i)) * 2 - 1 for i in range(6)]
    ext = RandomConv3DExtractor(dim=4, seed=0)
    assert vfid(clips, clips, ext) <= 1e-6


def test_vfid_recovers_analytic_gaussian_distance():
    rng = np.random.default_rng(0)
    d = 4
    mu1, mu2 = np.zeros(d), np.full(d, 0.5)
    s1, s2 = _spd(rng, d), _spd(rng, d)
    fa = rng.multivariate_normal(mu1, s1, 20_000)
    fb = rng.multivariate_normal(mu2, s2, 20_000)
    expected = frechet_oracle(mu1, s1, mu2, s2)
    assert vfid(fa, fb) == pytest.approx(expected, rel=0.05)


def test_vfid_warns_on_few_clips():
    with pytest.warns(RuntimeWarning):
        vfid(np.random.default_rng(0).standard_normal((3, 8)), np.random.default_rng(1).standard_normal((3, 8)))


def test_extractor_is_seeded_and_sensitive_to_motion():
    a, b = RandomConv3DExtractor(8, seed=0), RandomConv3DExtractor(8, seed=0)
    clip = torch.rand(4, 3, 16, 16, generator=torch.Generator().manual_seed(0))
    assert np.array_equal(a(clip), b(clip))
    assert a.name == "random-conv3d-d8-s0"
    assert not np.allclose(a(clip), a(clip.flip(0)))
    assert not np.allclose(a(clip), RandomConv3DExtractor(8, seed=1)(clip))


def test_lpips_requires_network():
    with pytest.raises(NotImplementedError):
        lpips(np.zeros(3), np.zeros(3))
    assert lpips(1, 2, network=lambda a, b: abs(a - b)) == 1.0
