import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cpgan.metrics import psnr, ssim, to_gray
from oracles import psnr_loops, ssim_loops

image_pairs = arrays(np.float64, (2, 3, 14, 13), elements=st.floats(0, 1))


def test_psnr_values():
    a = np.zeros((3, 4, 4))
    assert psnr(a, a) == math.inf
    assert psnr(a, np.ones_like(a)) == 0.0
    assert psnr(a, np.full_like(a, 0.1)) == pytest.approx(20.0, abs=1e-12)
    with pytest.raises(ValueError):
        psnr(a, a[:2])


@given(image_pairs)
def test_psnr_matches_loops(pair):
    a, b = pair
    ref = psnr_loops(a, b)
    assert psnr(a, b) == ref or abs(psnr(a, b) - ref) < 1e-8


@given(image_pairs)
def test_ssim_matches_loops(pair):
    a, b = pair
    assert abs(ssim(a, b) - ssim_loops(a, b)) < 1e-8


def test_ssim_matches_loops_on_face_sized_images(rng):
    a = rng.uniform(0, 1, (3, 40, 40))
    b = np.clip(a + rng.normal(0, 0.1, a.shape), 0, 1)
    assert abs(ssim(a, b) - ssim_loops(a, b)) < 1e-8


def test_ssim_identical_is_one(rng):
    a = rng.uniform(0, 1, (3, 20, 20))
    assert ssim(a, a) == 1.0


def test_ssim_inverted_checkerboard_is_low():
    board = (np.indices((32, 32)).sum(axis=0) // 4 % 2).astype(float)
    img = np.stack([board] * 3)
    assert ssim(img, 1 - img) < 0.5


def test_ssim_window_guard():
    with pytest.raises(ValueError):
        ssim(np.zeros((3, 8, 8)), np.zeros((3, 8, 8)))


def test_gray_uses_luma_weights():
    img = np.stack([np.full((2, 2), v) for v in (1.0, 0.0, 0.0)])
    np.testing.assert_allclose(to_gray(img), 0.299)
