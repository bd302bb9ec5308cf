import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cpgan import autodiff as ad
from cpgan.autodiff import Tensor
from cpgan.losses import build_perceptual_encoder
from cpgan.rain import (
    IlluminationField,
    StyleStats,
    UntrainedModel,
    adain,
    build_rain,
    encode_style,
    illumination_multiplier,
    rain_decode,
    rain_generate,
    rain_loss,
    rain_train_step,
    random_field,
    shade_render,
    train_rain,
    vae_roundtrip,
)

ENC = build_perceptual_encoder()


def stats(mean, std):
    return StyleStats(Tensor(np.atleast_2d(mean)), Tensor(np.atleast_2d(std)))


def channel_moments(x):
    return x.mean(axis=(2, 3)), x.std(axis=(2, 3))


def test_adain_standardized_input_takes_target_stats():
    x = np.array([-1.0, 1.0, -1.0, 1.0]).reshape(1, 1, 2, 2)
    mu, sd = channel_moments(adain(Tensor(x), stats([2.0], [3.0])).data)
    assert abs(mu[0, 0] - 2.0) < 1e-4 and abs(sd[0, 0] - 3.0) < 1e-4


def test_adain_two_pixel_hand_case():
    # mean 2, variance 1: normalized values -/+ 1/sqrt(1 + eps)
    x = np.array([1.0, 3.0]).reshape(1, 1, 1, 2)
    eps = 1e-8
    z = 1 / math.sqrt(1 + eps)
    out = adain(Tensor(x), stats([0.5], [4.0]), eps=eps).data.ravel()
    np.testing.assert_allclose(out, [0.5 - 4 * z, 0.5 + 4 * z], rtol=0, atol=1e-10)


def test_adain_constant_input_returns_target_mean():
    out = adain(Tensor(np.full((1, 2, 3, 3), 5.0)), stats([1.5, -2.0], [0.7, 3.0])).data
    np.testing.assert_allclose(out[0, 0], 1.5, atol=1e-12)
    np.testing.assert_allclose(out[0, 1], -2.0, atol=1e-12)


@given(
    st.integers(0, 2**32 - 1),
    st.floats(0.01, 5.0),
    arrays(np.float64, (2, 3), elements=st.floats(-5, 5)),
    arrays(np.float64, (2, 3), elements=st.floats(0.05, 5)),
)
def test_adain_output_matches_target_stats(seed, scale, t_mean, t_std):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 3, 6, 6))
    x = (x - x.mean(axis=(2, 3), keepdims=True)) / x.std(axis=(2, 3), keepdims=True) * scale + rng.normal(0, 3, (2, 3, 1, 1))
    mu, sd = channel_moments(adain(Tensor(x), stats(t_mean, t_std)).data)
    assert np.all(np.abs(mu - t_mean) < 1e-4)
    assert np.all(np.abs(sd - t_std) < 1e-3)


@given(st.integers(0, 2**32 - 1))
def test_adain_is_idempotent_in_stats(seed):
    rng = np.random.default_rng(seed)
    s = stats(rng.standard_normal(4), rng.uniform(0.1, 2, 4))
    once = adain(Tensor(rng.standard_normal((1, 4, 5, 5))), s)
    twice = adain(once, s)
    for a, b in zip(channel_moments(once.data), channel_moments(twice.data)):
        assert np.all(np.abs(a - b) < 1e-4)


def test_adain_rejects_non_positive_std():
    with pytest.raises(ValueError):
        adain(Tensor(np.ones((1, 1, 2, 2))), stats([0.0], [0.0]))


def test_encode_style_is_deterministic_and_256_long(rng):
    img = Tensor(rng.uniform(0, 1, (1, 3, 128, 128)))
    a, b = encode_style(img, ENC), encode_style(img, ENC)
    assert np.array_equal(a.vector().data, b.vector().data)
    assert a.vector().shape == (1, 256)


def test_brightening_raises_most_channel_means(rng):
    raised = []
    for _ in range(100):
        img = rng.uniform(0, 1, (1, 3, 32, 32))
        before = encode_style(Tensor(img), ENC).mean.data
        after = encode_style(Tensor(np.clip(img * 1.2, 0, 1)), ENC).mean.data
        raised.append(np.mean(after > before))
    assert np.mean(raised) >= 0.6


def test_vae_output_std_positive_and_zero_noise_deterministic(rng):
    model = build_rain(ENC)
    s = stats(rng.normal(0, 50, (3, 128)), rng.uniform(0, 50, (3, 128)))
    a = vae_roundtrip(s, np.zeros(8), model.vae)
    b = vae_roundtrip(s, np.zeros((3, 8)), model.vae)
    assert np.all(a.std.data > 0)
    np.testing.assert_array_equal(a.mean.data, b.mean.data)
    with pytest.raises(ad.ShapeError):
        vae_roundtrip(s, np.zeros((2, 8)), model.vae)


def test_rain_decode_shape_and_range(rng):
    model = build_rain(ENC)
    out = rain_decode(Tensor(rng.standard_normal((2, 128, 8, 8))), model.decoder).data
    assert out.shape == (2, 3, 128, 128)
    assert out.min() >= 0 and out.max() <= 1


def test_rain_step_losses_finite_and_encoder_frozen(rng):
    model = build_rain(ENC)
    before = [s.weight.data.copy() for s in ENC.stages]
    opt = ad.Adam(model.parameters(), lr=1e-3)
    content = rng.uniform(0, 1, (2, 3, 32, 32))
    for _ in range(3):
        parts = rain_train_step(model, content, content * 0.5, opt, rng)
        assert all(math.isfinite(v) and v >= 0 for v in parts.values())
    assert all(np.array_equal(b, s.weight.data) for b, s in zip(before, ENC.stages))


def test_rain_loss_components(rng):
    model = build_rain(ENC)
    parts = rain_loss(model, Tensor(rng.uniform(0, 1, (1, 3, 32, 32))), Tensor(rng.uniform(0, 1, (1, 3, 32, 32))),
                      np.zeros((1, 8)))
    assert set(parts) == {"content", "style", "kl", "total"}
    cfg = model.config
    expected = parts["content"].item() + cfg.style_weight * parts["style"].item() + cfg.kl_weight * parts["kl"].item()
    assert parts["total"].item() == pytest.approx(expected, rel=1e-12)


def test_rain_generate_requires_training_and_is_seeded(rng):
    contents = rng.uniform(0, 1, (4, 3, 32, 32))
    with pytest.raises(UntrainedModel):
        rain_generate(build_rain(ENC), contents[:1], 0)
    model, history = train_rain(contents, 2, seed=0, batch_size=2)
    assert len(history) == 2
    a = rain_generate(model, contents[:1], 5)
    assert a.tobytes() == rain_generate(model, contents[:1], 5).tobytes()
    assert np.abs(a - rain_generate(model, contents[:1], 6)).max() > 1e-3


def test_identity_field_is_exact_identity(rng):
    img = rng.uniform(0, 1, (3, 20, 24))
    np.testing.assert_array_equal(shade_render(img, IlluminationField()), img)


def test_half_ambient_halves_every_pixel(rng):
    img = rng.uniform(0, 1, (3, 20, 24))
    np.testing.assert_array_equal(shade_render(img, IlluminationField(ambient=0.5)), img * 0.5)


def test_full_field_matches_formula():
    f = IlluminationField(ambient=0.6, ramp_gain=0.5, ramp_dir=(0.6, 0.8), spot_gain=0.4,
                          spot_center=(5.0, 7.0), spot_radius=0.3, gamma=1.0)
    h, w = 12, 16
    out = shade_render(np.ones((3, h, w)), f)
    sigma = 0.3 * w
    for y in range(h):
        for x in range(w):
            xn, yn = (2 * x + 1) / w - 1, (2 * y + 1) / h - 1
            m = 0.6 + 0.5 * (0.6 * xn + 0.8 * yn) + 0.4 * math.exp(-((x - 5) ** 2 + (y - 7) ** 2) / (2 * sigma**2))
            assert abs(out[0, y, x] - min(max(m, 0.05), 1.0)) < 1e-10


def test_multiplier_is_clamped():
    f = IlluminationField(ambient=0.3, ramp_gain=0.7, ramp_dir=(1.0, 0.0), spot_gain=-0.5, spot_center=(0.0, 5.0))
    m = illumination_multiplier(f, 10, 10)
    assert m.min() == 0.05


@pytest.mark.parametrize("bad", [dict(ambient=0.1), dict(gamma=2.0), dict(ramp_dir=(1.0, 1.0)),
                                 dict(spot_center=(-1.0, 0.0))])
def test_field_ranges_enforced(bad):
    with pytest.raises(ValueError):
        shade_render(np.ones((3, 8, 8)), IlluminationField(**bad))


@given(st.integers(0, 2**32 - 1))
def test_random_fields_are_valid(seed):
    f = random_field(np.random.default_rng(seed), 32, 32)
    out = shade_render(np.full((3, 32, 32), 0.5), f)
    assert out.min() >= 0 and out.max() <= 1
