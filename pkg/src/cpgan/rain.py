"""Random illumination style transfer: AdaIN with a VAE over style statistics.

Also holds the parametric shading model used to make non-uniformly lit
inputs from evenly lit faces.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .losses import PerceptualEncoder, perceptual_features, stats_distance
from .vision import ConvParams, DenseParams, conv2d, dense, upsample_nearest

__all__ = [
    "StyleStats",
    "StatsVAE",
    "RainModel",
    "RainConfig",
    "IlluminationField",
    "UntrainedModel",
    "adain",
    "encode_style",
    "vae_roundtrip",
    "rain_decode",
    "rain_train_step",
    "rain_loss",
    "rain_generate",
    "build_rain",
    "train_rain",
    "shade_render",
    "illumination_multiplier",
    "random_field",
]

# Content normalization inside AdaIN uses a much smaller stabilizer than the
# 1e-5 of channel_stats so output statistics track the targets for sigma >= 0.01.
ADAIN_EPS = 1e-8
STD_FLOOR = 1e-6


class UntrainedModel(RuntimeError):
    pass


@dataclass
class StyleStats:
    mean: Tensor  # (N, C)
    std: Tensor  # (N, C)

    def __post_init__(self):
        if self.mean.shape != self.std.shape:
            raise ShapeError(f"style mean {self.mean.shape} and std {self.std.shape} differ")

    def vector(self) -> Tensor:
        return ad.concat([self.mean, self.std], axis=1)


def adain(f_c: Tensor, target: StyleStats, eps: float = ADAIN_EPS) -> Tensor:
    """Re-standardize each content channel, then scale and shift to the target stats."""
    if np.any(target.std.data <= 0):
        raise ValueError("target std must be strictly positive")
    n, c = f_c.shape[:2]
    if target.mean.shape != (n, c):
        raise ShapeError(f"target stats {target.mean.shape} do not match features {(n, c)}")
    mu, sigma = ad.channel_stats(f_c, eps)
    shape = (n, c, 1, 1)
    normed = ad.div(ad.sub(f_c, ad.reshape(mu, shape)), ad.reshape(sigma, shape))
    return ad.add(ad.mul(normed, ad.reshape(target.std, shape)), ad.reshape(target.mean, shape))


def encode_style(style_img: Tensor, enc: PerceptualEncoder) -> StyleStats:
    mu, sigma = ad.channel_stats(perceptual_features(style_img, enc)[-1])
    return StyleStats(mu, sigma)


# ---------------------------------------------------------------------------- VAE


@dataclass
class StatsVAE:
    enc: DenseParams
    enc_mean: DenseParams
    enc_logvar: DenseParams
    dec: DenseParams
    dec_out: DenseParams
    channels: int
    latent: int = 8

    @classmethod
    def init(cls, rng, channels: int, latent: int = 8, hidden: int = 64) -> "StatsVAE":
        return cls(
            DenseParams.init(rng, 2 * channels, hidden),
            DenseParams.init(rng, hidden, latent, gain=0.5),
            DenseParams.init(rng, hidden, latent, gain=0.1),
            DenseParams.init(rng, latent, hidden),
            DenseParams.init(rng, hidden, 2 * channels, gain=0.5),
            channels,
            latent,
        )

    def encode(self, stats: StyleStats) -> tuple[Tensor, Tensor]:
        h = ad.relu(dense(stats.vector(), self.enc))
        return dense(h, self.enc_mean), dense(h, self.enc_logvar)

    def decode(self, z: Tensor) -> StyleStats:
        out = dense(ad.relu(dense(z, self.dec)), self.dec_out)
        c = self.channels
        mean = out[:, :c]
        std = ad.add(ad.softplus(out[:, c:]), STD_FLOOR)
        return StyleStats(mean, std)


def vae_roundtrip(stats: StyleStats, noise, vae: StatsVAE, return_latent: bool = False):
    """Encode, reparameterize with the supplied standard-normal noise, decode."""
    z_mean, z_logvar = vae.encode(stats)
    noise = ad.constant(noise)
    if noise.ndim == 1:
        noise = Tensor(np.broadcast_to(noise.data, z_mean.shape))
    if noise.shape != z_mean.shape:
        raise ShapeError(f"noise shape {noise.shape} != latent shape {z_mean.shape}")
    z = ad.add(z_mean, ad.mul(ad.exp(ad.scale(z_logvar, 0.5)), noise))
    out = vae.decode(z)
    return (out, z_mean, z_logvar) if return_latent else out


def kl_divergence(z_mean: Tensor, z_logvar: Tensor) -> Tensor:
    per = ad.sub(ad.add(ad.square(z_mean), ad.exp(z_logvar)), ad.add(z_logvar, 1.0))
    return ad.scale(ad.mean(ad.sum(per, axis=1)), 0.5)


# ------------------------------------------------------------------------ decoder


def rain_decode(t: Tensor, dec: list[ConvParams]) -> Tensor:
    """Nearest-upsample + conv per stage, relu between stages, sigmoid at the end."""
    h = t
    for i, conv in enumerate(dec):
        h = conv2d(upsample_nearest(h, 2), conv)
        h = ad.sigmoid(h) if i == len(dec) - 1 else ad.relu(h)
    return h


@dataclass
class RainConfig:
    style_weight: float = 10.0
    kl_weight: float = 0.01
    lr: float = 1e-3
    latent: int = 8
    decoder_channels: tuple[int, ...] = (64, 32, 16)
    seed: int = 0


@dataclass
class RainModel:
    vae: StatsVAE
    decoder: list[ConvParams]
    encoder: PerceptualEncoder
    config: RainConfig = field(default_factory=RainConfig)
    trained: bool = False

    def parameters(self) -> dict[str, Tensor]:
        return ad.named_tensors({"vae": self.vae, "decoder": self.decoder})


def build_rain(encoder: PerceptualEncoder, config: RainConfig | None = None) -> RainModel:
    config = config or RainConfig()
    rng = np.random.default_rng(config.seed)
    deep = encoder.stages[-1].weight.shape[0]
    chans = (deep,) + tuple(config.decoder_channels) + (3,)
    decoder = [ConvParams.init(rng, a, b, 3, padding=1, gain=1.0 if b != 3 else 0.5)
               for a, b in zip(chans[:-1], chans[1:])]
    return RainModel(StatsVAE.init(rng, deep, config.latent), decoder, encoder, config)


def rain_loss(model: RainModel, content: Tensor, style: Tensor, noise: np.ndarray) -> dict[str, Tensor]:
    """Content, style and KL terms plus their weighted total for one batch."""
    enc = model.encoder
    f_c = perceptual_features(content, enc)[-1]
    style_feats = perceptual_features(style, enc)
    s_mu, s_sigma = ad.channel_stats(style_feats[-1])
    target, z_mean, z_logvar = vae_roundtrip(StyleStats(s_mu, s_sigma), noise, model.vae, return_latent=True)
    t = adain(f_c, target)
    stylized = rain_decode(t, model.decoder)
    out_feats = perceptual_features(stylized, enc)
    content_loss = ad.mean(ad.square(ad.sub(out_feats[-1], t)))
    style_loss = ad.mean(stats_distance(out_feats, style_feats))
    kl = kl_divergence(z_mean, z_logvar)
    cfg = model.config
    total = ad.add(ad.add(content_loss, ad.scale(style_loss, cfg.style_weight)), ad.scale(kl, cfg.kl_weight))
    return {"content": content_loss, "style": style_loss, "kl": kl, "total": total}


def rain_train_step(model: RainModel, content, style, opt: ad.Adam, rng: np.random.Generator) -> dict[str, float]:
    """One Adam step on decoder and VAE; the perceptual encoder stays fixed."""
    content, style = ad.constant(content), ad.constant(style)
    noise = rng.standard_normal((content.shape[0], model.vae.latent))
    with ad.Tape() as tape:
        parts = rain_loss(model, content, style, noise)
    tape.backward(parts["total"])
    opt.step()
    model.trained = True
    return {k: v.item() for k, v in parts.items()}


def rain_generate(model: RainModel, content, seed: int, require_trained: bool = True) -> np.ndarray:
    """Stylize ``content`` with statistics decoded from seeded standard-normal noise."""
    if require_trained and not model.trained:
        raise UntrainedModel("RaIN model has not been trained")
    content = ad.constant(content)
    z = np.random.default_rng(seed).standard_normal((content.shape[0], model.vae.latent))
    stats = model.vae.decode(Tensor(z))
    t = adain(perceptual_features(content, model.encoder)[-1], stats)
    return rain_decode(t, model.decoder).data


def train_rain(contents: np.ndarray, steps: int, seed: int = 0, batch_size: int = 4,
               config: RainConfig | None = None, encoder: PerceptualEncoder | None = None):
    """Fit RaIN on a corpus of evenly lit images; styles are randomly shaded corpus images.

    Returns the model and the per-step loss components.
    """
    from .losses import build_perceptual_encoder

    contents = np.asarray(contents, dtype=np.float64)
    config = replace(config or RainConfig(), seed=seed)
    model = build_rain(encoder or build_perceptual_encoder(), config)
    opt = ad.Adam(model.parameters(), lr=config.lr)
    rng = np.random.default_rng([seed, 11])
    m = len(contents)
    history = []
    for _ in range(steps):
        content = contents[rng.choice(m, batch_size, replace=m < batch_size)]
        style = random_styles(contents[rng.choice(m, batch_size, replace=m < batch_size)], rng)
        history.append(rain_train_step(model, content, style, opt, rng))
    return model, history


def random_styles(images: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Shade each (3, H, W) image with its own random illumination field."""
    h, w = images.shape[-2:]
    return np.stack([shade_render(img, random_field(rng, w, h)) for img in images])


# ---------------------------------------------------------------------- shading


@dataclass
class IlluminationField:
    ambient: float = 1.0  # [0.3, 1.0]
    ramp_gain: float = 0.0  # [0, 0.7]
    ramp_dir: tuple[float, float] = (1.0, 0.0)  # unit vector in (x, y)
    spot_gain: float = 0.0  # [-0.5, 0.5]
    spot_center: tuple[float, float] = (0.0, 0.0)  # pixels
    spot_radius: float = 0.4  # fraction of width, [0.2, 0.6]
    gamma: float = 1.0  # [0.7, 1.4]

    def validate(self, width: int, height: int) -> None:
        checks = [
            ("ambient", self.ambient, 0.3, 1.0),
            ("ramp_gain", self.ramp_gain, 0.0, 0.7),
            ("spot_gain", self.spot_gain, -0.5, 0.5),
            ("spot_radius", self.spot_radius, 0.2, 0.6),
            ("gamma", self.gamma, 0.7, 1.4),
            ("spot_center.x", self.spot_center[0], 0.0, width - 1),
            ("spot_center.y", self.spot_center[1], 0.0, height - 1),
        ]
        for name, v, lo, hi in checks:
            if not lo <= v <= hi:
                raise ValueError(f"illumination field {name}={v} outside [{lo}, {hi}]")
        if abs(np.hypot(*self.ramp_dir) - 1.0) > 1e-9:
            raise ValueError(f"ramp_dir must be a unit vector, got {self.ramp_dir}")


def illumination_multiplier(field: IlluminationField, height: int, width: int) -> np.ndarray:
    """Clamped (H, W) gain map: ambient + directional ramp + Gaussian spotlight."""
    xs = np.arange(width, dtype=np.float64)
    ys = np.arange(height, dtype=np.float64)
    px, py = np.meshgrid(xs, ys)
    xn = (2 * px + 1) / width - 1.0
    yn = (2 * py + 1) / height - 1.0
    dx, dy = field.ramp_dir
    sigma = field.spot_radius * width
    d2 = (px - field.spot_center[0]) ** 2 + (py - field.spot_center[1]) ** 2
    m = field.ambient + field.ramp_gain * (dx * xn + dy * yn) + field.spot_gain * np.exp(-d2 / (2 * sigma**2))
    return np.clip(m, 0.05, 2.0)


def shade_render(img: np.ndarray, field: IlluminationField) -> np.ndarray:
    """Apply the field to a (C, H, W) or (N, C, H, W) image in [0, 1]."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[-2:]
    field.validate(w, h)
    lit = np.clip(img * illumination_multiplier(field, h, w), 0.0, 1.0)
    return lit if field.gamma == 1.0 else lit**field.gamma


def random_field(rng: np.random.Generator, width: int = 128, height: int = 128) -> IlluminationField:
    angle = rng.uniform(0, 2 * np.pi)
    return IlluminationField(
        ambient=rng.uniform(0.3, 1.0),
        ramp_gain=rng.uniform(0.0, 0.7),
        ramp_dir=(float(np.cos(angle)), float(np.sin(angle))),
        spot_gain=rng.uniform(-0.5, 0.5),
        spot_center=(rng.uniform(0, width - 1), rng.uniform(0, height - 1)),
        spot_radius=rng.uniform(0.2, 0.6),
        gamma=rng.uniform(0.7, 1.4),
    )
