"""Training objectives for the generator and discriminator.

Only the illumination-compensation term follows a published formula exactly.
The intensity, identity, structure and adversarial terms use standard forms:
pixel MSE, cosine distance on discriminator features, heatmap MSE and
logit-space binary cross-entropy.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from dataclasses import dataclass, fields

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .model import Discriminator, discriminator
from .vision import ConvParams, conv2d

PERCEPTUAL_SEED = 1234
PERCEPTUAL_CHANNELS = (16, 32, 64, 128)
COSINE_EPS = 1e-8
HEATMAP_SIGMA = 1.5

__all__ = [
    "LossWeights",
    "LossParts",
    "NonFiniteLoss",
    "PerceptualEncoder",
    "build_perceptual_encoder",
    "perceptual_features",
    "stats_distance",
    "illumination_loss",
    "intensity_loss",
    "identity_loss",
    "structure_loss",
    "gaussian_heatmaps",
    "adversarial_losses",
    "total_generator_loss",
    "frozen",
]


class NonFiniteLoss(FloatingPointError):
    def __init__(self, term: str, value: float, iteration: int | None = None):
        self.term = term
        self.value = value
        self.iteration = iteration
        where = f" at iteration {iteration}" if iteration is not None else ""
        super().__init__(f"non-finite loss term {term}={value}{where}")


@dataclass
class LossWeights:
    alpha: float = 1.0  # intensity
    beta: float = 0.1  # identity
    gamma: float = 1.0  # structure
    chi: float = 0.1  # illumination compensation
    kappa: float = 0.01  # adversarial

    def __post_init__(self):
        for f in fields(self):
            v = float(getattr(self, f.name))
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"loss weight {f.name} must be finite and >= 0, got {v}")
            setattr(self, f.name, v)


@dataclass
class LossParts:
    mse: Tensor | float
    id: Tensor | float
    h: Tensor | float
    ic: Tensor | float
    adv: Tensor | float

    def values(self) -> dict[str, float]:
        return {f.name: _scalar(getattr(self, f.name)) for f in fields(self)}


def _scalar(v) -> float:
    return v.item() if isinstance(v, Tensor) else float(v)


@contextmanager
def frozen(params: dict[str, Tensor]):
    """Temporarily stop gradients into ``params``."""
    flags = {k: p.requires_grad for k, p in params.items()}
    for p in params.values():
        p.requires_grad = False
    try:
        yield
    finally:
        for k, p in params.items():
            p.requires_grad = flags[k]


# ------------------------------------------------------------ perceptual encoder


@dataclass
class PerceptualEncoder:
    """Four stride-2 conv+relu stages with fixed random weights."""

    stages: list[ConvParams]
    seed: int = PERCEPTUAL_SEED


def build_perceptual_encoder(seed: int = PERCEPTUAL_SEED,
                             channels: tuple[int, ...] = PERCEPTUAL_CHANNELS) -> PerceptualEncoder:
    rng = np.random.default_rng(seed)
    stages, c_in = [], 3
    for c in channels:
        stages.append(ConvParams.init(rng, c_in, c, 3, stride=2, padding=1, trainable=False))
        c_in = c
    return PerceptualEncoder(stages, seed)


def perceptual_features(img: Tensor, enc: PerceptualEncoder) -> list[Tensor]:
    if img.ndim != 4 or img.shape[1] != 3:
        raise ShapeError(f"perceptual encoder expects (N, 3, H, W), got {img.shape}")
    feats, h = [], img
    for conv in enc.stages:
        h = ad.relu(conv2d(h, conv))
        feats.append(h)
    return feats


def stats_distance(fa: list[Tensor], fb: list[Tensor]) -> Tensor:
    """Per-sample sum over taps of ||mean_a - mean_b||_2 + ||std_a - std_b||_2, shape (N,)."""
    total = None
    for a, b in zip(fa, fb):
        ma, sa = ad.channel_stats(a)
        mb, sb = ad.channel_stats(b)
        term = ad.add(ad.l2_norm(ad.sub(ma, mb), axis=1), ad.l2_norm(ad.sub(sa, sb), axis=1))
        total = term if total is None else ad.add(total, term)
    return total


def illumination_loss(h_hat: Tensor, guide: Tensor, enc: PerceptualEncoder) -> Tensor:
    """Batch mean of the feature-statistics distance between outputs and their guides."""
    if h_hat.shape != guide.shape:
        raise ShapeError(f"illumination_loss shape mismatch: {h_hat.shape} vs {guide.shape}")
    return ad.mean(stats_distance(perceptual_features(h_hat, enc), perceptual_features(guide, enc)))


# ------------------------------------------------------------------ other terms


def intensity_loss(h_hat: Tensor, gt) -> Tensor:
    gt = ad.constant(gt)
    if h_hat.shape != gt.shape:
        raise ShapeError(f"intensity_loss shape mismatch: {h_hat.shape} vs {gt.shape}")
    return ad.mean(ad.square(ad.sub(h_hat, gt)))


def cosine_distance(a: Tensor, b: Tensor) -> Tensor:
    """Batch mean of 1 - cos(a_i, b_i) over rows of (N, D) inputs."""
    dot = ad.sum(ad.mul(a, b), axis=1)
    denom = ad.clamp(ad.mul(ad.l2_norm(a, axis=1), ad.l2_norm(b, axis=1)), COSINE_EPS)
    return ad.mean(ad.sub(1.0, ad.div(dot, denom)))


def identity_loss(h_hat: Tensor, gt, disc: Discriminator) -> Tensor:
    """Cosine distance between discriminator penultimate features of output and target.

    The discriminator is held fixed: gradients reach ``h_hat`` only.
    """
    gt = ad.constant(gt)
    if h_hat.shape != gt.shape:
        raise ShapeError(f"identity_loss shape mismatch: {h_hat.shape} vs {gt.shape}")
    with frozen(disc.parameters()):
        _, feat_fake = discriminator(h_hat, disc)
        _, feat_real = discriminator(Tensor(gt.data), disc)
    return cosine_distance(feat_fake, feat_real)


def structure_loss(pred_hm: Tensor, gt_hm) -> Tensor:
    gt_hm = ad.constant(gt_hm)
    if pred_hm.shape != gt_hm.shape:
        raise ShapeError(f"structure_loss shape mismatch: {pred_hm.shape} vs {gt_hm.shape}")
    return ad.mean(ad.square(ad.sub(pred_hm, gt_hm)))


def gaussian_heatmaps(landmarks: np.ndarray, size: int = 64, image_size: int = 128,
                      sigma: float = HEATMAP_SIGMA) -> np.ndarray:
    """Render (N, K, 2) pixel landmarks (x, y at ``image_size`` scale) as unit-peak Gaussians.

    Pixel centres map between scales as c' = (c + 0.5) * size / image_size - 0.5.
    """
    lm = np.asarray(landmarks, dtype=np.float64)
    squeeze = lm.ndim == 2
    if squeeze:
        lm = lm[None]
    f = size / image_size
    cx = (lm[..., 0] + 0.5) * f - 0.5
    cy = (lm[..., 1] + 0.5) * f - 0.5
    grid = np.arange(size, dtype=np.float64)
    gx = np.exp(-((grid[None, None, :] - cx[..., None]) ** 2) / (2 * sigma**2))
    gy = np.exp(-((grid[None, None, :] - cy[..., None]) ** 2) / (2 * sigma**2))
    maps = gy[..., :, None] * gx[..., None, :]
    return maps[0] if squeeze else maps


def adversarial_losses(d_real: Tensor, d_fake: Tensor) -> tuple[Tensor, Tensor]:
    """(discriminator loss, non-saturating generator loss) from raw logits."""
    d_real, d_fake = ad.constant(d_real), ad.constant(d_fake)
    loss_d = ad.add(ad.mean(ad.softplus(ad.neg(d_real))), ad.mean(ad.softplus(d_fake)))
    loss_adv = ad.mean(ad.softplus(ad.neg(d_fake)))
    return loss_d, loss_adv


def total_generator_loss(parts: LossParts, w: LossWeights) -> Tensor:
    for name, value in parts.values().items():
        if not math.isfinite(value):
            raise NonFiniteLoss(name, value)
    terms = ((w.alpha, parts.mse), (w.beta, parts.id), (w.gamma, parts.h), (w.chi, parts.ic), (w.kappa, parts.adv))
    total = Tensor(0.0)
    for weight, part in terms:
        total = ad.add(total, ad.scale(ad.constant(part), weight))
    return total
