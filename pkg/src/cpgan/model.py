"""Copy/Paste generator, guided encoder, heatmap head and discriminator."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .vision import (
    AttentionParams,
    ConvParams,
    DenseParams,
    LocParams,
    ResidualParams,
    avg_pool2d,
    channel_attention,
    conv2d,
    conv_transpose2d,
    dense,
    residual_block,
    stn,
)

__all__ = [
    "CopyBlockParams",
    "GeneratorConfig",
    "DiscriminatorConfig",
    "Generator",
    "Discriminator",
    "copy_block",
    "paste_block",
    "internal_cpnet",
    "external_cpnet",
    "guided_encoder",
    "generator",
    "heatmap_head",
    "discriminator",
    "build_generator",
    "build_discriminator",
]


@dataclass
class CopyBlockParams:
    w_theta: Tensor  # (C, C_e)
    w_psi: Tensor  # (C, C_e)
    w_zeta: Tensor  # (C, C)

    @classmethod
    def init(cls, rng, channels: int) -> "CopyBlockParams":
        ce = max(1, channels // 2)
        s = 1.0 / np.sqrt(channels)
        return cls(
            Tensor(rng.standard_normal((channels, ce)) * s, requires_grad=True),
            Tensor(rng.standard_normal((channels, ce)) * s, requires_grad=True),
            Tensor(rng.standard_normal((channels, channels)) * 0.5 * s, requires_grad=True),
        )


def _positions(x: Tensor) -> Tensor:
    """(N, C, H, W) -> (N, H*W, C)."""
    n, c, h, w = x.shape
    return ad.transpose(ad.reshape(x, (n, c, h * w)), (0, 2, 1))


def _standardize(x: Tensor) -> Tensor:
    mu, sigma = ad.channel_stats(x)
    n, c = mu.shape
    return ad.div(ad.sub(x, ad.reshape(mu, (n, c, 1, 1))), ad.reshape(sigma, (n, c, 1, 1)))


def copy_block(f_c: Tensor, f_g: Tensor, p: CopyBlockParams, return_attention: bool = False):
    """Softmax-weighted sum of projected guided positions for every content position.

    Both inputs are standardized per channel for the attention logits; the
    values are projections of the raw guided features.
    """
    n, c, h, w = f_c.shape
    if f_g.ndim != 4 or f_g.shape[:2] != (n, c):
        raise ShapeError(f"copy_block channel mismatch: {f_c.shape} vs {f_g.shape}")
    q = ad.matmul(_positions(_standardize(f_c)), p.w_theta)
    k = ad.matmul(_positions(_standardize(f_g)), p.w_psi)
    attn = ad.softmax(ad.matmul(q, ad.transpose(k, (0, 2, 1))), axis=-1)
    v = ad.matmul(_positions(f_g), p.w_zeta)
    out = ad.reshape(ad.transpose(ad.matmul(attn, v), (0, 2, 1)), (n, c, h, w))
    return (out, attn) if return_attention else out


def paste_block(refined: Tensor, skip: Tensor) -> Tensor:
    if refined.shape != skip.shape:
        raise ShapeError(f"paste_block shape mismatch: {refined.shape} vs {skip.shape}")
    return ad.add(refined, skip)


@dataclass
class InternalParams:
    res: ResidualParams
    ca: AttentionParams
    copy: CopyBlockParams


def internal_cpnet(x: Tensor, p: InternalParams) -> Tensor:
    z = channel_attention(residual_block(x, p.res), p.ca)
    return paste_block(copy_block(z, z, p.copy), x)


def external_cpnet(f_in: Tensor, f_guide: Tensor, p: CopyBlockParams, key_size: int = 0) -> Tensor:
    """Cross-attention onto guided features plus the identity skip.

    ``key_size`` > 0 average-pools guided positions down to that side length
    before attention (queries stay at full resolution).
    """
    side = f_guide.shape[2]
    if key_size and side > key_size:
        f_guide = avg_pool2d(f_guide, side // key_size)
    return paste_block(copy_block(f_in, f_guide, p), f_in)


# ---------------------------------------------------------------------- generator


@dataclass
class GeneratorConfig:
    base_channels: int = 64
    stages: int = 3
    input_size: int = 16
    internal_cpnet: bool = True
    external_cpnet: tuple[bool, ...] = (True, True, True)
    stn_stages: tuple[int, ...] = (0, 1, 2)
    landmarks: int = 5
    heatmap_size: int = 64
    reduction: int = 4
    attn_key_size: int = 32  # 0 keeps guided keys at full resolution
    attn_pool_from: int = 128  # stages at least this large pool their keys

    def __post_init__(self):
        self.external_cpnet = tuple(bool(v) for v in self.external_cpnet)
        self.stn_stages = tuple(int(v) for v in self.stn_stages)
        if len(self.external_cpnet) != self.stages:
            raise ValueError(f"external_cpnet needs {self.stages} toggles, got {len(self.external_cpnet)}")
        if self.heatmap_size not in self.stage_sizes:
            raise ValueError(f"heatmap_size {self.heatmap_size} is not a stage resolution {self.stage_sizes}")
        if any(s < 0 or s > self.stages for s in self.stn_stages):
            raise ValueError(f"stn_stages must lie in 0..{self.stages}")
        if self.base_channels % self.reduction:
            raise ValueError("base_channels must be divisible by reduction")

    @property
    def output_size(self) -> int:
        return self.input_size * 2**self.stages

    @property
    def stage_sizes(self) -> tuple[int, ...]:
        return tuple(self.input_size * 2**s for s in range(1, self.stages + 1))

    def key_size(self, stage_side: int) -> int:
        if self.attn_key_size and stage_side >= self.attn_pool_from:
            return self.attn_key_size
        return 0


@dataclass
class StageParams:
    up: ConvParams
    res: ResidualParams
    stn: LocParams | None = None
    copy: CopyBlockParams | None = None


@dataclass
class GuideParams:
    stem: ConvParams
    down: list[ConvParams]


@dataclass
class HeatmapParams:
    conv1: ConvParams
    conv2: ConvParams


@dataclass
class Generator:
    config: GeneratorConfig
    in_conv: ConvParams
    stages: list[StageParams]
    heatmap: HeatmapParams
    out_conv: ConvParams
    stn0: LocParams | None = None
    internal: InternalParams | None = None
    guide: GuideParams | None = None

    def parameters(self) -> dict[str, Tensor]:
        return ad.named_tensors(self)


def build_generator(config: GeneratorConfig, seed: int = 0) -> Generator:
    rng = np.random.default_rng(seed)
    c = config.base_channels
    stages = []
    for s in range(1, config.stages + 1):
        stages.append(StageParams(
            up=ConvParams.init(rng, c, c, 4, stride=2, padding=1, transposed=True),
            res=ResidualParams.init(rng, c),
            stn=LocParams.init(rng, c) if s in config.stn_stages else None,
            copy=CopyBlockParams.init(rng, c) if config.external_cpnet[s - 1] else None,
        ))
    internal = None
    if config.internal_cpnet:
        internal = InternalParams(ResidualParams.init(rng, c), AttentionParams.init(rng, c, config.reduction),
                                  CopyBlockParams.init(rng, c))
    guide = None
    if any(config.external_cpnet):
        guide = GuideParams(
            stem=ConvParams.init(rng, 3, c, 3, padding=1),
            down=[ConvParams.init(rng, c, c, 3, stride=2, padding=1) for _ in range(config.stages - 1)],
        )
    heat = HeatmapParams(ConvParams.init(rng, c, c, 3, padding=1),
                         ConvParams.init(rng, c, config.landmarks, 1, gain=0.1))
    heat.conv2.bias.data[:] = -2.0
    return Generator(
        config=config,
        in_conv=ConvParams.init(rng, 3, c, 3, padding=1),
        stages=stages,
        heatmap=heat,
        out_conv=ConvParams.init(rng, c, 3, 3, padding=1, gain=0.1),
        stn0=LocParams.init(rng, 3) if 0 in config.stn_stages else None,
        internal=internal,
        guide=guide,
    )


def guided_encoder(guide: Tensor, gen: Generator) -> list[Tensor]:
    """Feature pyramid of the guided image, ordered coarse to fine.

    The per-scale feature conv is the same tensor as the first conv of the
    main branch's residual block at that scale.
    """
    if gen.guide is None:
        raise ValueError("generator was built without external CPnets; it has no guided encoder")
    cfg = gen.config
    if guide.shape[1:] != (3, cfg.output_size, cfg.output_size):
        raise ShapeError(f"guide must be (N, 3, {cfg.output_size}, {cfg.output_size}), got {guide.shape}")
    h = ad.relu(conv2d(guide, gen.guide.stem))
    feats = []
    for level, s in enumerate(reversed(range(cfg.stages))):
        if level:
            h = ad.relu(conv2d(h, gen.guide.down[level - 1]))
        h = ad.relu(conv2d(h, gen.stages[s].res.conv1))
        feats.append(h)
    return feats[::-1]


def heatmap_head(feat: Tensor, p: HeatmapParams) -> Tensor:
    return ad.sigmoid(conv2d(ad.relu(conv2d(feat, p.conv1)), p.conv2))


def generator(nlr: Tensor, guide: Tensor, gen: Generator) -> tuple[Tensor, Tensor]:
    cfg = gen.config
    if nlr.shape[1:] != (3, cfg.input_size, cfg.input_size):
        raise ShapeError(f"input must be (N, 3, {cfg.input_size}, {cfg.input_size}), got {nlr.shape}")
    x = nlr
    if gen.stn0 is not None:
        x, _ = stn(x, gen.stn0)
    h = ad.relu(conv2d(x, gen.in_conv))
    if gen.internal is not None:
        h = internal_cpnet(h, gen.internal)
    pyramid = guided_encoder(guide, gen) if gen.guide is not None else None
    heat = None
    for s, stage in enumerate(gen.stages):
        h = ad.relu(conv_transpose2d(h, stage.up))
        if stage.stn is not None:
            h, _ = stn(h, stage.stn)
        if stage.copy is not None:
            h = external_cpnet(h, pyramid[s], stage.copy, cfg.key_size(h.shape[2]))
        h = residual_block(h, stage.res)
        if h.shape[2] == cfg.heatmap_size:
            heat = heatmap_head(h, gen.heatmap)
    return ad.sigmoid(conv2d(h, gen.out_conv)), heat


# ------------------------------------------------------------------ discriminator


@dataclass
class DiscriminatorConfig:
    channels: tuple[int, ...] = (32, 64, 128, 256, 512)
    image_size: int = 128

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        if self.image_size % 2 ** len(self.channels):
            raise ValueError("image_size must be divisible by 2**len(channels)")

    @property
    def feature_dim(self) -> int:
        side = self.image_size // 2 ** len(self.channels)
        return self.channels[-1] * side * side


@dataclass
class Discriminator:
    config: DiscriminatorConfig
    convs: list[ConvParams] = field(default_factory=list)
    fc: DenseParams | None = None

    def parameters(self) -> dict[str, Tensor]:
        return ad.named_tensors(self)


def build_discriminator(config: DiscriminatorConfig, seed: int = 1) -> Discriminator:
    rng = np.random.default_rng(seed)
    convs, c_in = [], 3
    for c in config.channels:
        convs.append(ConvParams.init(rng, c_in, c, 4, stride=2, padding=1, gain=0.7))
        c_in = c
    fc = DenseParams.init(rng, config.feature_dim, 1, gain=0.5)
    return Discriminator(config, convs, fc)


def discriminator(img: Tensor, p: Discriminator) -> tuple[Tensor, Tensor]:
    """Raw real/fake logit (N, 1) and flattened penultimate features (N, D)."""
    h = img
    for conv in p.convs:
        h = ad.leaky_relu(conv2d(h, conv), 0.2)
    penult = ad.reshape(h, (h.shape[0], -1))
    return dense(penult, p.fc), penult
