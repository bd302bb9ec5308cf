"""Training configuration and its ``key = value`` text form."""

from __future__ import annotations

from dataclasses import dataclass, field, fields, is_dataclass
from pathlib import Path

from .losses import LossWeights
from .model import DiscriminatorConfig, GeneratorConfig


@dataclass
class TrainConfig:
    seed: int = 0  # model init and batch sampling
    data_seed: int = 0
    n_pairs: int = 500
    train_fraction: float = 0.8
    val_pairs: int = 32
    batch_size: int = 8
    iterations: int = 2000
    lr_g: float = 2e-4
    lr_d: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    checkpoint_interval: int = 500
    out_dir: str = "runs/default"
    data_dir: str = ""  # load pairs written by synth-data instead of synthesizing
    weights: LossWeights = field(default_factory=LossWeights)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.discriminator.image_size != self.generator.output_size:
            raise ValueError("discriminator image_size must equal the generator output size")


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def _flatten(obj, prefix: str = "") -> list[tuple[str, object]]:
    out = []
    for f in fields(obj):
        value = getattr(obj, f.name)
        key = f"{prefix}{f.name}"
        if is_dataclass(value):
            out.extend(_flatten(value, key + "."))
        else:
            out.append((key, value))
    return out


def to_text(config: TrainConfig) -> str:
    return "".join(f"{k} = {_format(v)}\n" for k, v in _flatten(config))


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse(text: str, annotation: str, default):
    text = text.strip()
    if annotation.startswith("tuple"):
        inner = bool if "bool" in annotation else int
        parts = [p for p in (t.strip() for t in text.split(",")) if p]
        return tuple(_parse_bool(p) if inner is bool else int(p) for p in parts)
    if annotation == "bool" or isinstance(default, bool):
        return _parse_bool(text)
    if annotation == "int":
        return int(text)
    if annotation == "float":
        return float(text)
    return text


def _build(cls, values: dict[str, str], prefix: str = ""):
    kwargs = {}
    for f in fields(cls):
        key = f"{prefix}{f.name}"
        default = f.default_factory() if callable(f.default_factory) else f.default
        if is_dataclass(default):
            kwargs[f.name] = _build(type(default), values, key + ".")
        elif key in values:
            kwargs[f.name] = _parse(values.pop(key), str(f.type), default)
    return cls(**kwargs)


def from_text(text: str) -> TrainConfig:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    config = _build(TrainConfig, values)
    if values:
        raise ValueError(f"unknown config keys: {', '.join(sorted(values))}")
    return config


def load_config(path) -> TrainConfig:
    return from_text(Path(path).read_text())


def save_config(config: TrainConfig, path) -> None:
    Path(path).write_text(to_text(config))


ABLATIONS = ("full", "no_internal", "no_external")


def toy_config(seed: int = 0, variant: str = "full", **overrides) -> TrainConfig:
    """Desk-scale setting for the trend experiments: 500 pairs, base 16, 2k iterations.

    Attention keys are pooled to 8x8 from the 32 stage on, and batches hold
    two pairs, which keeps one iteration under a second on a single core.
    """
    if variant not in ABLATIONS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {ABLATIONS}")
    gen = GeneratorConfig(
        base_channels=16,
        attn_key_size=8,
        attn_pool_from=32,
        internal_cpnet=variant != "no_internal",
        external_cpnet=(variant != "no_external",) * 3,
    )
    values = dict(
        seed=seed,
        data_seed=0,
        n_pairs=500,
        batch_size=2,
        iterations=2000,
        checkpoint_interval=500,
        out_dir=f"runs/toy-{variant}-s{seed}",
        generator=gen,
        discriminator=DiscriminatorConfig(channels=(16, 32, 64, 128, 128)),
    )
    values.update(overrides)
    return TrainConfig(**values)
