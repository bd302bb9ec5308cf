from cpgan.config import TrainConfig
from cpgan.model import DiscriminatorConfig, GeneratorConfig


def tiny_config(out_dir, seed=0, **overrides):
    """A few iterations of a base-8 model on eight pairs; seconds per run."""
    values = dict(
        seed=seed,
        n_pairs=8,
        train_fraction=0.75,
        val_pairs=2,
        batch_size=2,
        iterations=3,
        checkpoint_interval=2,
        out_dir=str(out_dir),
        generator=GeneratorConfig(base_channels=8, attn_key_size=8, attn_pool_from=32),
        discriminator=DiscriminatorConfig(channels=(4, 8, 8, 8, 8)),
    )
    values.update(overrides)
    return TrainConfig(**values)
