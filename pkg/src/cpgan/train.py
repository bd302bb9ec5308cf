"""Adversarial training loop, evaluation and single-image inference."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import checkpoint as ckpt_io
from .autodiff import Tensor
from .config import TrainConfig, from_text, to_text
from .data import Dataset, FacePair, build_dataset, load_dataset, load_png, save_png, stack
from .losses import (
    LossParts,
    NonFiniteLoss,
    adversarial_losses,
    build_perceptual_encoder,
    cosine_distance,
    frozen,
    gaussian_heatmaps,
    illumination_loss,
    intensity_loss,
    structure_loss,
    total_generator_loss,
)
from .metrics import psnr, ssim
from .model import Discriminator, Generator, build_discriminator, build_generator, discriminator, generator
from .vision import bicubic_resize

log = logging.getLogger(__name__)

LOSS_KEYS = ("mse", "id", "h", "ic", "adv", "total")


@dataclass
class Models:
    config: TrainConfig
    gen: Generator
    disc: Discriminator
    opt_g: ad.Adam
    opt_d: ad.Adam
    iteration: int = 0


def build_models(config: TrainConfig) -> Models:
    gen = build_generator(config.generator, seed=config.seed)
    disc = build_discriminator(config.discriminator, seed=config.seed + 1)
    opt_g = ad.Adam(gen.parameters(), lr=config.lr_g, beta1=config.beta1, beta2=config.beta2)
    opt_d = ad.Adam(disc.parameters(), lr=config.lr_d, beta1=config.beta1, beta2=config.beta2)
    return Models(config, gen, disc, opt_g, opt_d)


# -------------------------------------------------------------------- checkpoints


def make_checkpoint(models: Models) -> ckpt_io.Checkpoint:
    table = {}
    table.update(ckpt_io.pack_params(models.gen.parameters(), "gen."))
    table.update(ckpt_io.pack_params(models.disc.parameters(), "disc."))
    table.update(ckpt_io.pack_optimizer(models.opt_g, "opt_g."))
    table.update(ckpt_io.pack_optimizer(models.opt_d, "opt_d."))
    return ckpt_io.Checkpoint(table, models.iteration, to_text(models.config))


def restore(checkpoint: ckpt_io.Checkpoint) -> Models:
    config = from_text(checkpoint.config_text)
    models = build_models(config)
    table = checkpoint.tensors
    ckpt_io.unpack_params(table, models.gen.parameters(), "gen.")
    ckpt_io.unpack_params(table, models.disc.parameters(), "disc.")
    ckpt_io.unpack_optimizer(table, models.opt_g, "opt_g.")
    ckpt_io.unpack_optimizer(table, models.opt_d, "opt_d.")
    models.iteration = checkpoint.iteration
    return models


# ----------------------------------------------------------------------- training


@dataclass
class TrainResult:
    models: Models
    data: Dataset
    history: list[dict] = field(default_factory=list)
    d_history: list[float] = field(default_factory=list)
    validation: list[dict] = field(default_factory=list)
    checkpoint_path: Path | None = None


def load_data(config: TrainConfig) -> Dataset:
    if config.data_dir:
        return load_dataset(config.data_dir)
    return build_dataset(config.n_pairs, config.data_seed, config.train_fraction)


def train_step(models: Models, batch: dict[str, np.ndarray], enc) -> tuple[dict[str, float], float]:
    """One generator update on the weighted total, then one discriminator update on the same fakes."""
    cfg = models.config
    nlr, gt, guide = Tensor(batch["ni_lr"]), Tensor(batch["ui_hr"]), Tensor(batch["guide"])
    hm_size = cfg.generator.heatmap_size
    gt_hm = gaussian_heatmaps(batch["landmarks"], hm_size, cfg.generator.output_size)

    disc_params = models.disc.parameters()
    _, feat_real = discriminator(gt, models.disc)
    with frozen(disc_params), ad.Tape() as tape:
        fake, heat = generator(nlr, guide, models.gen)
        fake_logit, feat_fake = discriminator(fake, models.disc)
        _, l_adv = adversarial_losses(Tensor(np.zeros_like(fake_logit.data)), fake_logit)
        parts = LossParts(
            mse=intensity_loss(fake, gt),
            id=cosine_distance(feat_fake, feat_real),
            h=structure_loss(heat, gt_hm),
            ic=illumination_loss(fake, guide, enc),
            adv=l_adv,
        )
        total = total_generator_loss(parts, cfg.weights)
    tape.backward(total)
    models.opt_g.step()

    fake_const = Tensor(fake.data)
    with ad.Tape() as tape:
        real_logit, _ = discriminator(gt, models.disc)
        fake_logit, _ = discriminator(fake_const, models.disc)
        l_d, _ = adversarial_losses(real_logit, fake_logit)
    if not math.isfinite(l_d.item()):
        raise NonFiniteLoss("d", l_d.item())
    tape.backward(l_d)
    models.opt_d.step()
    models.iteration += 1

    values = parts.values()
    values["total"] = total.item()
    return values, l_d.item()


def train(config: TrainConfig, data: Dataset | None = None, write: bool = True) -> TrainResult:
    """Alternate generator/discriminator steps; log, validate and checkpoint on schedule."""
    data = data if data is not None else load_data(config)
    models = build_models(config)
    enc = build_perceptual_encoder()
    rng = np.random.default_rng([config.seed, 7])
    train_pairs = data.train
    val_pairs = (data.test or data.train)[: config.val_pairs]
    result = TrainResult(models, data)
    out_dir = Path(config.out_dir)
    log_file = None
    if write:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "config.txt").write_text(to_text(config))
        log_file = open(out_dir / "losses.jsonl", "w")
    try:
        for it in range(1, config.iterations + 1):
            idx = rng.choice(len(train_pairs), size=config.batch_size, replace=len(train_pairs) < config.batch_size)
            batch = stack([train_pairs[i] for i in idx])
            try:
                values, d_loss = train_step(models, batch, enc)
            except NonFiniteLoss as exc:
                raise NonFiniteLoss(exc.term, exc.value, it) from None
            record = {"iter": it, **{k: values[k] for k in LOSS_KEYS}}
            result.history.append(record)
            result.d_history.append(d_loss)
            if log_file:
                log_file.write(json.dumps(record) + "\n")
            log.debug("iter %d total %.5f d %.5f", it, values["total"], d_loss)
            if config.checkpoint_interval and (it % config.checkpoint_interval == 0 or it == config.iterations):
                report = evaluate_models(models, val_pairs)
                result.validation.append({"iter": it, **report_dict(report)})
                log.info("iter %d val psnr %.3f ssim %.4f", it, report["cpgan"]["psnr"], report["cpgan"]["ssim"])
                if write:
                    path = out_dir / "checkpoint.cpgk"
                    ckpt_io.save(make_checkpoint(models), path)
                    result.checkpoint_path = path
    finally:
        if log_file:
            log_file.close()
    if write and result.checkpoint_path is None:
        path = out_dir / "checkpoint.cpgk"
        ckpt_io.save(make_checkpoint(models), path)
        result.checkpoint_path = path
    return result


# --------------------------------------------------------------------- evaluation


def hallucinate(gen: Generator, ni_lr: np.ndarray, guide: np.ndarray, batch_size: int = 8) -> np.ndarray:
    """Generator output for stacked (N, 3, 16, 16) inputs, without recording a tape."""
    outs = []
    for s in range(0, len(ni_lr), batch_size):
        out, _ = generator(Tensor(ni_lr[s : s + batch_size]), Tensor(guide[s : s + batch_size]), gen)
        outs.append(out.data)
    return np.concatenate(outs)


def upsample_bicubic(ni_lr: np.ndarray, size: int) -> np.ndarray:
    return np.clip(bicubic_resize(Tensor(ni_lr), size, size).data, 0.0, 1.0)


def score(outputs: np.ndarray, targets: np.ndarray) -> dict[str, float]:
    p = [psnr(o, t) for o, t in zip(outputs, targets)]
    s = [ssim(o, t) for o, t in zip(outputs, targets)]
    return {"psnr": float(np.mean(p)), "ssim": float(np.mean(s)), "n": len(p)}


def evaluate_models(models: Models, pairs: list[FacePair]) -> dict[str, dict]:
    b = stack(pairs)
    size = models.config.generator.output_size
    return {
        "cpgan": score(hallucinate(models.gen, b["ni_lr"], b["guide"]), b["ui_hr"]),
        "bicubic": score(upsample_bicubic(b["ni_lr"], size), b["ui_hr"]),
    }


def report_dict(report: dict[str, dict]) -> dict[str, float]:
    return {f"{m}_{k}": v[k] for m, v in report.items() for k in ("psnr", "ssim")}


def format_report(report: dict[str, dict]) -> str:
    lines = [f"{'method':<10}{'PSNR [dB]':>12}{'SSIM':>10}{'n':>6}"]
    for method, row in report.items():
        lines.append(f"{method:<10}{row['psnr']:>12.3f}{row['ssim']:>10.4f}{row['n']:>6d}")
    for method, row in report.items():
        lines.append(json.dumps({"method": method, "psnr": row["psnr"], "ssim": row["ssim"], "n": row["n"]}))
    return "\n".join(lines)


def evaluate(checkpoint_path, data_dir) -> dict[str, dict]:
    models = restore(ckpt_io.load(checkpoint_path))
    data = load_dataset(data_dir)
    return evaluate_models(models, data.train + data.test)


def infer(checkpoint_path, input_png, guide_png, out_png, resize: bool = False) -> np.ndarray:
    """Hallucinate one image and write it as an 8-bit PNG."""
    models = restore(ckpt_io.load(checkpoint_path))
    cfg = models.config.generator
    lr = load_png(input_png)
    guide = load_png(guide_png)
    if lr.shape[1:] != (cfg.input_size, cfg.input_size):
        if not resize:
            raise ValueError(f"input is {lr.shape[1]}x{lr.shape[2]}, expected {cfg.input_size}x{cfg.input_size} (pass --resize)")
        log.warning("resizing input from %s to %d", lr.shape[1:], cfg.input_size)
        lr = np.clip(bicubic_resize(Tensor(lr[None]), cfg.input_size, cfg.input_size).data[0], 0, 1)
    if guide.shape[1:] != (cfg.output_size, cfg.output_size):
        if not resize:
            raise ValueError(f"guide is {guide.shape[1]}x{guide.shape[2]}, expected {cfg.output_size}x{cfg.output_size} (pass --resize)")
        log.warning("resizing guide from %s to %d", guide.shape[1:], cfg.output_size)
        guide = np.clip(bicubic_resize(Tensor(guide[None]), cfg.output_size, cfg.output_size).data[0], 0, 1)
    out = hallucinate(models.gen, lr[None], guide[None])[0]
    save_png(out_png, out)
    return out
