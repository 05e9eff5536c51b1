"""Two-stage adversarial training.

Stage 1 trains the global generator/critic pair on low-resolution images.
Stage 2 freezes the global generator and trains the local pair on
high-resolution patches paired with up-sampled snapshot patches.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch
import torch.nn.functional as F

from .cooperation import local_input_batch, to_patches
from .core import ConfigError, DataError, to_uint8
from .data import ImageDataset
from .losses import LossWeights, rec_loss, total_d_loss, total_g_loss
from .networks import (
    Discriminator,
    DiscriminatorSpec,
    Generator,
    GeneratorSpec,
    build_model,
    load_checkpoint,
    save_checkpoint,
)

log = logging.getLogger(__name__)


class NumericError(RuntimeError):
    """A loss became NaN or infinite."""


@dataclass
class TrainConfig:
    lr: float = 2e-4
    betas: tuple[float, float] = (0.5, 0.99)
    decay_rate: float = 0.1
    decay_epoch: int = 100
    n_critic: int = 5
    batch_size: int = 32
    epochs: int = 200
    steps: int | None = None
    loss_weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    # stage-2 options
    patches_per_image: int | None = None
    log_every: int = 1
    # write a sample grid every this many steps when an output directory is given
    sample_every: int | None = None

    def __post_init__(self):
        if isinstance(self.loss_weights, dict):
            self.loss_weights = LossWeights(**self.loss_weights)
        self.betas = tuple(self.betas)
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.n_critic < 1:
            raise ConfigError(f"n_critic must be >= 1, got {self.n_critic}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        return cls(**known)


def lr_schedule(epoch: float, cfg: TrainConfig) -> float:
    """Step decay: ``lr * decay_rate ** floor(epoch / decay_epoch)``."""
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    return cfg.lr * cfg.decay_rate ** math.floor(epoch / cfg.decay_epoch)


@dataclass
class LossLog:
    rows: list[tuple[int, str, float]] = field(default_factory=list)

    def add(self, step: int, values: dict[str, torch.Tensor | float]) -> None:
        for name, value in values.items():
            v = float(value.detach()) if isinstance(value, torch.Tensor) else float(value)
            if not math.isfinite(v):
                raise NumericError(f"{name} became {v} at step {step}")
            self.rows.append((step, name, v))

    def series(self, name: str) -> list[float]:
        return [v for _, n, v in self.rows if n == name]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "loss_name", "value"])
            writer.writerows(self.rows)


@dataclass
class StageResult:
    generator: Generator
    discriminator: Discriminator
    log: LossLog
    checkpoint: Path | None = None


def _set_lr(opt: torch.optim.Optimizer, lr: float) -> None:
    for group in opt.param_groups:
        group["lr"] = lr


def _shuffled_targets(source: torch.Tensor, rng: torch.Generator) -> torch.Tensor:
    return source[torch.randperm(source.shape[0], generator=rng)]


def _total_steps(cfg: TrainConfig, n_items: int) -> int:
    if cfg.steps is not None:
        return cfg.steps
    return max(1, math.ceil(cfg.epochs * n_items / cfg.batch_size))


def _adam(params, cfg: TrainConfig) -> torch.optim.Adam:
    return torch.optim.Adam(params, lr=cfg.lr, betas=cfg.betas)


def save_stage(result: StageResult, out_dir, cfg: TrainConfig, extra: dict | None = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(result.generator, out / "generator", extra)
    save_checkpoint(result.discriminator, out / "discriminator", extra)
    result.log.write_csv(out / "losses.csv")
    (out / "train_config.json").write_text(json.dumps(cfg.to_dict(), indent=2))
    result.checkpoint = out
    return out


def load_generator(ckpt) -> Generator:
    path = Path(ckpt)
    if (path / "generator").is_dir():
        path = path / "generator"
    if not (path / "manifest.json").exists():
        raise FileNotFoundError(f"no generator checkpoint under {ckpt}")
    g = load_checkpoint(path)
    if not isinstance(g, Generator):
        raise ConfigError(f"{path} does not hold a generator")
    return g


StepCallback = Callable[[int, Generator, Discriminator], None]


def sample_grid(g: Generator, x: torch.Tensor, labels: torch.Tensor) -> np.ndarray:
    """uint8 grid: one row per image with input, reconstruction and every single-attribute flip."""
    was_training = g.training
    g.eval()
    with torch.no_grad():
        cols = [x[:, :3], g(x, torch.zeros_like(labels))]
        for a in range(labels.shape[1]):
            target = labels.clone()
            target[:, a] = 1 - target[:, a]
            cols.append(g(x, target - labels))
    g.train(was_training)
    rows = [np.concatenate([to_uint8(c[i].clamp(-1, 1).numpy()) for c in cols], axis=1) for i in range(x.shape[0])]
    return np.concatenate(rows, axis=0)


def _with_samples(callback: StepCallback | None, cfg: TrainConfig, out_dir, x, labels) -> StepCallback | None:
    if out_dir is None or not cfg.sample_every:
        return callback
    from PIL import Image

    sample_dir = Path(out_dir) / "samples"
    sample_dir.mkdir(parents=True, exist_ok=True)

    def run(step, g, d):
        if (step + 1) % cfg.sample_every == 0:
            Image.fromarray(sample_grid(g, x, labels)).save(sample_dir / f"step_{step + 1:06d}.png")
        if callback is not None:
            callback(step, g, d)

    return run


def train_global(dataset: ImageDataset, g_spec: GeneratorSpec, d_spec: DiscriminatorSpec,
                 cfg: TrainConfig, out_dir=None, callback: StepCallback | None = None,
                 extra: dict | None = None) -> StageResult:
    """Alternate ``n_critic`` critic updates with one generator update on LR images."""
    if len(dataset) == 0:
        raise DataError("empty dataset")
    g = build_model(g_spec, seed=cfg.seed)
    d = build_model(d_spec, seed=cfg.seed + 1)
    x_all, y_all = dataset.tensors()

    def sample(rng):
        idx = torch.randint(0, len(dataset), (cfg.batch_size,), generator=rng)
        return x_all[idx], y_all[idx]

    def fake_fn(x, attr_diff):
        return g(x, attr_diff)

    callback = _with_samples(callback, cfg, out_dir, x_all[:4], y_all[:4])
    result = _adversarial_loop(g, d, sample, fake_fn, lambda x: x, lambda x, tgt: rec_loss(x, g),
                               cfg, len(dataset), callback)
    if out_dir is not None:
        save_stage(result, out_dir, cfg, {"stage": "global", **(extra or {})})
    return result


def consistency_loss(fake_patches: torch.Tensor, local_inputs: torch.Tensor, factor: int) -> torch.Tensor:
    """L1 between area-downsampled output patches and the snapshot channels at snapshot scale."""
    if factor <= 1:
        return (fake_patches - local_inputs[:, 3:]).abs().mean()
    return (F.avg_pool2d(fake_patches, factor) - F.avg_pool2d(local_inputs[:, 3:], factor)).abs().mean()


def train_local(dataset: ImageDataset, g_global: Generator, g_spec: GeneratorSpec,
                d_spec: DiscriminatorSpec, cfg: TrainConfig, patch_size: int, global_size: int,
                out_dir=None, callback: StepCallback | None = None, extra: dict | None = None) -> StageResult:
    """Train the patch generator/critic with the global generator frozen."""
    if g_global is None:
        raise ConfigError("a trained global generator is required")
    if dataset.hr_images is None:
        raise DataError("dataset has no paired high-resolution images")
    if len(dataset) == 0:
        raise DataError("empty dataset")
    if g_spec.input_channels != 6:
        raise ConfigError("the local generator takes 6-channel inputs")
    g_global.eval()
    for p in g_global.parameters():
        p.requires_grad_(False)

    hr_all, y_all = dataset.tensors(hr=True)
    hr_size = hr_all.shape[-1]
    n_patches = (hr_size // patch_size) ** 2
    factor = max(1, hr_size // global_size)
    keep = cfg.patches_per_image or n_patches
    g = build_model(g_spec, seed=cfg.seed)
    d = build_model(d_spec, seed=cfg.seed + 1)

    def sample(rng):
        idx = torch.randint(0, len(dataset), (cfg.batch_size,), generator=rng)
        hr, y = hr_all[idx], y_all[idx]
        # choose which patches of each image enter this batch
        order = torch.stack([torch.randperm(n_patches, generator=rng)[:keep] for _ in idx])
        return (hr, order), y

    def select(patches, order):
        b = order.shape[0]
        flat = patches.reshape(b, n_patches, *patches.shape[1:])
        return flat[torch.arange(b)[:, None], order].reshape(b * keep, *patches.shape[1:])

    def repeat(v):
        return v.repeat_interleave(keep, dim=0)

    cache = {}

    def fake_fn(batch, attr_diff):
        hr, order = batch
        with torch.no_grad():
            lr = F.interpolate(hr, size=(global_size, global_size), mode="bilinear", align_corners=False)
            snapshot = g_global(lr, attr_diff).clamp(-1, 1)
        inputs = select(local_input_batch(hr, snapshot, patch_size), order)
        fake = g(inputs, repeat(attr_diff))
        cache["cons"] = consistency_loss(fake, inputs, factor)
        return fake

    def real_fn(batch):
        hr, order = batch
        return select(to_patches(hr, patch_size), order)

    def rec_fn(batch, _target):
        hr, order = batch
        zero = torch.zeros(hr.shape[0], g_spec.n_attributes)
        with torch.no_grad():
            lr = F.interpolate(hr, size=(global_size, global_size), mode="bilinear", align_corners=False)
            snapshot = g_global(lr, zero).clamp(-1, 1)
        inputs = select(local_input_batch(hr, snapshot, patch_size), order)
        return rec_loss(inputs, g)

    def extra_fn():
        return {"g_cons": (cfg.loss_weights.lambda_cons, cache["cons"])}

    result = _adversarial_loop(g, d, sample, fake_fn, real_fn, rec_fn, cfg, len(dataset), callback,
                               label_repeat=keep, extra_fn=extra_fn)
    if out_dir is not None:
        save_stage(result, out_dir, cfg, {"stage": "local", "patch_size": patch_size,
                                          "global_size": global_size, **(extra or {})})
    return result


def _adversarial_loop(g, d, sample, fake_fn, real_fn, rec_fn, cfg: TrainConfig, n_items: int,
                      callback: StepCallback | None, label_repeat: int = 1, extra_fn=None) -> StageResult:
    torch.manual_seed(cfg.seed)
    rng = torch.Generator().manual_seed(cfg.seed)
    opt_g = _adam(g.parameters(), cfg)
    opt_d = _adam(d.parameters(), cfg)
    w = cfg.loss_weights
    losses = LossLog()
    total = _total_steps(cfg, n_items)
    g.train()
    d.train()

    for step in range(total):
        epoch = step * cfg.batch_size / n_items
        lr = lr_schedule(epoch, cfg)
        _set_lr(opt_g, lr)
        _set_lr(opt_d, lr)

        for _ in range(cfg.n_critic):
            batch, source = sample(rng)
            target = _shuffled_targets(source, rng)
            with torch.no_grad():
                fake = fake_fn(batch, target - source)
            real = real_fn(batch)
            d_loss, d_parts = total_d_loss(d, real, fake, source.repeat_interleave(label_repeat, 0), w,
                                           generator=rng)
            opt_d.zero_grad(set_to_none=True)
            d_loss.backward()
            opt_d.step()

        batch, source = sample(rng)
        target = _shuffled_targets(source, rng)
        fake = fake_fn(batch, target - source)
        rec = rec_fn(batch, target)
        for p in d.parameters():
            p.requires_grad_(False)
        g_loss, g_parts = total_g_loss(d, fake, target.repeat_interleave(label_repeat, 0), rec, w,
                                       extra=extra_fn() if extra_fn else None)
        opt_g.zero_grad(set_to_none=True)
        g_loss.backward()
        opt_g.step()
        for p in d.parameters():
            p.requires_grad_(True)

        if step % cfg.log_every == 0 or step == total - 1:
            losses.add(step, {"d_total": d_loss, **d_parts, "g_total": g_loss, **g_parts})
        if callback is not None:
            callback(step, g, d)

    g.eval()
    d.eval()
    return StageResult(g, d, losses)
