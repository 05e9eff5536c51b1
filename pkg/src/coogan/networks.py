"""Encoder/decoder generators and dual-head discriminators."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Union

import numpy as np
import torch
from torch import Tensor, nn

from .core import ConfigError, DiffVector, DimensionError, ImageTensor
from .units import condition_planes, make_unit

SKIP_MODES = ("none", "plain", "lstu", "stu")
NORMS = ("instance", "none")
MAX_CHANNELS = 1024
LEAK = 0.01


@dataclass
class GeneratorSpec:
    n_layers: int = 5
    base_channels: int = 16
    input_channels: int = 3
    skip_mode: str = "lstu"
    skip_count: int = 4
    n_attributes: int = 13
    image_size: int | None = None
    max_channels: int = MAX_CHANNELS
    norm: str = "instance"

    def validate(self) -> None:
        if self.norm not in NORMS:
            raise ConfigError(f"norm must be one of {NORMS}, got {self.norm!r}")
        if self.n_layers < 1:
            raise ConfigError("n_layers must be >= 1")
        if self.base_channels < 1 or self.n_attributes < 1:
            raise ConfigError("base_channels and n_attributes must be positive")
        if self.input_channels not in (3, 6):
            raise ConfigError(f"input_channels must be 3 or 6, got {self.input_channels}")
        if self.skip_mode not in SKIP_MODES:
            raise ConfigError(f"skip_mode must be one of {SKIP_MODES}, got {self.skip_mode!r}")
        if not 0 <= self.skip_count <= self.n_layers - 1:
            raise ConfigError(f"skip_count must be in [0, {self.n_layers - 1}], got {self.skip_count}")
        if self.skip_mode == "none" and self.skip_count:
            raise ConfigError("skip_mode 'none' requires skip_count 0")
        if self.image_size is not None and self.image_size % (2 ** self.n_layers):
            raise ConfigError(
                f"image_size {self.image_size} must be divisible by 2**n_layers = {2 ** self.n_layers}"
            )

    @property
    def channels(self) -> list[int]:
        return encoder_channels(self.base_channels, self.n_layers, self.max_channels)

    @property
    def skip_layers(self) -> list[int]:
        """1-based encoder layers carrying a skip, deepest first."""
        if self.skip_mode == "none":
            return []
        return [self.n_layers - 1 - i for i in range(self.skip_count)]


@dataclass
class DiscriminatorSpec:
    n_layers: int = 5
    base_channels: int = 16
    n_attributes: int = 13
    input_size: int = 256
    fc_dim: int = 256
    max_channels: int = MAX_CHANNELS

    def validate(self) -> None:
        if self.n_layers < 1 or self.base_channels < 1 or self.n_attributes < 1:
            raise ConfigError("n_layers, base_channels and n_attributes must be positive")
        if self.input_size // (2 ** self.n_layers) < 1 or self.input_size % (2 ** self.n_layers):
            raise ConfigError(
                f"input_size {self.input_size} cannot be halved {self.n_layers} times to >= 1x1"
            )

    @property
    def channels(self) -> list[int]:
        return encoder_channels(self.base_channels, self.n_layers, self.max_channels)

    @property
    def final_size(self) -> int:
        return self.input_size // (2 ** self.n_layers)


def encoder_channels(base: int, n_layers: int, cap: int = MAX_CHANNELS) -> list[int]:
    return [min(base * 2 ** i, cap) for i in range(n_layers)]


def _as_batch(d, n: int, batch: int, like: Tensor) -> Tensor:
    if isinstance(d, DiffVector):
        d = d.as_array()
    d = torch.as_tensor(np.asarray(d) if not isinstance(d, Tensor) else d, dtype=like.dtype, device=like.device)
    if d.dim() == 1:
        d = d.unsqueeze(0).expand(batch, -1)
    if d.shape != (batch, n):
        raise DimensionError(f"difference vector must be ({batch}, {n}), got {tuple(d.shape)}")
    return d


class Generator(nn.Module):
    """U-Net style encoder/decoder conditioned on an attribute difference.

    The condition is broadcast and concatenated to the bottleneck, and fed
    to every gated skip unit. Skips attach to the deepest ``skip_count``
    non-bottleneck encoder layers.
    """

    def __init__(self, spec: GeneratorSpec):
        super().__init__()
        spec.validate()
        self.spec = spec
        ch = spec.channels
        n = spec.n_layers

        self.encoder = nn.ModuleList()
        c_in = spec.input_channels
        for i, c in enumerate(ch):
            layers = [nn.Conv2d(c_in, c, 4, 2, 1)]
            if i < n - 1 and spec.norm == "instance":
                layers.append(nn.InstanceNorm2d(c, affine=True))
            layers.append(nn.LeakyReLU(LEAK))
            self.encoder.append(nn.Sequential(*layers))
            c_in = c

        self.units = nn.ModuleDict()
        if spec.skip_mode in ("lstu", "stu"):
            for layer in spec.skip_layers:
                self.units[str(layer)] = make_unit(
                    spec.skip_mode, ch[layer - 1], ch[layer], spec.n_attributes
                )

        # decoder stage k upsamples from encoder layer n-k to layer n-k-1
        self.decoder = nn.ModuleList()
        c_in = ch[-1] + spec.n_attributes
        for layer in range(n - 1, -1, -1):
            if layer == 0:
                self.decoder.append(nn.Sequential(
                    nn.ConvTranspose2d(c_in, 3, 3, 2, 1, output_padding=1), nn.Tanh()
                ))
                break
            c_out = ch[layer - 1]
            stage = [nn.ConvTranspose2d(c_in, c_out, 3, 2, 1, output_padding=1)]
            if spec.norm == "instance":
                stage.append(nn.InstanceNorm2d(c_out, affine=True))
            self.decoder.append(nn.Sequential(*stage, nn.ReLU()))
            c_in = c_out + (c_out if layer in spec.skip_layers else 0)

    def forward(self, x: Tensor, d) -> Tensor:
        spec = self.spec
        if x.dim() != 4 or x.shape[1] != spec.input_channels:
            raise DimensionError(
                f"expected (B, {spec.input_channels}, H, W) input, got {tuple(x.shape)}"
            )
        if spec.image_size is not None and tuple(x.shape[2:]) != (spec.image_size,) * 2:
            raise DimensionError(f"expected {spec.image_size}x{spec.image_size} input, got {tuple(x.shape[2:])}")
        if x.shape[2] % (2 ** spec.n_layers) or x.shape[3] % (2 ** spec.n_layers):
            raise DimensionError(f"input size {tuple(x.shape[2:])} not divisible by {2 ** spec.n_layers}")
        d = _as_batch(d, spec.n_attributes, x.shape[0], x)

        feats = []
        h = x
        for block in self.encoder:
            h = block(h)
            feats.append(h)

        skips: dict[int, Tensor] = {}
        if spec.skip_mode == "plain":
            skips = {layer: feats[layer - 1] for layer in spec.skip_layers}
        elif spec.skip_mode in ("lstu", "stu"):
            hidden = feats[-1]
            for layer in spec.skip_layers:
                skips[layer], hidden = self.units[str(layer)](feats[layer - 1], hidden, d)

        bottleneck = feats[-1]
        y = torch.cat([bottleneck, condition_planes(d, bottleneck.shape[2], bottleneck.shape[3])], dim=1)
        for k, stage in enumerate(self.decoder):
            y = stage(y)
            layer = spec.n_layers - 1 - k
            if layer in skips:
                y = torch.cat([y, skips[layer]], dim=1)
        return y


class Discriminator(nn.Module):
    """Convolutional trunk shared by an adversarial head and an attribute head."""

    def __init__(self, spec: DiscriminatorSpec, in_channels: int = 3):
        super().__init__()
        spec.validate()
        self.spec = spec
        self.in_channels = in_channels
        layers = []
        c_in = in_channels
        for c in spec.channels:
            layers += [nn.Conv2d(c_in, c, 4, 2, 1), nn.LeakyReLU(LEAK)]
            c_in = c
        self.trunk = nn.Sequential(*layers)
        flat = c_in * spec.final_size ** 2
        self.adv_head = nn.Sequential(nn.Linear(flat, spec.fc_dim), nn.LeakyReLU(LEAK), nn.Linear(spec.fc_dim, 1))
        self.cls_head = nn.Sequential(
            nn.Linear(flat, spec.fc_dim), nn.LeakyReLU(LEAK), nn.Linear(spec.fc_dim, spec.n_attributes)
        )

    def forward(self, x: Tensor) -> tuple[Tensor, Tensor]:
        size = self.spec.input_size
        if x.dim() != 4 or x.shape[1] != self.in_channels or tuple(x.shape[2:]) != (size, size):
            raise DimensionError(
                f"expected (B, {self.in_channels}, {size}, {size}) input, got {tuple(x.shape)}"
            )
        feat = self.trunk(x).flatten(1)
        return self.adv_head(feat).squeeze(1), self.cls_head(feat)


Model = Union[Generator, Discriminator]


def build_model(spec, seed: int = 0) -> Model:
    """Build a generator or discriminator with seeded initialization."""
    if isinstance(spec, GeneratorSpec):
        cls = Generator
    elif isinstance(spec, DiscriminatorSpec):
        cls = Discriminator
    else:
        raise ConfigError(f"unsupported spec type {type(spec).__name__}")
    spec.validate()
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return cls(spec)


def generator_forward(g: Generator, x, d) -> ImageTensor:
    """Translate one image. ``x`` is an ImageTensor or (C, H, W) array."""
    data = np.array(x.data) if isinstance(x, ImageTensor) else np.asarray(x)
    param = next(g.parameters())
    with torch.no_grad():
        out = g(torch.as_tensor(data, dtype=param.dtype).unsqueeze(0), d)
    return ImageTensor(out[0].numpy().clip(-1.0, 1.0))


def discriminator_forward(dsc: Discriminator, x) -> tuple[Tensor, Tensor]:
    """Batched critic scores and attribute logits for (B, 3, H, W) input."""
    x = torch.as_tensor(x, dtype=next(dsc.parameters()).dtype)
    if x.dim() == 3:
        x = x.unsqueeze(0)
    return dsc(x)


# -- checkpoints -------------------------------------------------------------

MANIFEST = "manifest.json"


def _param_filename(name: str) -> str:
    return name + ".npy"


def save_checkpoint(model: Model, directory, extra: dict | None = None) -> Path:
    """Write a manifest plus one ``.npy`` file per state-dict entry."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    state = model.state_dict()
    kind = "generator" if isinstance(model, Generator) else "discriminator"
    manifest = {
        "kind": kind,
        "spec": asdict(model.spec),
        "dtype": str(next(model.parameters()).dtype).replace("torch.", ""),
        "parameters": [n for n, _ in model.named_parameters()],
        "buffers": [n for n in state if n not in dict(model.named_parameters())],
        "extra": extra or {},
    }
    for name, tensor in state.items():
        np.save(directory / _param_filename(name), tensor.detach().cpu().numpy())
    (directory / MANIFEST).write_text(json.dumps(manifest, indent=2))
    return directory


def read_manifest(directory) -> dict:
    path = Path(directory) / MANIFEST
    if not path.exists():
        raise FileNotFoundError(f"no checkpoint manifest at {path}")
    return json.loads(path.read_text())


def load_checkpoint(directory) -> Model:
    directory = Path(directory)
    manifest = read_manifest(directory)
    if manifest["kind"] == "generator":
        model: Model = Generator(GeneratorSpec(**manifest["spec"]))
    else:
        model = Discriminator(DiscriminatorSpec(**manifest["spec"]))
    dtype = getattr(torch, manifest.get("dtype", "float32"))
    model = model.to(dtype)
    state = {
        name: torch.from_numpy(np.load(directory / _param_filename(name)))
        for name in manifest["parameters"] + manifest["buffers"]
    }
    model.load_state_dict(state)
    return model


def checkpoint_scalar_count(directory) -> int:
    manifest = read_manifest(directory)
    return sum(int(np.load(Path(directory) / _param_filename(n), mmap_mode="r").size)
               for n in manifest["parameters"])
