"""Image-quality metrics, attribute-editing accuracy and a seam score."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from scipy.signal import convolve2d

from .cooperation import edit_full_image, downsample
from .core import DimensionError, RunConfig, TilingError
from .data import ImageDataset
from .losses import attr_cls_loss
from .networks import Discriminator, DiscriminatorSpec, build_model


def _as_array(x) -> np.ndarray:
    if isinstance(x, torch.Tensor):
        return x.detach().cpu().numpy()
    return np.asarray(getattr(x, "data", x))


def to_8bit(x, value_range=(-1.0, 1.0)) -> np.ndarray:
    """Map values in ``value_range`` to quantized grey levels in [0, 255]."""
    lo, hi = value_range
    arr = (np.asarray(x, dtype=np.float64) - lo) * (255.0 / (hi - lo))
    return np.rint(np.clip(arr, 0, 255))


def psnr(a, b, quantize: bool = True, value_range=(-1.0, 1.0)) -> float:
    """Peak signal-to-noise ratio in dB on a 255 grey-level scale.

    With ``quantize`` both images are rounded to 8-bit first; otherwise the
    values are only rescaled. Identical images give ``inf``.
    """
    a, b = _as_array(a), _as_array(b)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch {a.shape} vs {b.shape}")
    if quantize:
        a, b = to_8bit(a, value_range), to_8bit(b, value_range)
    else:
        lo, hi = value_range
        a = (a.astype(np.float64) - lo) * (255.0 / (hi - lo))
        b = (b.astype(np.float64) - lo) * (255.0 / (hi - lo))
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(255.0 ** 2 / mse)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-(r ** 2) / (2 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def _ssim_channel(x: np.ndarray, y: np.ndarray, window: np.ndarray, c1: float, c2: float) -> float:
    def filt(z):
        return convolve2d(z, window, mode="valid")

    mu_x, mu_y = filt(x), filt(y)
    sxx = filt(x * x) - mu_x ** 2
    syy = filt(y * y) - mu_y ** 2
    sxy = filt(x * y) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
    den = (mu_x ** 2 + mu_y ** 2 + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def ssim(a, b, quantize: bool = True, value_range=(-1.0, 1.0), window_size: int = 11,
         sigma: float = 1.5) -> float:
    """Mean structural similarity over valid windows, averaged over channels.

    Inputs are (C, H, W); values are mapped to [0, 255] before comparison.
    """
    a, b = _as_array(a), _as_array(b)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[None], b[None]
    if min(a.shape[-2:]) < window_size:
        raise DimensionError(f"image {a.shape[-2:]} smaller than the {window_size}px window")
    if quantize:
        a, b = to_8bit(a, value_range), to_8bit(b, value_range)
    else:
        lo, hi = value_range
        a = (a.astype(np.float64) - lo) * (255.0 / (hi - lo))
        b = (b.astype(np.float64) - lo) * (255.0 / (hi - lo))
    window = gaussian_window(window_size, sigma)
    c1, c2 = (0.01 * 255) ** 2, (0.03 * 255) ** 2
    return float(np.mean([_ssim_channel(x, y, window, c1, c2) for x, y in zip(a, b)]))


# -- seam score --------------------------------------------------------------

def seam_score(x, patch_size: int, seed: int = 0) -> float:
    """Boundary minus interior mean absolute difference of adjacent pixels.

    Boundary pairs straddle a patch border; the same number of interior
    pairs (both pixels in one patch) is drawn at random. About zero for a
    seamless image.
    """
    img = _as_array(x).astype(np.float64)
    if img.ndim == 2:
        img = img[None]
    _, h, w = img.shape
    if patch_size < 1 or h % patch_size or w % patch_size:
        raise TilingError(f"{h}x{w} image is not divisible into {patch_size}px patches")
    cols = np.arange(patch_size, w, patch_size)
    rows = np.arange(patch_size, h, patch_size)
    boundary = [np.abs(img[:, :, cols] - img[:, :, cols - 1]).ravel(),
                np.abs(img[:, rows, :] - img[:, rows - 1, :]).ravel()]
    boundary = np.concatenate(boundary)
    if boundary.size == 0:
        return 0.0

    n_pairs = boundary.size // img.shape[0]
    rng = np.random.default_rng(seed)
    # horizontal neighbours (r, c)-(r, c+1) with c+1 not on a border, likewise vertical
    horiz = rng.random(n_pairs) < 0.5
    r = rng.integers(0, h, n_pairs)
    c = rng.integers(0, w, n_pairs)
    c_h = c % (w - 1)
    c_h = np.where((c_h + 1) % patch_size == 0, c_h - 1, c_h) if patch_size > 1 else c_h
    r_v = r % (h - 1)
    r_v = np.where((r_v + 1) % patch_size == 0, r_v - 1, r_v) if patch_size > 1 else r_v
    a = np.where(horiz, img[:, r, c_h], img[:, r_v, c])
    b = np.where(horiz, img[:, r, c_h + 1], img[:, r_v + 1, c])
    interior = np.abs(a - b).ravel()
    return float(boundary.mean() - interior.mean())


# -- attribute classifier ----------------------------------------------------

def classifier_spec(n_attributes: int, input_size: int, base_channels: int = 16,
                    n_layers: int = 4, fc_dim: int = 64) -> DiscriminatorSpec:
    return DiscriminatorSpec(n_layers=n_layers, base_channels=base_channels, n_attributes=n_attributes,
                             input_size=input_size, fc_dim=fc_dim)


def train_attr_classifier(dataset: ImageDataset, spec: DiscriminatorSpec | None = None, steps: int = 400,
                          batch_size: int = 32, lr: float = 1e-3, seed: int = 0, hr: bool = False) -> Discriminator:
    """Train a discriminator trunk plus classification head with BCE only."""
    if len(dataset) == 0:
        raise ValueError("cannot train a classifier on an empty dataset")
    x_all, y_all = dataset.tensors(hr=hr)
    if spec is None:
        spec = classifier_spec(y_all.shape[1], x_all.shape[-1])
    model = build_model(spec, seed=seed)
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    rng = torch.Generator().manual_seed(seed)
    model.train()
    for _ in range(steps):
        idx = torch.randint(0, len(dataset), (batch_size,), generator=rng)
        _, logits = model(x_all[idx])
        loss = attr_cls_loss(logits, y_all[idx])
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
    model.eval()
    model.trained_steps = steps
    return model


def predict_attributes(classifier: Discriminator, images, batch_size: int = 64) -> np.ndarray:
    """0/1 predictions for (N, 3, H, W) images; resized to the classifier's input size."""
    if getattr(classifier, "trained_steps", 1) == 0:
        raise ValueError("classifier is untrained")
    x = torch.as_tensor(_as_array(images), dtype=torch.float32)
    size = classifier.spec.input_size
    if x.shape[-1] != size:
        x = downsample(x, size) if x.shape[-1] > size else torch.nn.functional.interpolate(
            x, size=(size, size), mode="bilinear", align_corners=False)
    preds = []
    with torch.no_grad():
        for i in range(0, x.shape[0], batch_size):
            _, logits = classifier(x[i:i + batch_size])
            preds.append((logits > 0).to(torch.int64))
    return torch.cat(preds).numpy()


def attr_accuracy(classifier: Discriminator, edited_images, targets, sources=None) -> np.ndarray:
    """Per-attribute fraction of images whose predicted flag equals the target flag.

    With ``sources`` only attributes that were actually flipped are counted;
    attributes never flipped get NaN.
    """
    pred = predict_attributes(classifier, edited_images)
    targets = np.asarray(_as_array(targets)).astype(np.int64)
    hit = (pred == targets).astype(np.float64)
    if sources is None:
        return hit.mean(axis=0)
    flipped = targets != np.asarray(_as_array(sources)).astype(np.int64)
    counts = flipped.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(counts > 0, (hit * flipped).sum(axis=0) / np.maximum(counts, 1), np.nan)


def mean_accuracy(per_attribute: np.ndarray) -> float:
    return float(np.nanmean(per_attribute))


# -- full pipeline evaluation ------------------------------------------------

@dataclass
class EditingReport:
    attribute_names: tuple[str, ...]
    accuracy: np.ndarray
    rec_psnr: float
    rec_ssim: float
    seam: float

    @property
    def mean_accuracy(self) -> float:
        return mean_accuracy(self.accuracy)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["attribute", "accuracy"])
            for name, acc in zip(self.attribute_names, self.accuracy):
                writer.writerow([name, f"{acc:.4f}"])
            writer.writerow(["mean", f"{self.mean_accuracy:.4f}"])
            writer.writerow(["rec_psnr", f"{self.rec_psnr:.3f}"])
            writer.writerow(["rec_ssim", f"{self.rec_ssim:.4f}"])
            writer.writerow(["seam_score", f"{self.seam:.4f}"])


def single_flip_targets(labels: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """One (source, target) pair per attribute with exactly that attribute inverted."""
    out = []
    for a in range(labels.shape[1]):
        tgt = labels.copy()
        tgt[:, a] = 1 - tgt[:, a]
        out.append((labels, tgt))
    return out


def evaluate_editing(g_global, g_local, dataset: ImageDataset, classifier: Discriminator, cfg: RunConfig,
                     max_images: int | None = None, zero_snapshot: bool = False) -> EditingReport:
    """Reconstruction quality, per-attribute editing accuracy and seam score of the full pipeline.

    Every image is edited once per attribute with that single flag flipped.
    """
    hr_all, y_all = dataset.tensors(hr=dataset.hr_images is not None)
    n = len(dataset) if max_images is None else min(max_images, len(dataset))
    hr_all, labels = hr_all[:n], y_all[:n].numpy().astype(np.int64)

    def edit(x, d):
        return edit_full_image(x, g_global, g_local, d, cfg, zero_snapshot=zero_snapshot)

    psnrs, ssims, seams = [], [], []
    zero = np.zeros(labels.shape[1], dtype=np.float32)
    for i in range(n):
        rec = edit(hr_all[i], zero)
        psnrs.append(psnr(rec, hr_all[i]))
        ssims.append(ssim(rec, hr_all[i]))
        seams.append(seam_score(rec.numpy(), cfg.patch_size))

    hits = np.zeros(labels.shape[1])
    for a, (src, tgt) in enumerate(single_flip_targets(labels)):
        edited = torch.stack([edit(hr_all[i], (tgt[i] - src[i]).astype(np.float32)) for i in range(n)])
        hits[a] = attr_accuracy(classifier, edited, tgt, src)[a]
    return EditingReport(tuple(dataset.attribute_names), hits, float(np.mean(psnrs)),
                         float(np.mean(ssims)), float(np.mean(seams)))


def evaluate_generator(g, dataset: ImageDataset, classifier: Discriminator,
                       max_images: int | None = None) -> EditingReport:
    """Single-stage variant of :func:`evaluate_editing` for a global generator."""
    x_all, y_all = dataset.tensors()
    n = len(dataset) if max_images is None else min(max_images, len(dataset))
    x, labels = x_all[:n], y_all[:n]
    with torch.no_grad():
        rec = g(x, torch.zeros_like(labels)).clamp(-1, 1)
        hits = np.zeros(labels.shape[1])
        for a, (src, tgt) in enumerate(single_flip_targets(labels.numpy().astype(np.int64))):
            edited = g(x, torch.as_tensor(tgt - src, dtype=x.dtype)).clamp(-1, 1)
            hits[a] = attr_accuracy(classifier, edited, tgt, src)[a]
    rec_np, x_np = rec.numpy(), x.numpy()
    return EditingReport(
        tuple(dataset.attribute_names), hits,
        float(np.mean([psnr(r, t) for r, t in zip(rec_np, x_np)])),
        float(np.mean([ssim(r, t) for r, t in zip(rec_np, x_np)])),
        float("nan"),
    )


def write_accuracy_csv(path, names: Sequence[str], accuracy: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["attribute", "accuracy"])
        for name, acc in zip(names, accuracy):
            writer.writerow([name, f"{acc:.4f}"])
        writer.writerow(["mean", f"{mean_accuracy(np.asarray(accuracy)):.4f}"])
