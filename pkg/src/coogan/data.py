"""CelebA-style attribute files, image folders, and a procedural toy dataset.

The toy images are built from independent, visually separable factors so
that the ground-truth attributes of any rendered or edited image can be
read back with simple pixel rules.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch
from PIL import Image

from .core import ATTRIBUTES, AttributeVector, DataError, to_unit_range

TOY_ATTRIBUTES = ("Warm_Background", "Center_Disk", "Stripes", "Bright")
ATTR_FILENAME = "list_attr.txt"
IMAGE_DIRNAME = "images"


def parse_attr_file(path, selected_attributes: Sequence[str] | None = None) -> list[tuple[str, AttributeVector]]:
    """Read a CelebA ``list_attr`` file.

    Line 1 holds the image count, line 2 the attribute names, and each
    further line a filename followed by one ``1``/``-1`` per attribute.
    """
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if len(lines) < 2:
        raise DataError(f"{path}: missing header lines")
    try:
        count = int(lines[0].strip())
    except ValueError:
        raise DataError(f"{path}: first line must be the image count, got {lines[0]!r}") from None
    names = lines[1].split()
    selected = list(names if selected_attributes is None else selected_attributes)
    index = {n: i for i, n in enumerate(names)}
    unknown = [n for n in selected if n not in index]
    if unknown:
        raise DataError(f"{path}: unknown attribute(s) {unknown}")
    columns = [index[n] for n in selected]

    rows = []
    for lineno, line in enumerate(lines[2:], start=3):
        parts = line.split()
        if len(parts) != len(names) + 1:
            raise DataError(f"{path}:{lineno}: expected {len(names) + 1} fields, got {len(parts)}")
        flags = parts[1:]
        if any(f not in ("1", "-1") for f in flags):
            raise DataError(f"{path}:{lineno}: attribute values must be 1 or -1")
        values = tuple(1 if flags[c] == "1" else 0 for c in columns)
        rows.append((parts[0], AttributeVector(values, tuple(selected))))
    if len(rows) != count:
        raise DataError(f"{path}: header declares {count} images but {len(rows)} rows follow")
    return rows


def write_attr_file(path, rows: Sequence[tuple[str, AttributeVector]]) -> None:
    if not rows:
        raise DataError("cannot write an empty attribute file")
    names = rows[0][1].attribute_names
    out = [str(len(rows)), " ".join(names)]
    for fname, attrs in rows:
        if attrs.attribute_names != names:
            raise DataError(f"{fname}: attribute names differ from the first row")
        out.append(fname + " " + " ".join("1" if v else "-1" for v in attrs.values))
    Path(path).write_text("\n".join(out) + "\n")


# -- toy dataset -------------------------------------------------------------

DISK_COLOR = np.array([0.92, 0.95, 0.55])
COOL_BG = np.array([0.20, 0.32, 0.80])
WARM_BG = np.array([0.85, 0.42, 0.15])
STRIPE_DEPTH = 0.55
STRIPE_PERIODS = 5
DIM_FACTOR = 0.6
NOISE_STD = 0.025


def render_toy_image(flags: Sequence[int], size: int, rng: np.random.Generator) -> np.ndarray:
    """Render one toy image as float64 HWC in [0, 1]."""
    n_given = len(flags)
    flags = list(flags) + [0] * (4 - n_given)
    warm, disk, stripes, bright = flags[:4]
    v, u = np.meshgrid((np.arange(size) + 0.5) / size, (np.arange(size) + 0.5) / size, indexing="ij")

    base = (WARM_BG if warm else COOL_BG) + rng.uniform(-0.06, 0.06, 3)
    tilt = rng.uniform(-0.08, 0.08, 2)
    img = base[None, None, :] + (tilt[0] * (u - 0.5) + tilt[1] * (v - 0.5))[..., None]

    if stripes:
        phase = rng.uniform(0, 2 * np.pi)
        # smooth horizontal bands; the period does not divide common patch grids
        wave = 0.5 + 0.5 * np.sin(2 * np.pi * STRIPE_PERIODS * v + phase)
        img = img * (1.0 - STRIPE_DEPTH * wave)[..., None]

    if disk:
        radius = rng.uniform(0.18, 0.24)
        cx, cy = 0.5 + rng.uniform(-0.02, 0.02, 2)
        inside = (u - cx) ** 2 + (v - cy) ** 2 < radius ** 2
        color = DISK_COLOR + rng.uniform(-0.05, 0.05, 3)
        img = np.where(inside[..., None], color[None, None, :], img)

    if n_given > 3:
        img = img * (1.0 if bright else DIM_FACTOR)

    img = img + rng.normal(0, NOISE_STD, img.shape)
    return np.clip(img, 0.0, 1.0)


def toy_oracle(image: np.ndarray, n_attributes: int = 3) -> tuple[int, ...]:
    """Recover toy flags from an image using the rendering rules.

    ``image`` is float CHW in [-1, 1] or uint8 HWC.
    """
    img = np.asarray(image)
    if img.dtype == np.uint8:
        img = img.astype(np.float64) / 255.0
    else:
        img = (img.transpose(1, 2, 0) + 1.0) / 2.0
    size = img.shape[0]
    c = size // 2
    k = max(1, size // 32)
    center = img[c - k:c + k, c - k:c + k].reshape(-1, 3).mean(0)
    edge = img[:, : max(2, size // 8)]
    lum = edge.mean(axis=(1, 2))
    row_profile = edge.mean(axis=1)  # (rows, 3)
    bright_rows = row_profile[lum >= np.quantile(lum, 0.8)]
    bg = bright_rows.mean(0)

    flags = [
        int(bg[0] > bg[2]),
        int(center[1] > 0.65 * max(bg.max(), 1e-6) + 0.12 and center[1] > center[2] + 0.15),
        int(lum.max() - lum.min() > 0.18 * max(lum.max(), 1e-6) + 0.05),
        int(bg.max() > 0.62),
    ]
    return tuple(flags[:n_attributes])


def toy_attribute_names(n_attributes: int) -> tuple[str, ...]:
    if not 1 <= n_attributes <= len(TOY_ATTRIBUTES):
        raise ValueError(f"toy dataset supports 1..{len(TOY_ATTRIBUTES)} attributes, got {n_attributes}")
    return TOY_ATTRIBUTES[:n_attributes]


def make_toy_dataset(out_dir, n_images: int, size: int, n_attributes: int = 3, seed: int = 0) -> Path:
    """Render ``n_images`` PNGs plus a CelebA-format attribute file under ``out_dir``."""
    names = toy_attribute_names(n_attributes)
    out = Path(out_dir)
    (out / IMAGE_DIRNAME).mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 2, size=(n_images, n_attributes))
    rows = []
    for i in range(n_images):
        fname = f"{i:06d}.png"
        img = render_toy_image(labels[i], size, rng)
        Image.fromarray(np.rint(img * 255).astype(np.uint8)).save(out / IMAGE_DIRNAME / fname)
        rows.append((fname, AttributeVector(tuple(labels[i]), names)))
    write_attr_file(out / ATTR_FILENAME, rows)
    return out


# -- loading -----------------------------------------------------------------

def is_validation(filename: str) -> bool:
    """Deterministic 90/10 split keyed on the filename."""
    return int(hashlib.md5(filename.encode()).hexdigest(), 16) % 10 == 0


def _read_image(path: Path, size: int) -> np.ndarray:
    try:
        with Image.open(path) as im:
            arr = np.array(im.convert("RGB"), dtype=np.uint8)

    except FileNotFoundError:
        raise DataError(f"missing image {path}") from None
    except OSError as exc:
        raise DataError(f"unreadable image {path}: {exc}") from None
    if arr.shape[:2] == (size, size):
        return arr
    # same bilinear kernel as the inference-time resampling
    t = torch.from_numpy(arr).permute(2, 0, 1).float()[None]
    t = torch.nn.functional.interpolate(t, size=(size, size), mode="bilinear", align_corners=False)
    return t[0].permute(1, 2, 0).round().clamp(0, 255).to(torch.uint8).numpy()


@dataclass
class ImageDataset:
    """In-memory uint8 images with binary labels.

    ``images`` is (N, H, W, 3) uint8; ``hr_images`` the optional paired
    high-resolution copies.
    """

    filenames: list[str]
    images: np.ndarray
    labels: np.ndarray
    attribute_names: tuple[str, ...]
    hr_images: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.filenames)

    @property
    def size(self) -> int:
        return self.images.shape[1]

    def subset(self, index) -> "ImageDataset":
        index = np.asarray(index)
        if index.size == 0:
            index = index.astype(np.int64)
        return ImageDataset(
            [self.filenames[i] for i in index], self.images[index], self.labels[index],
            self.attribute_names, None if self.hr_images is None else self.hr_images[index],
        )

    def split(self) -> tuple["ImageDataset", "ImageDataset"]:
        val = np.array([is_validation(f) for f in self.filenames], dtype=bool)
        return self.subset(np.flatnonzero(~val)), self.subset(np.flatnonzero(val))

    def tensors(self, index=None, hr: bool = False) -> tuple[torch.Tensor, torch.Tensor]:
        """Normalized float images (B, 3, H, W) in [-1, 1] and float labels."""
        src = self.hr_images if hr else self.images
        if src is None:
            raise DataError("dataset has no paired high-resolution images")
        if index is None:
            index = slice(None)
        x = torch.from_numpy(src[index]).permute(0, 3, 1, 2).float() / 127.5 - 1.0
        return x, torch.from_numpy(self.labels[index]).float()

    def __iter__(self) -> Iterable:
        for i in range(len(self)):
            attrs = AttributeVector(tuple(self.labels[i]), self.attribute_names)
            lr = to_unit_range(self.images[i])
            if self.hr_images is None:
                yield lr, attrs
            else:
                yield to_unit_range(self.hr_images[i]), lr, attrs


def load_pairs(image_dir, attr_list, size: int, paired_hr_size: int | None = None,
               seed: int | None = 0, selected_attributes: Sequence[str] | None = None) -> ImageDataset:
    """Load and resize every labeled image.

    ``attr_list`` is a path to an attribute file or an already parsed list.
    Order is shuffled deterministically by ``seed`` (``None`` keeps file
    order). With ``paired_hr_size`` each item also carries an HR copy.
    """
    rows = attr_list if isinstance(attr_list, list) else parse_attr_file(attr_list, selected_attributes)
    if not rows:
        raise DataError("attribute list is empty")
    if seed is not None:
        order = np.random.default_rng(seed).permutation(len(rows))
        rows = [rows[i] for i in order]
    image_dir = Path(image_dir)
    images = np.stack([_read_image(image_dir / f, size) for f, _ in rows])
    hr = None
    if paired_hr_size is not None:
        hr = np.stack([_read_image(image_dir / f, paired_hr_size) for f, _ in rows])
    labels = np.array([a.values for _, a in rows], dtype=np.int64)
    return ImageDataset([f for f, _ in rows], images, labels, rows[0][1].attribute_names, hr)


def load_dataset_dir(root, size: int, paired_hr_size: int | None = None, seed: int | None = 0) -> ImageDataset:
    """Load a directory laid out as ``images/`` plus ``list_attr.txt``."""
    root = Path(root)
    attr = root / ATTR_FILENAME
    if not attr.exists():
        raise DataError(f"no {ATTR_FILENAME} under {root}")
    return load_pairs(root / IMAGE_DIRNAME, attr, size, paired_hr_size, seed)


__all__ = [
    "ATTRIBUTES", "TOY_ATTRIBUTES", "ImageDataset", "load_dataset_dir", "load_pairs",
    "make_toy_dataset", "parse_attr_file", "render_toy_image", "toy_oracle", "write_attr_file",
]
