"""Domain types shared across the package.

Images are channel-first float arrays normalized to [-1, 1]; attribute
labels are binary flags in a fixed, named order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

ATTRIBUTES: tuple[str, ...] = (
    "Bald",
    "Bangs",
    "Black_Hair",
    "Blond_Hair",
    "Brown_Hair",
    "Bushy_Eyebrows",
    "Eyeglasses",
    "Male",
    "Mouth_Slightly_Open",
    "Mustache",
    "No_Beard",
    "Pale_Skin",
    "Young",
)


class CooganError(Exception):
    """Base class for contract violations raised by this package."""


class DimensionError(CooganError, ValueError):
    pass


class TilingError(CooganError, ValueError):
    pass


class ConfigError(CooganError, ValueError):
    pass


class DataError(CooganError):
    pass


@dataclass(frozen=True)
class AttributeVector:
    values: tuple[int, ...]
    attribute_names: tuple[str, ...] = ATTRIBUTES

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(int(v) for v in self.values))
        object.__setattr__(self, "attribute_names", tuple(self.attribute_names))
        if len(self.values) != len(self.attribute_names):
            raise DimensionError(
                f"{len(self.values)} values for {len(self.attribute_names)} attribute names"
            )
        if any(v not in (0, 1) for v in self.values):
            raise ValueError(f"attribute flags must be 0 or 1, got {self.values}")

    def __len__(self) -> int:
        return len(self.values)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float32)


@dataclass(frozen=True)
class DiffVector:
    values: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(int(v) for v in self.values))
        if any(v not in (-1, 0, 1) for v in self.values):
            raise ValueError(f"difference flags must be in {{-1, 0, 1}}, got {self.values}")

    def __len__(self) -> int:
        return len(self.values)

    def __neg__(self) -> "DiffVector":
        return DiffVector(tuple(-v for v in self.values))

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float32)

    @classmethod
    def zeros(cls, n: int) -> "DiffVector":
        return cls((0,) * n)


@dataclass(frozen=True)
class ImageTensor:
    """A (C, H, W) image with a declared value range."""

    data: np.ndarray
    value_range: tuple[float, float] = (-1.0, 1.0)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise DimensionError(f"expected (C, H, W), got shape {data.shape}")
        if data.shape[0] not in (3, 6):
            raise DimensionError(f"expected 3 or 6 channels, got {data.shape[0]}")
        lo, hi = self.value_range
        if data.size and (data.min() < lo or data.max() > hi):
            raise ValueError(f"values outside declared range {self.value_range}")
        data = data.copy()
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape


@dataclass(frozen=True, order=True)
class PatchCoord:
    row: int
    col: int
    patch_size: int

    def __post_init__(self):
        if self.row < 0 or self.col < 0:
            raise TilingError(f"negative patch index ({self.row}, {self.col})")
        if self.patch_size < 1:
            raise TilingError(f"patch size must be positive, got {self.patch_size}")

    @property
    def slices(self) -> tuple[slice, slice]:
        s = self.patch_size
        return slice(self.row * s, (self.row + 1) * s), slice(self.col * s, (self.col + 1) * s)

    def fits(self, height: int, width: int) -> bool:
        s = self.patch_size
        return (self.row + 1) * s <= height and (self.col + 1) * s <= width


@dataclass
class RunConfig:
    global_size: int = 256
    patch_size: int = 128
    hr_size: int = 768
    n_attributes: int = 13
    seed: int = 0
    attribute_names: Sequence[str] = field(default_factory=lambda: ATTRIBUTES)

    def __post_init__(self):
        if self.hr_size % self.patch_size:
            raise ConfigError(
                f"hr_size {self.hr_size} is not divisible by patch_size {self.patch_size}"
            )
        if self.global_size > self.hr_size:
            raise ConfigError("global_size must not exceed hr_size")


def diff_vector(target: AttributeVector, source: AttributeVector) -> DiffVector:
    """Element-wise ``target - source``."""
    if len(target) != len(source) or target.attribute_names != source.attribute_names:
        raise DimensionError("target and source attribute vectors disagree in length or names")
    return DiffVector(tuple(t - s for t, s in zip(target.values, source.values)))


def broadcast_condition(d, height: int, width: int) -> np.ndarray:
    """Spread a difference vector into (N_c, height, width) constant planes."""
    values = d.as_array() if isinstance(d, DiffVector) else np.asarray(d, dtype=np.float32)
    return np.broadcast_to(values[:, None, None], (values.shape[0], height, width)).copy()


def to_unit_range(pixels: np.ndarray) -> np.ndarray:
    """uint8 HWC pixels -> float32 CHW in [-1, 1]."""
    arr = np.asarray(pixels, dtype=np.float32) / 127.5 - 1.0
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def to_uint8(image: np.ndarray) -> np.ndarray:
    """float CHW in [-1, 1] -> uint8 HWC."""
    arr = np.clip((np.asarray(image, dtype=np.float64) + 1.0) * 127.5, 0, 255)
    return np.rint(arr).astype(np.uint8).transpose(1, 2, 0)
