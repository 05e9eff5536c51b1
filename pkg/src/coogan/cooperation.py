"""Global-to-local coupling: resampling, exact tiling and stitching."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor

from .core import DiffVector, DimensionError, ImageTensor, PatchCoord, RunConfig, TilingError


def _to_tensor(x) -> tuple[Tensor, str]:
    if isinstance(x, ImageTensor):
        return torch.from_numpy(np.array(x.data)), "image"
    if isinstance(x, np.ndarray):
        return torch.from_numpy(np.ascontiguousarray(x)), "numpy"
    return x, "tensor"


def _from_tensor(t: Tensor, kind: str):
    if kind == "image":
        return ImageTensor(t.numpy())
    if kind == "numpy":
        return t.numpy()
    return t


def _resize(x, size: int):
    t, kind = _to_tensor(x)
    single = t.dim() == 3
    if single:
        t = t.unsqueeze(0)
    if t.dim() != 4:
        raise DimensionError(f"expected (C, H, W) or (B, C, H, W), got {tuple(t.shape)}")
    out = F.interpolate(t, size=(size, size), mode="bilinear", align_corners=False)
    if single:
        out = out[0]
    if kind == "image":
        out = out.clamp(*x.value_range)
    return _from_tensor(out, kind)


def downsample(x, target_size: int):
    """Bilinear resample to ``target_size`` squared (no corner alignment)."""
    t, _ = _to_tensor(x)
    if target_size > t.shape[-1]:
        raise DimensionError(f"cannot downsample {t.shape[-1]} to larger size {target_size}")
    return _resize(x, target_size)


def upsample(x, target_size: int):
    t, _ = _to_tensor(x)
    if target_size < t.shape[-1]:
        raise DimensionError(f"cannot upsample {t.shape[-1]} to smaller size {target_size}")
    return _resize(x, target_size)


def _check_divisible(height: int, width: int, patch_size: int) -> None:
    if patch_size < 1 or height % patch_size or width % patch_size:
        raise TilingError(f"{height}x{width} image is not divisible into {patch_size}px patches")


def decompose(x, patch_size: int) -> list[tuple[PatchCoord, object]]:
    """Split a (C, H, W) image into non-overlapping patches in row-major order."""
    t, kind = _to_tensor(x)
    if t.dim() != 3:
        raise DimensionError(f"expected (C, H, W), got {tuple(t.shape)}")
    _, height, width = t.shape
    _check_divisible(height, width, patch_size)
    out = []
    for m in range(height // patch_size):
        for n in range(width // patch_size):
            coord = PatchCoord(m, n, patch_size)
            rows, cols = coord.slices
            patch = t[:, rows, cols].clone()
            out.append((coord, _from_tensor(patch, kind)))
    return out


def assemble(patches: Sequence[tuple[PatchCoord, object]], full_size: int):
    """Stitch coordinate-keyed patches into a ``full_size`` squared image."""
    if not patches:
        raise TilingError("no patches to assemble")
    size = patches[0][0].patch_size
    _check_divisible(full_size, full_size, size)
    per_side = full_size // size
    seen = set()
    canvas = None
    kind = "tensor"
    for coord, patch in patches:
        if coord.patch_size != size:
            raise TilingError("patches of different sizes cannot be assembled")
        if not coord.fits(full_size, full_size):
            raise TilingError(f"patch {coord} falls outside a {full_size}px image")
        key = (coord.row, coord.col)
        if key in seen:
            raise TilingError(f"duplicate patch at {key}")
        seen.add(key)
        t, kind = _to_tensor(patch)
        if tuple(t.shape[1:]) != (size, size):
            raise TilingError(f"patch at {key} has shape {tuple(t.shape)}, expected {size}x{size}")
        if canvas is None:
            canvas = torch.empty((t.shape[0], full_size, full_size), dtype=t.dtype)
        rows, cols = coord.slices
        canvas[:, rows, cols] = t
    if len(seen) != per_side * per_side:
        missing = sorted({(m, n) for m in range(per_side) for n in range(per_side)} - seen)
        raise TilingError(f"missing patches at {missing[:4]}{'...' if len(missing) > 4 else ''}")
    return _from_tensor(canvas, kind)


def to_patches(x: Tensor, patch_size: int) -> Tensor:
    """(B, C, H, W) -> (B * M * N, C, s, s), row-major per image."""
    b, c, h, w = x.shape
    _check_divisible(h, w, patch_size)
    m, n = h // patch_size, w // patch_size
    p = x.reshape(b, c, m, patch_size, n, patch_size).permute(0, 2, 4, 1, 3, 5)
    return p.reshape(b * m * n, c, patch_size, patch_size)


def from_patches(p: Tensor, full_size: int) -> Tensor:
    """Inverse of :func:`to_patches` for square images."""
    s = p.shape[-1]
    _check_divisible(full_size, full_size, s)
    m = full_size // s
    if p.shape[0] % (m * m):
        raise TilingError(f"{p.shape[0]} patches do not tile {full_size}px images")
    b = p.shape[0] // (m * m)
    c = p.shape[1]
    x = p.reshape(b, m, m, c, s, s).permute(0, 3, 1, 4, 2, 5)
    return x.reshape(b, c, full_size, full_size)


def local_input_batch(x_hr: Tensor, snapshot: Tensor, patch_size: int) -> Tensor:
    """Batched 6-channel patch inputs ``[hr patch, up-sampled snapshot patch]``."""
    size = x_hr.shape[-1]
    up = F.interpolate(snapshot, size=(size, size), mode="bilinear", align_corners=False)
    return to_patches(torch.cat([x_hr, up], dim=1), patch_size)


def make_local_inputs(x_hr, snapshot_lr, patch_size: int) -> list[tuple[PatchCoord, object]]:
    """Pair each HR patch with the same-coordinate patch of the up-sampled snapshot."""
    hr, kind = _to_tensor(x_hr)
    snap, _ = _to_tensor(snapshot_lr)
    if hr.dim() != 3 or hr.shape[1] != hr.shape[2]:
        raise DimensionError(f"HR image must be square (C, H, W), got {tuple(hr.shape)}")
    _check_divisible(hr.shape[1], hr.shape[2], patch_size)
    up = _resize(snap.to(hr.dtype), hr.shape[-1])
    hr_patches = decompose(hr, patch_size)
    snap_patches = dict(decompose(up, patch_size))
    out = []
    for coord, patch in hr_patches:
        joined = torch.cat([patch, snap_patches[coord]], dim=0)
        out.append((coord, _from_tensor(joined, "numpy" if kind != "tensor" else "tensor")))
    return out


GeneratorFn = Callable[[Tensor, Tensor], Tensor]


def edit_full_image(x_hr, g_global: GeneratorFn, g_local: GeneratorFn, d, cfg: RunConfig,
                    parallel: bool = False, zero_snapshot: bool = False,
                    patch_hook: Callable[[PatchCoord, Tensor], None] | None = None):
    """Edit an HR image through the global snapshot and sequential patch passes.

    ``g_global`` and ``g_local`` are called as ``g(batch, d_batch)``. In the
    default sequential mode only one patch is translated at a time and each
    6-channel patch input is built on demand.
    ``zero_snapshot`` blanks the snapshot channels (the no-global ablation).
    """
    hr, kind = _to_tensor(x_hr)
    if hr.dim() != 3 or tuple(hr.shape[1:]) != (cfg.hr_size, cfg.hr_size):
        raise DimensionError(f"expected (3, {cfg.hr_size}, {cfg.hr_size}) input, got {tuple(hr.shape)}")
    hr = hr.float()
    dv = torch.as_tensor(d.as_array() if isinstance(d, DiffVector) else np.asarray(d), dtype=hr.dtype)
    dv = dv.reshape(1, -1)

    with torch.no_grad():
        lr = downsample(hr, cfg.global_size).unsqueeze(0)
        snapshot = g_global(lr, dv)[0]
        del lr
        if zero_snapshot:
            snapshot = torch.zeros_like(snapshot)
        up = upsample(snapshot.to(hr.dtype), cfg.hr_size)
        del snapshot
        per_side = cfg.hr_size // cfg.patch_size
        coords = [PatchCoord(m, n, cfg.patch_size) for m in range(per_side) for n in range(per_side)]

        def run(coord):
            rows, cols = coord.slices
            # built on demand so only one 6-channel patch input is alive per pass
            patch = torch.cat([hr[:, rows, cols], up[:, rows, cols]], dim=0)
            if patch_hook is not None:
                patch_hook(coord, patch)
            return coord, g_local(patch.unsqueeze(0), dv)[0]

        canvas = torch.empty_like(hr)
        if parallel:
            with ThreadPoolExecutor() as pool:
                for coord, out in pool.map(run, coords):
                    canvas[(slice(None), *coord.slices)] = out
        else:
            for coord in coords:
                _, out = run(coord)
                canvas[(slice(None), *coord.slices)] = out
                del out
        result = canvas
    if kind == "image":
        return ImageTensor(result.clamp(-1, 1).numpy())
    if kind == "numpy":
        return result.numpy()
    return result
