"""Band-limited resampling, crops and the warp into the base-image frame.

Images are channel-first tensors (``C x H x W``, optionally batched). All
resampling is separable: a weight matrix per axis, applied with two matrix
products, which keeps every operation a fixed linear map of the pixels and
therefore differentiable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import torch

from config import RuntimeConfig
from errors import InvalidArgumentError
from models import PatchSpec

LANCZOS_A = RuntimeConfig.from_env().lanczos_a


@dataclass(frozen=True)
class MaskedImage:
    pixels: torch.Tensor
    mask: torch.Tensor

    @property
    def coverage(self) -> int:
        return int(self.mask.sum().item())


def lanczos_kernel(x, a: int = LANCZOS_A):
    """``sinc(x) sinc(x / a)`` inside ``|x| < a``, zero outside."""

    if a < 1:
        raise InvalidArgumentError(f"Lanczos order must be >= 1, got {a}")
    x = np.asarray(x, dtype=np.float64)
    weights = np.where(np.abs(x) < a, np.sinc(x) * np.sinc(x / a), 0.0)
    return float(weights) if weights.ndim == 0 else weights


@lru_cache(maxsize=512)
def _lanczos_weights(
    n_in: int, n_out: int, start: float, step: float, a: int
) -> np.ndarray:
    """Row ``k`` samples the input at pixel position ``start + k * step``.

    Pixel ``i`` of the input has its center at position ``i``. When ``step``
    exceeds one (downsampling) the kernel is stretched by ``step`` so the
    output stays band-limited. Taps outside the input clamp to the edge and
    every row is renormalized to sum to one.
    """

    stretch = max(step, 1.0)
    support = a * stretch
    centers = start + step * np.arange(n_out, dtype=np.float64)
    width = int(math.ceil(2 * support)) + 2
    first = np.floor(centers - support).astype(np.int64)
    taps = first[:, None] + np.arange(width)[None, :]
    weights = lanczos_kernel((taps - centers[:, None]) / stretch, a)
    matrix = np.zeros((n_out, n_in), dtype=np.float64)
    rows = np.repeat(np.arange(n_out), width)
    np.add.at(matrix, (rows, np.clip(taps, 0, n_in - 1).ravel()), weights.ravel())
    matrix /= matrix.sum(axis=1, keepdims=True)
    matrix.setflags(write=False)
    return matrix


def _axis_weights(
    n_in: int, n_out: int, start: float, step: float, like: torch.Tensor, a: int
) -> torch.Tensor:
    matrix = _lanczos_weights(int(n_in), int(n_out), float(start), float(step), a)
    return torch.as_tensor(matrix, dtype=like.dtype, device=like.device)


def _check_image(img: torch.Tensor) -> None:
    if img.ndim < 2 or img.shape[-1] < 1 or img.shape[-2] < 1:
        raise InvalidArgumentError(
            f"expected a (..., H, W) image, got {tuple(img.shape)}"
        )


def resample_region(
    img: torch.Tensor,
    out_h: int,
    out_w: int,
    top: int,
    left: int,
    size_h: int,
    size_w: int,
    a: int = LANCZOS_A,
) -> torch.Tensor:
    """Rows/cols ``[top, top+size_h) x [left, left+size_w)`` of ``resample``."""

    _check_image(img)
    if out_h <= 0 or out_w <= 0:
        raise InvalidArgumentError(f"output size must be positive, got {out_h}x{out_w}")
    if top < 0 or left < 0 or top + size_h > out_h or left + size_w > out_w:
        raise InvalidArgumentError("requested region lies outside the resampled image")
    in_h, in_w = img.shape[-2], img.shape[-1]
    scale_h, scale_w = in_h / out_h, in_w / out_w
    rows = _axis_weights(in_h, size_h, (top + 0.5) * scale_h - 0.5, scale_h, img, a)
    cols = _axis_weights(in_w, size_w, (left + 0.5) * scale_w - 0.5, scale_w, img, a)
    return rows @ img @ cols.T


def resample(
    img: torch.Tensor, out_h: int, out_w: int, a: int = LANCZOS_A
) -> torch.Tensor:
    _check_image(img)
    if out_h <= 0 or out_w <= 0:
        raise InvalidArgumentError(f"output size must be positive, got {out_h}x{out_w}")
    if (out_h, out_w) == tuple(img.shape[-2:]):
        return img.clone()
    return resample_region(img, out_h, out_w, 0, 0, out_h, out_w, a)


def square_crop(img: torch.Tensor, top: int, left: int, size: int) -> torch.Tensor:
    _check_image(img)
    height, width = img.shape[-2], img.shape[-1]
    if size <= 0 or top < 0 or left < 0 or top + size > height or left + size > width:
        raise InvalidArgumentError(
            f"crop (top={top}, left={left}, size={size}) outside {height}x{width} image"
        )
    return img[..., top : top + size, left : left + size].clone()


def _patch_extent(spec: PatchSpec) -> tuple[float, float]:
    half = spec.p / (2.0 * spec.s)
    return spec.v[0] - half, spec.v[1] - half


def base_mask(spec: PatchSpec, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Base pixels whose centers fall inside the patch extent ``[lo, lo + p/s)``."""

    centers = (torch.arange(spec.p, dtype=torch.float64) + 0.5) / spec.p
    lo_x, lo_y = _patch_extent(spec)
    extent = spec.p / spec.s
    inside_x = (centers >= lo_x) & (centers < lo_x + extent)
    inside_y = (centers >= lo_y) & (centers < lo_y + extent)
    return (inside_y[:, None] & inside_x[None, :]).to(dtype)


def warp_to_base(
    patch: torch.Tensor, spec: PatchSpec, a: int = LANCZOS_A
) -> MaskedImage:
    """Project a patch into the p x p frame of the base image.

    The patch is Lanczos-resampled down by ``p/s`` onto the base pixels it
    covers. Uncovered pixels are zero and flagged zero in the mask.
    """

    _check_image(patch)
    p = spec.p
    if tuple(patch.shape[-2:]) != (p, p):
        raise InvalidArgumentError(
            f"patch has shape {tuple(patch.shape[-2:])}, expected {(p, p)}"
        )
    mask = base_mask(spec, patch.dtype).to(patch.device)
    if spec.is_global:
        return MaskedImage(pixels=patch.clone(), mask=mask)
    lo_x, lo_y = _patch_extent(spec)
    step = spec.s / p
    # base pixel J sits at patch position ((J + 0.5)/p - lo) * s - 0.5
    rows = _axis_weights(p, p, (0.5 / p - lo_y) * spec.s - 0.5, step, patch, a)
    cols = _axis_weights(p, p, (0.5 / p - lo_x) * spec.s - 0.5, step, patch, a)
    pixels = (rows @ patch @ cols.T) * mask
    return MaskedImage(pixels=pixels, mask=mask)


def warp_from_base(
    base: torch.Tensor, spec: PatchSpec, a: int = LANCZOS_A
) -> torch.Tensor:
    """Upsample the region of a base image covered by ``spec`` to patch size."""

    _check_image(base)
    p = spec.p
    if tuple(base.shape[-2:]) != (p, p):
        raise InvalidArgumentError(
            f"base image has shape {tuple(base.shape[-2:])}, expected {(p, p)}"
        )
    if spec.is_global:
        return base.clone()
    lo_x, lo_y = _patch_extent(spec)
    step = p / spec.s
    rows = _axis_weights(p, p, (lo_y + 0.5 / spec.s) * p - 0.5, step, base, a)
    cols = _axis_weights(p, p, (lo_x + 0.5 / spec.s) * p - 0.5, step, base, a)
    return rows @ base @ cols.T
