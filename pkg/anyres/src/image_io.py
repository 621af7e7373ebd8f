"""PNG/JPEG I/O and conversion between Pillow images and CHW tensors."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from PIL import Image

SUPPORTED_SUFFIXES = (".png", ".jpg", ".jpeg")


def load_image_u8(path: Path | str) -> torch.Tensor:
    """Decode an image to a ``3 x H x W`` uint8 tensor."""

    with Image.open(path) as img:
        array = np.asarray(img.convert("RGB"), dtype=np.uint8)
    return torch.from_numpy(array.transpose(2, 0, 1).copy())


def to_unit(pixels: torch.Tensor, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """8-bit pixels to ``[0, 1]``; the division runs in float64."""

    return (pixels.to(torch.float64) / 255.0).to(dtype)


def probe_size(path: Path | str) -> tuple[int, int]:
    """Fully decode the file and return ``(width, height)``."""

    with Image.open(path) as img:
        img.load()
        return img.size


def to_pil(img: torch.Tensor) -> Image.Image:
    """Quantize a ``3 x H x W`` tensor to 8-bit RGB, clamping to ``[0, 1]``."""

    if img.ndim != 3 or img.shape[0] != 3:
        raise ValueError(f"expected a 3 x H x W tensor, got {tuple(img.shape)}")
    array = img.detach().to("cpu", torch.float64).clamp(0.0, 1.0).numpy()
    array = np.rint(array.transpose(1, 2, 0) * 255.0).astype(np.uint8)
    return Image.fromarray(array)


def save_png(img: torch.Tensor | Image.Image, path: Path | str) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    pil = img if isinstance(img, Image.Image) else to_pil(img)
    # fixed compression settings so identical pixels give identical bytes
    pil.save(target, format="PNG", optimize=False, compress_level=6)
    return target
