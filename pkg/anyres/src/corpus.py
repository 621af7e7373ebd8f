"""Procedural multi-resolution image corpus for tests and smoke runs."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import List, Sequence

import numpy as np
import torch

from config import CorpusConfig
from image_io import save_png

LOG = logging.getLogger(__name__)

KINDS = ("gradient", "circles", "checker")


def _unit_grid(height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    ys = (np.arange(height) + 0.5) / height
    xs = (np.arange(width) + 0.5) / width
    return np.meshgrid(xs, ys, indexing="xy")


def render_pattern(
    kind: str, height: int, width: int, rng: np.random.Generator
) -> np.ndarray:
    """Return an ``H x W x 3`` float array in ``[0, 1]``.

    Patterns are defined on the normalized domain, so a larger native size
    shows the same picture with finer detail.
    """

    xs, ys = _unit_grid(height, width)
    base = rng.uniform(0.1, 0.9, size=3)
    if kind == "gradient":
        angle = rng.uniform(0, 2 * np.pi)
        ramp = np.cos(angle) * xs + np.sin(angle) * ys
        ramp = (ramp - ramp.min()) / max(np.ptp(ramp), 1e-12)
        tint = rng.uniform(0.1, 0.9, size=3)
        image = base[None, None, :] * (1 - ramp[..., None]) + tint * ramp[..., None]
    elif kind == "circles":
        image = np.broadcast_to(base, (height, width, 3)).copy()
        for _ in range(int(rng.integers(2, 6))):
            cx, cy = rng.uniform(0.1, 0.9, size=2)
            radius = rng.uniform(0.05, 0.3)
            edge = np.sqrt((xs - cx) ** 2 + (ys - cy) ** 2) - radius
            # soft edge about one pixel wide at the native size
            alpha = np.clip(0.5 - edge * min(height, width), 0.0, 1.0)
            color = rng.uniform(0.0, 1.0, size=3)
            image = image * (1 - alpha[..., None]) + color * alpha[..., None]
    elif kind == "checker":
        cells = int(rng.integers(4, 17))
        phase = ((np.floor(xs * cells) + np.floor(ys * cells)) % 2)[..., None]
        other = rng.uniform(0.1, 0.9, size=3)
        image = base * phase + other * (1 - phase)
    else:
        raise ValueError(f"unknown pattern kind: {kind}")
    return np.clip(image, 0.0, 1.0)


def generate_corpus(
    directory: Path | str,
    count: int | None = None,
    sizes: Sequence[int] | None = None,
    config: CorpusConfig | None = None,
    corrupt: int = 0,
    square: bool = False,
) -> List[Path]:
    """Write ``count`` PNG images at native sizes in ``[min_size, max_size]``.

    ``sizes`` overrides the random native sizes (one image per entry).
    ``corrupt`` extra files are written as truncated PNG streams.
    """

    cfg = config or CorpusConfig()
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    native = list(sizes) if sizes is not None else [
        int(rng.integers(cfg.min_size, cfg.max_size + 1))
        for _ in range(count if count is not None else cfg.count)
    ]
    written: List[Path] = []
    for index, size in enumerate(native):
        kind = KINDS[index % len(KINDS)]
        height = size
        width = size if square else int(size + rng.integers(0, size // 4 + 1))
        pixels = render_pattern(kind, height, width, rng)
        tensor = torch.from_numpy(pixels.transpose(2, 0, 1).copy())
        written.append(save_png(tensor, root / f"{index:05d}_{kind}.png"))
    for index in range(corrupt):
        target = root / f"corrupt_{index:02d}.png"
        data = written[0].read_bytes() if written else b"\x89PNG\r\n\x1a\n"
        target.write_bytes(data[: max(len(data) // 3, 16)])
        written.append(target)
    LOG.info("Wrote %d corpus images (%d corrupt) to %s", len(written), corrupt, root)
    return written
