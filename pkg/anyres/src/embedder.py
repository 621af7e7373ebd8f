"""Deterministic image embedder for Fréchet statistics."""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from resample import resample

EMBED_BATCH = 256


class RandomConvEmbedder(nn.Module):
    """Seeded random conv features at a fixed input size.

    Inputs of any size are Lanczos-resized to ``input_size`` first. Features
    are the spatial mean of the last stage, computed in float64.
    """

    def __init__(
        self, input_size: int = 64, features: int = 128, seed: int = 0
    ) -> None:
        super().__init__()
        self.input_size = input_size
        self.features = features
        self.seed = seed
        gen = torch.Generator().manual_seed(seed)
        widths = [3, 32, 64, features]
        convs = []
        for c_in, c_out in zip(widths[:-1], widths[1:]):
            conv = nn.Conv2d(c_in, c_out, 3, padding=1).double()
            with torch.no_grad():
                conv.weight.copy_(
                    torch.randn(conv.weight.shape, generator=gen, dtype=torch.float64)
                    * (2.0 / (c_in * 9)) ** 0.5
                )
                conv.bias.copy_(
                    torch.randn(c_out, generator=gen, dtype=torch.float64) * 0.1
                )
            convs.append(conv)
        self.convs = nn.ModuleList(convs)
        self.requires_grad_(False)

    @property
    def identifier(self) -> str:
        return f"randconv-{self.input_size}-{self.features}-s{self.seed}"

    def _forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x * 2.0 - 1.0
        for index, conv in enumerate(self.convs):
            x = F.leaky_relu(conv(x), 0.2)
            if index < len(self.convs) - 1:
                x = F.avg_pool2d(x, 2)
        return x.mean(dim=(2, 3))

    @torch.no_grad()
    def embed(self, images: torch.Tensor) -> np.ndarray:
        """``(B, 3, H, W)`` images to ``(B, features)`` float64 features."""

        if images.ndim == 3:
            images = images[None]
        x = images.detach().to("cpu", torch.float64)
        if tuple(x.shape[-2:]) != (self.input_size, self.input_size):
            x = resample(x, self.input_size, self.input_size)
        chunks = [
            self._forward(x[start : start + EMBED_BATCH])
            for start in range(0, x.shape[0], EMBED_BATCH)
        ]
        return torch.cat(chunks).numpy()
