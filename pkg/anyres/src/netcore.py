"""Coordinate- and scale-conditioned patch generator and the discriminator."""

from __future__ import annotations

import contextlib
import logging
from dataclasses import dataclass
from typing import Iterator, List, Sequence

import torch
import torch.nn.functional as F
from torch import nn

from errors import InvalidArgumentError
from geometry import (
    FourierBasis,
    batch_patch_grids,
    cylindrical_encode,
    fourier_features,
    make_canonical_grid,
    make_spec,
    normalize_scale,
)
from models import GeneratorConfig, PatchSpec

LOG = logging.getLogger(__name__)

LRELU_SLOPE = 0.2
# Tiles per forward pass when assembling large images.
TILE_BATCH = 64


@contextlib.contextmanager
def _seeded(seed: int) -> Iterator[None]:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        yield


@dataclass(frozen=True)
class ModulationParams:
    """One ``(B, C)`` feature-scaling vector per synthesis layer."""

    layers: List[torch.Tensor]

    def __len__(self) -> int:
        return len(self.layers)


class MappingNetwork(nn.Module):
    """MLP with leaky ReLU between layers and a linear last layer."""

    def __init__(
        self, in_dim: int, out_dim: int, num_layers: int, normalize_input: bool
    ) -> None:
        super().__init__()
        self.in_dim = in_dim
        self.normalize_input = normalize_input
        dims = [in_dim] + [out_dim] * num_layers
        self.layers = nn.ModuleList(
            nn.Linear(dims[i], dims[i + 1]) for i in range(num_layers)
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.in_dim:
            raise InvalidArgumentError(
                f"mapping input has dimension {x.shape[-1]}, expected {self.in_dim}"
            )
        if self.normalize_input:
            x = x / x.norm(dim=-1, keepdim=True).clamp_min(1e-8)
        for index, layer in enumerate(self.layers):
            x = layer(x)
            if index < len(self.layers) - 1:
                x = F.leaky_relu(x, LRELU_SLOPE)
        return x


class Generator(nn.Module):
    """G(z, c, s): Fourier features of patch coordinates through modulated layers.

    Layer ``k`` scales its input features by
    ``m_k = (W_zk M_z(z) + b_zk) + (W_sk M_s(s_bar) + b_sk)`` before a
    ``kernel_size`` convolution without padding. The scale branch starts at
    zero so it leaves the latent branch untouched until it is trained.
    """

    def __init__(self, config: GeneratorConfig) -> None:
        super().__init__()
        self.config = config
        cfg = config
        in_features = 3 if cfg.coordinate_mapping == "cylindrical" else 2
        basis = FourierBasis.draw(
            cfg.fourier_channels, cfg.fourier_bandwidth, cfg.seed, in_features
        )
        self.register_buffer("fourier_B", basis.B)
        self.register_buffer("fourier_phi", basis.phi)
        with _seeded(cfg.seed):
            self.latent_mapping = MappingNetwork(
                cfg.z_dim, cfg.w_dim, cfg.mapping_layers, normalize_input=True
            )
            self.input_proj = nn.Conv2d(cfg.fourier_channels, cfg.channels, 1)
            self.convs = nn.ModuleList(
                nn.Conv2d(cfg.channels, cfg.channels, cfg.kernel_size)
                for _ in range(cfg.num_layers)
            )
            self.affine_z = nn.ModuleList(
                nn.Linear(cfg.w_dim, cfg.channels) for _ in range(cfg.num_layers)
            )
            self.to_rgb = nn.Conv2d(cfg.channels, 3, 1)
            for conv in self.convs:
                nn.init.kaiming_normal_(conv.weight, a=LRELU_SLOPE)
                nn.init.zeros_(conv.bias)
            for affine in self.affine_z:
                nn.init.ones_(affine.bias)
            if cfg.scale_conditioning:
                self.scale_mapping = MappingNetwork(
                    1, cfg.w_dim, cfg.mapping_layers, normalize_input=False
                )
                self.affine_s = nn.ModuleList(
                    nn.Linear(cfg.w_dim, cfg.channels) for _ in range(cfg.num_layers)
                )
            else:
                self.scale_mapping = None
                self.affine_s = None
        self.reset_scale_branch()
        self.set_scale_trainable(False)

    @property
    def basis(self) -> FourierBasis:
        return FourierBasis(B=self.fourier_B, phi=self.fourier_phi)

    def reset_scale_branch(self) -> None:
        """Zero ``W_s`` and ``b_s`` so the scale branch contributes nothing."""

        if self.affine_s is None:
            return
        with torch.no_grad():
            for affine in self.affine_s:
                affine.weight.zero_()
                affine.bias.zero_()

    def scale_parameters(self) -> List[nn.Parameter]:
        if self.scale_mapping is None:
            return []
        return list(self.scale_mapping.parameters()) + list(self.affine_s.parameters())

    def set_scale_trainable(self, enabled: bool) -> None:
        for param in self.scale_parameters():
            param.requires_grad_(enabled)

    def map_latent(self, z: torch.Tensor) -> torch.Tensor:
        if z.shape[-1] != self.config.z_dim:
            raise InvalidArgumentError(
                f"latent has dimension {z.shape[-1]}, expected {self.config.z_dim}"
            )
        return self.latent_mapping(z)

    def normalized_scale(self, s: float) -> float:
        return normalize_scale(s, self.config.p, self.config.s_max)

    def modulation_params(
        self, z: torch.Tensor, s_bar: torch.Tensor | float
    ) -> ModulationParams:
        w = self.map_latent(z)
        if z.ndim == 1:
            w = w[None]
        s_bar = torch.as_tensor(s_bar, dtype=w.dtype, device=w.device).reshape(-1, 1)
        layers = [affine(w) for affine in self.affine_z]
        if self.scale_mapping is not None:
            w_s = self.scale_mapping(s_bar)
            layers = [m + affine(w_s) for m, affine in zip(layers, self.affine_s)]
        return ModulationParams(layers=layers)

    def coordinate_features(self, coords: torch.Tensor) -> torch.Tensor:
        """``(B, H, W, 2)`` domain coordinates to ``(B, K, H, W)`` features."""

        if self.config.coordinate_mapping == "cylindrical":
            coords = cylindrical_encode(coords)
        features = fourier_features(coords, self.basis)
        dtype = self.input_proj.weight.dtype
        return features.permute(0, 3, 1, 2).to(dtype)

    def synthesize(
        self, features: torch.Tensor, modulation: ModulationParams
    ) -> torch.Tensor:
        x = self.input_proj(features)
        for conv, m in zip(self.convs, modulation.layers):
            x = F.leaky_relu(conv(x * m[:, :, None, None]), LRELU_SLOPE)
        return self.to_rgb(x)

    def forward(self, z: torch.Tensor, specs: Sequence[PatchSpec]) -> torch.Tensor:
        """Batch of ``(B, 3, p, p)`` patches, one spec per latent."""

        if z.ndim != 2 or z.shape[0] != len(specs):
            raise InvalidArgumentError(
                f"need one spec per latent, got z {tuple(z.shape)} "
                f"and {len(specs)} specs"
            )
        for spec in specs:
            if spec.p != self.config.p:
                raise InvalidArgumentError(
                    f"spec patch size {spec.p} differs from model p={self.config.p}"
                )
        coords = batch_patch_grids(specs, self.config.margin).to(z.device)
        s_bar = torch.tensor([self.normalized_scale(spec.s) for spec in specs])
        modulation = self.modulation_params(z, s_bar.to(z.device, z.dtype))
        return self.synthesize(self.coordinate_features(coords), modulation)

    def synthesize_patch(self, z: torch.Tensor, spec: PatchSpec) -> torch.Tensor:
        return self.forward(z.reshape(1, -1), [spec])[0]

    def synthesize_image(self, z: torch.Tensor, out_res: int) -> torch.Tensor:
        """Render the whole domain at ``out_res`` from p x p tiles at ``s = out_res``.

        Tiles start every ``p`` pixels; the last row/column of tiles is pulled
        back to ``out_res - p`` and overlaps its neighbour.
        """

        p = self.config.p
        if out_res < p:
            raise InvalidArgumentError(f"out_res={out_res} is smaller than p={p}")
        origins = list(range(0, out_res - p + 1, p))
        if origins[-1] + p < out_res:
            origins.append(out_res - p)
        placements = [(top, left) for top in origins for left in origins]
        specs = [
            make_spec(out_res, ((left + p / 2) / out_res, (top + p / 2) / out_res), p)
            for top, left in placements
        ]
        canvas = torch.zeros(3, out_res, out_res, dtype=z.dtype, device=z.device)
        for start in range(0, len(specs), TILE_BATCH):
            chunk = specs[start : start + TILE_BATCH]
            tiles = self.forward(z.reshape(1, -1).expand(len(chunk), -1), chunk)
            for (top, left), tile in zip(placements[start : start + TILE_BATCH], tiles):
                canvas[:, top : top + p, left : left + p] = tile
        return canvas

    def synthesize_monolithic(self, z: torch.Tensor, out_res: int) -> torch.Tensor:
        """Single forward pass over the full ``out_res`` lattice of ``[0, 1]^2``."""

        if out_res < self.config.p:
            raise InvalidArgumentError(
                f"out_res={out_res} is smaller than p={self.config.p}"
            )
        grid = make_canonical_grid(out_res, self.config.margin)
        coords = (grid.coords + 0.5)[None].to(z.device)
        s_bar = self.normalized_scale(out_res)
        modulation = self.modulation_params(z.reshape(1, -1), s_bar)
        return self.synthesize(self.coordinate_features(coords), modulation)[0]


class Discriminator(nn.Module):
    """Scale-blind p x p discriminator: conv blocks down to 4 x 4, linear head."""

    def __init__(self, config: GeneratorConfig) -> None:
        super().__init__()
        self.p = config.p
        channels = config.d_channels
        with _seeded(config.seed + 1):
            blocks: List[nn.Module] = [
                nn.Conv2d(3, channels, 3, padding=1),
                nn.LeakyReLU(LRELU_SLOPE),
            ]
            size = config.p
            width = channels
            while size > 4 and size % 2 == 0:
                out = min(width * 2, channels * 4)
                blocks += [
                    nn.Conv2d(width, out, 3, padding=1),
                    nn.LeakyReLU(LRELU_SLOPE),
                    nn.AvgPool2d(2),
                ]
                width, size = out, size // 2
            self.features = nn.Sequential(*blocks)
            self.head = nn.Sequential(
                nn.Flatten(),
                nn.Linear(width * size * size, channels),
                nn.LeakyReLU(LRELU_SLOPE),
                nn.Linear(channels, 1),
            )

    def forward(self, img: torch.Tensor) -> torch.Tensor:
        """Realness logit per image, shape ``(B,)``."""

        if img.ndim == 3:
            img = img[None]
        if tuple(img.shape[-3:]) != (3, self.p, self.p):
            raise InvalidArgumentError(
                f"discriminator expects (3, {self.p}, {self.p}) input, got "
                f"{tuple(img.shape[-3:])}"
            )
        return self.head(self.features(img)).squeeze(-1)


def build_networks(config: GeneratorConfig) -> tuple[Generator, Discriminator]:
    generator = Generator(config)
    discriminator = Discriminator(config)
    LOG.info(
        "Built generator (%d params) and discriminator (%d params) for p=%d",
        sum(p.numel() for p in generator.parameters()),
        sum(p.numel() for p in discriminator.parameters()),
        config.p,
    )
    return generator, discriminator


def discriminate(discriminator: Discriminator, img: torch.Tensor) -> torch.Tensor:
    return discriminator(img)
