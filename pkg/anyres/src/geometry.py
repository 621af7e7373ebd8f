"""Continuous coordinate domain, patch transforms and Fourier features."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Literal, Sequence, Tuple

import torch
from pydantic import ValidationError

from errors import InvalidArgumentError
from models import PatchSpec

Frame = Literal["canonical", "domain"]


@dataclass(frozen=True)
class CoordinateGrid:
    """A lattice of 2-D coordinates, shape ``(rows, cols, 2)`` as ``(x, y)``."""

    coords: torch.Tensor
    frame: Frame

    @property
    def size(self) -> Tuple[int, int]:
        return int(self.coords.shape[0]), int(self.coords.shape[1])


def make_spec(s: int, v: Sequence[float], p: int) -> PatchSpec:
    """Build a PatchSpec, reporting bound violations as invalid arguments."""

    try:
        return PatchSpec(s=int(s), v=(float(v[0]), float(v[1])), p=int(p))
    except ValidationError as exc:
        raise InvalidArgumentError(str(exc)) from exc


def make_canonical_grid(p: int, margin: int = 0) -> CoordinateGrid:
    """Pixel-center lattice of ``[-0.5, 0.5]^2``.

    Entry ``(i, j)`` is ``((j + 0.5) / p - 0.5, (i + 0.5) / p - 0.5)``. A
    positive ``margin`` extends the lattice by that many pixels on each side
    with the same spacing; valid convolutions consume it.
    """

    if p <= 0:
        raise InvalidArgumentError(f"grid size must be positive, got {p}")
    if margin < 0:
        raise InvalidArgumentError(f"margin must be non-negative, got {margin}")
    index = torch.arange(-margin, p + margin, dtype=torch.float64)
    axis = (index + 0.5) / p - 0.5
    ys, xs = torch.meshgrid(axis, axis, indexing="ij")
    return CoordinateGrid(coords=torch.stack((xs, ys), dim=-1), frame="canonical")


def patch_grid(spec: PatchSpec, margin: int = 0) -> CoordinateGrid:
    """Map the canonical grid through ``c -> (p/s) c + v``."""

    canonical = make_canonical_grid(spec.p, margin)
    center = torch.tensor(spec.v, dtype=torch.float64)
    coords = canonical.coords * (spec.p / spec.s) + center
    return CoordinateGrid(coords=coords, frame="domain")


def batch_patch_grids(specs: Iterable[PatchSpec], margin: int = 0) -> torch.Tensor:
    grids = [patch_grid(spec, margin).coords for spec in specs]
    if not grids:
        raise InvalidArgumentError("at least one patch spec is required")
    return torch.stack(grids)


@dataclass(frozen=True)
class FourierBasis:
    """Frozen random frequencies ``B`` (K x d) and phases ``phi`` (K)."""

    B: torch.Tensor
    phi: torch.Tensor

    @property
    def K(self) -> int:
        return int(self.B.shape[0])

    @property
    def in_features(self) -> int:
        return int(self.B.shape[1])

    @classmethod
    def draw(
        cls, channels: int, bandwidth: float, seed: int, in_features: int = 2
    ) -> "FourierBasis":
        """Isotropic Gaussian frequencies with row norms capped at ``bandwidth``."""

        if channels <= 0 or bandwidth <= 0:
            raise InvalidArgumentError("channels and bandwidth must be positive")
        gen = torch.Generator().manual_seed(int(seed))
        freqs = torch.randn(channels, in_features, generator=gen, dtype=torch.float64)
        freqs = freqs * (bandwidth / 2.0)
        norms = freqs.norm(dim=1, keepdim=True).clamp_min(1e-12)
        freqs = freqs * torch.clamp(bandwidth / norms, max=1.0)
        phases = torch.rand(channels, generator=gen, dtype=torch.float64) * 2 * math.pi
        return cls(B=freqs, phi=phases)


def fourier_features(coords: torch.Tensor, basis: FourierBasis) -> torch.Tensor:
    """``sin(2 pi B c + phi)`` over the trailing coordinate axis."""

    if coords.shape[-1] != basis.in_features:
        raise InvalidArgumentError(
            f"coordinates have {coords.shape[-1]} components, basis expects "
            f"{basis.in_features}"
        )
    B = basis.B.to(coords.dtype)
    phi = basis.phi.to(coords.dtype)
    return torch.sin(2 * math.pi * (coords @ B.T) + phi)


def fourier_embed(grid: CoordinateGrid, basis: FourierBasis) -> torch.Tensor:
    if grid.frame != "domain":
        raise InvalidArgumentError("fourier_embed expects a domain-frame grid")
    return fourier_features(grid.coords, basis)


def normalize_scale(s: float, p: int, s_max: int) -> float:
    """Affine remap of ``s`` from ``[p, s_max]`` to ``[-1, 1]``.

    Scales beyond ``s_max`` map above 1; extrapolation relies on that.
    """

    if s_max <= p:
        raise InvalidArgumentError(f"s_max={s_max} must exceed p={p}")
    if s < p:
        raise InvalidArgumentError(f"scale s={s} is smaller than p={p}")
    return 2.0 * (s - p) / (s_max - p) - 1.0


def cylindrical_encode(grid: CoordinateGrid | torch.Tensor) -> torch.Tensor:
    """Encode ``x`` as an angle on the unit circle, keep ``y``.

    ``x`` is read as ``theta / (2 pi) + 0.5``. It is wrapped into ``[0, 1)``
    first so that ``theta = pi`` and ``theta = -pi`` give identical triples.
    """

    coords = grid.coords if isinstance(grid, CoordinateGrid) else grid
    x = torch.remainder(coords[..., 0], 1.0)
    theta = 2 * math.pi * (x - 0.5)
    return torch.stack((torch.sin(theta), torch.cos(theta), coords[..., 1]), dim=-1)
